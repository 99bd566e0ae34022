"""Tests for the perturbation tensor, its restriction and the perturbed second fundamental form."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from fbmcf.barrier import BarrierSurface
from fbmcf.flow import evaluate_state
from fbmcf.mesh import make_cap
from fbmcf.oracles import make_case
from fbmcf.perturbation import boundary_decomposition, eval_P, eval_P_sigma, identity_suite

EX, EY, EZ = np.eye(3)

vectors = arrays(np.float64, 3, elements=st.floats(-2, 2, allow_nan=False))


def random_args(rng, n):
    return [rng.normal(size=(n, 3)) for _ in range(5)]


def max_aring(barrier, n=500, seed=0):
    """Largest sampled norm of the trace-free barrier second fundamental form."""
    p, _ = barrier.closest_point(barrier.sample(n, seed))
    return max(float(np.linalg.norm(barrier.surface_frame(q).Aring_S)) for q in p)


class TestEvalP:
    @pytest.mark.parametrize("barrier", [BarrierSurface.plane(), BarrierSurface.sphere(1.0),
                                         BarrierSurface.sphere(2.0, center=(1, 0, 0), orientation_sign=-1)])
    def test_umbilic_vanishes(self, barrier):
        rng = np.random.default_rng(0)
        x = barrier.sample(200, rng) + 0.05 * rng.normal(size=(200, 3))
        assert np.max(np.abs(eval_P(barrier, x, *random_args(rng, 200)))) <= 1e-12

    def test_cylinder_value(self):
        cyl = BarrierSurface.cylinder(1.0)
        assert eval_P(cyl, [1.0, 0.0, 0.0], EX, EY, EY, EZ, EZ) == pytest.approx(1.0, abs=1e-14)

    def test_repeated_tangent(self):
        cyl = BarrierSurface.cylinder(1.0)
        assert eval_P(cyl, [1.0, 0.0, 0.0], EX, EY, EY, EY, EY) == pytest.approx(0.0, abs=1e-14)

    def test_outside_support(self):
        cyl = BarrierSurface.cylinder(2.0)
        # support half-width 1/(2K) = 1
        assert eval_P(cyl, [0.5, 0.0, 0.0], EX, EY, EY, EZ, EZ) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(vectors, vectors, vectors, vectors, vectors, st.floats(-0.5, 0.5))
    def test_symmetric_in_first_pair(self, U, V, X, Y, Z, off):
        ell = BarrierSurface.ellipsoid((2.0, 1.5, 1.0))
        x = np.array([0.0, 1.5 + 0.2 * off, 0.0])
        assert eval_P(ell, x, U, V, X, Y, Z) == eval_P(ell, x, V, U, X, Y, Z)


class TestPSigma:
    def test_plane_barrier_zero(self):
        m = make_cap("hemisphere", n_rings=8, amplitude=0.1)
        s = evaluate_state(m, BarrierSurface.plane(normal=(0, 0, -1)))
        assert np.all(eval_P_sigma(s.geometry, m.positions, s.barrier) == 0.0)

    def test_boundary_split_on_cylinder(self):
        c = make_case("CAP_CYLINDER", n_rings=16)
        s = evaluate_state(c.mesh, c.barrier)
        p11, p22, p12h = boundary_decomposition(s.geometry, s.perturbed, s.frames)
        assert p11.max() <= 1e-3
        assert p22.max() <= 1e-3
        assert p12h.max() <= 1e-3

    def test_far_vertices_zero(self):
        cyl = BarrierSurface.cylinder(2.0)
        m = make_cap("cylinder_cap", n_rings=8, radius=0.2, barrier_radius=2.0)
        # move the cap so its top sits deep inside the cylinder, outside the support
        P = m.positions.copy()
        top = np.argmin(P[:, 0])
        P[top, 0] = 0.5
        s = evaluate_state(m.with_positions(P), cyl)
        assert np.all(eval_P_sigma(s.geometry, s.mesh.positions, cyl)[top] == 0.0)

    def test_c0_bound(self):
        c = make_case("CAP_CYLINDER", n_rings=12)
        s = evaluate_state(c.mesh, c.barrier)
        bound = 4 * max_aring(c.barrier)
        assert np.max(np.linalg.norm(s.perturbed.P_sigma, axis=(1, 2))) <= bound + 1e-8


class TestPerturbedSFF:
    @pytest.mark.parametrize("barrier,kind,kw", [
        (BarrierSurface.plane(normal=(0, 0, -1)), "hemisphere", dict(amplitude=0.1)),
        (BarrierSurface.sphere(1.0), "sphere_cap", dict(radius=0.5)),
    ])
    def test_umbilic_barrier_exact(self, barrier, kind, kw):
        s = evaluate_state(make_cap(kind, n_rings=10, **kw), barrier)
        # plane: P is exactly zero; sphere: zero up to roundoff in A_S - g_S / R
        assert np.max(np.abs(s.perturbed.A_tilde - s.geometry.A)) <= 1e-12
        if barrier.kind == "plane":
            assert np.array_equal(s.perturbed.A_tilde, s.geometry.A)

    def test_hemisphere_Htilde(self):
        c = make_case("HEMI_PLANE", n_rings=16)
        s = evaluate_state(c.mesh, c.barrier)
        assert np.array_equal(s.perturbed.H_tilde, s.geometry.H)
        assert_allclose(s.perturbed.H_tilde, 2.0, atol=0.05)

    def test_trace_and_symmetry(self):
        c = make_case("CAP_CYLINDER", n_rings=10)
        p = evaluate_state(c.mesh, c.barrier).perturbed
        assert_allclose(p.A_tilde[:, 0, 0] + p.A_tilde[:, 1, 1], p.H_tilde, atol=1e-12)
        assert np.array_equal(p.P_sigma, np.swapaxes(p.P_sigma, 1, 2))

    def test_h12_tilde_refines(self):
        hs, res = [], []
        for n in (8, 16, 32):
            c = make_case("CAP_CYLINDER", n_rings=n)
            s = evaluate_state(c.mesh, c.barrier)
            fr = s.frames
            E = s.geometry.tangent_basis[fr.vertices]
            nc = np.einsum("nai,ni->na", E, fr.N)
            tc = np.einsum("nai,ni->na", E, fr.T)
            h12t = np.einsum("na,nab,nb->n", nc, s.perturbed.A_tilde[fr.vertices], tc)
            hs.append(c.mesh.edge_lengths().max())
            res.append(np.abs(h12t).max())
        orders = np.diff(np.log(res)) / np.diff(np.log(hs))
        print(f"boundary |h12~| {res}, orders {orders}")
        assert np.all(orders >= 1.0)


class TestIdentitySuite:
    def test_sphere(self):
        r = identity_suite(BarrierSurface.sphere(1.0), 100, seed=0)
        assert r.n_points == 100
        for k, v in r.as_dict().items():
            if k != "n_points":
                assert v <= 1e-12, k

    def test_small_step_is_roundoff_limited(self):
        r = identity_suite(BarrierSurface.cylinder(1.0), 100, seed=0, fd_step=1e-4)
        assert r.normal_derivative <= 1e-6

    @pytest.mark.parametrize("barrier", [BarrierSurface.cylinder(1.0), BarrierSurface.ellipsoid((2.0, 1.5, 1.0))])
    def test_nonumbilic(self, barrier):
        r = identity_suite(barrier, 100, seed=0)
        for v in (r.vanish_normal_slot, r.vanish_tangent_pair, r.vanish_repeated, r.vanish_normal_pair):
            assert v <= 1e-10
        assert r.normal_derivative <= 1e-6
        assert r.symmetry == 0.0
        assert r.c0_bound_violation <= 1e-8

    def test_deterministic(self):
        cyl = BarrierSurface.cylinder(1.0)
        assert identity_suite(cyl, 20, seed=5) == identity_suite(cyl, 20, seed=5)
