"""Tests for the monitors: convexity, pinching, gradient test, boundary identities, run analysis."""
import math
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fbmcf.barrier import BarrierSurface
from fbmcf.diagnostics import (
    CSV_COLUMNS,
    DiagnosticsRecord,
    area_balance,
    blowup_estimate,
    boundary_residuals,
    convexity_margin,
    format_csv_value,
    gradient_test,
    pinching_f,
    rescale_compare,
    zeta_from_distance,
    zeta_gradient_max,
    zeta_in_bracket,
)
from fbmcf.errors import FitFailed, InsufficientRecords, NonpositiveHtilde, NonpositiveRemaining
from fbmcf.flow import FlowConfig, evaluate_state, run
from fbmcf.mesh import TriMesh, make_cap, polar_grid
from fbmcf.oracles import HemisphereSolution, make_case

PLANE_DOWN = BarrierSurface.plane(normal=(0.0, 0.0, -1.0))
E2 = math.exp(2)


def record(t, area, int_H2, H_max=1.0):
    base = {f.name: 0.0 for f in fields(DiagnosticsRecord) if f.name in CSV_COLUMNS}
    base.update(t=t, area=area, H_max=H_max)
    return DiagnosticsRecord(**base, int_H2=int_H2)


def hemisphere_state(r=1.0, n_rings=32):
    return evaluate_state(make_cap("hemisphere", n_rings=n_rings, radius=r), PLANE_DOWN)


def flat_disk_state():
    s, ang, faces, _ = polar_grid(6)
    P = np.stack([s * np.cos(ang), s * np.sin(ang), np.zeros_like(s)], 1)
    return evaluate_state(TriMesh(P, faces), BarrierSurface.cylinder(1.0))


@pytest.fixture(scope="module")
def hemi():
    return hemisphere_state()


@pytest.fixture(scope="module")
def hemi_fine():
    return hemisphere_state(n_rings=128)


class TestConvexity:
    def test_hemisphere(self, hemi):
        cm = convexity_margin(hemi, D=0.0)
        assert cm.lambda_min_A == pytest.approx(1.0, abs=0.05)
        assert cm.lambda_min_Atilde == pytest.approx(cm.lambda_min_A, abs=1e-12)
        assert cm.A_ok and cm.Atilde_ok

    def test_flat_disk(self):
        cm = convexity_margin(flat_disk_state())
        assert cm.lambda_min_A == pytest.approx(0.0, abs=1e-8)

    def test_shrunk_hemisphere(self):
        r = HemisphereSolution(1.0).r(0.16)
        cm = convexity_margin(hemisphere_state(r))
        assert cm.lambda_min_A == pytest.approx(1 / 0.6, rel=0.05)

    def test_flags_against_D(self, hemi):
        cm = convexity_margin(hemi, D=2.5)
        # D/3 = 0.83 < 1 but D/2 = 1.25 > 1
        assert cm.A_ok and not cm.Atilde_ok


class TestPinching:
    def test_umbilic_hemisphere(self, hemi):
        assert 0.0 <= pinching_f(hemi, 0.1) <= 1e-3

    def test_nonpositive(self):
        m = make_cap("hemisphere", n_rings=8)
        flipped = evaluate_state(TriMesh(m.positions, m.faces[:, ::-1]), PLANE_DOWN)
        with pytest.raises(NonpositiveHtilde) as info:
            pinching_f(flipped, 0.1)
        assert info.value.vertex >= 0


class TestZeta:
    def test_boundary_value(self):
        assert zeta_from_distance(np.array([0.0]), 0.05)[0] == 0.05

    @given(st.floats(-10, 10), st.floats(1e-3, 0.99))
    def test_bracket(self, d, eta):
        z = zeta_from_distance(np.array([d]), eta)
        assert zeta_in_bracket(z, eta)

    def test_far_field(self):
        assert_allclose(zeta_from_distance(np.array([-0.5, 0.5]), 0.05), 0.05)

    @pytest.mark.parametrize("barrier", [BarrierSurface.cylinder(2.0), BarrierSurface.sphere(1.0), PLANE_DOWN])
    def test_gradient_bound(self, barrier):
        rng = np.random.default_rng(1)
        p = barrier.sample(200, rng)
        x = p + rng.uniform(-0.12, 0.12, size=(200, 1)) * barrier.normal(p)
        assert zeta_gradient_max(barrier, x, 0.05) <= 5 * E2 + 1e-6

    def test_on_boundary_vertices(self):
        c = make_case("CAP_CYLINDER", n_rings=8)
        s = evaluate_state(c.mesh, c.barrier)
        gr = gradient_test(s, 0.05, 1.0)
        assert_allclose(gr.zeta[s.mesh.boundary_vertices], 0.05, rtol=0, atol=1e-12)
        assert gr.zeta_ok


class TestGradient:
    def test_exact_hemisphere(self, hemi, hemi_fine):
        assert gradient_test(hemi, 0.05, C_grad=1.0).grad_H4_max <= 1e-4
        # grad H is pure fit noise here and shrinks like h^2
        assert gradient_test(hemi_fine, 0.05, C_grad=1.0).grad_ratio_max <= 1e-4

    def test_perturbed_positive(self):
        c = make_case("HEMI_PLANE_PERTURBED", n_rings=16)
        gr = gradient_test(evaluate_state(c.mesh, c.barrier), 0.05, C_grad=0.0)
        assert gr.grad_ratio_max > 1e-3
        assert np.isfinite(gr.g_max)


class TestBoundaryResiduals:
    def test_hemisphere_moderate_resolution(self, hemi_fine):
        br = boundary_residuals(hemi_fine)
        H = float(np.mean(hemi_fine.geometry.H))
        assert max(br.as_tuple()) <= 1e-2 * H

    def test_hemisphere_refines(self):
        hs, res = [], []
        for n in (16, 32, 64):
            s = hemisphere_state(n_rings=n)
            hs.append(s.mesh.edge_lengths().max())
            res.append(boundary_residuals(s).as_tuple()[:4])
        order = np.polyfit(np.log(hs), np.log(np.array(res)), 1)[0]
        print(f"hemisphere boundary residual orders {order}")
        assert np.all(order >= 1.0)
        assert boundary_residuals(s).res_P12 <= 1e-12

    def test_sphere_cap_NH_after_short_flow(self):
        hs, res = [], []
        for n in (8, 16, 32):
            c = make_case("CAP_SPHERE", n_rings=n)
            r = run(FlowConfig(t_end=0.001, record_every=10 ** 6), c.mesh, c.barrier)
            hs.append(c.mesh.edge_lengths().max())
            res.append(boundary_residuals(r.final_state).res_NH)
        orders = np.diff(np.log(res)) / np.diff(np.log(hs))
        print(f"sphere cap res_NH {res}, orders {orders}")
        assert np.all(orders >= 1.0)

    def test_nonnegative(self):
        c = make_case("CAP_CYLINDER", n_rings=8)
        br = boundary_residuals(evaluate_state(c.mesh, c.barrier))
        assert all(v >= 0 for v in br.as_tuple())
        assert set(br.per_vertex) >= {"vertices", "NH", "h11", "h22", "NAtilde", "P12"}


class TestAreaBalance:
    def test_closed_form_hemisphere(self):
        # A(t) = 2 pi (1 - 4t) and int H^2 = (2/r)^2 * 2 pi r^2 = 8 pi
        sol = HemisphereSolution(1.0)
        recs = [record(t, sol.area(t), sol.H(t) ** 2 * sol.area(t)) for t in np.linspace(0, 0.2, 21)]
        assert area_balance(recs) <= 1e-12

    def test_static(self):
        assert area_balance([record(0.0, 1.0, 0.0), record(1.0, 1.0, 0.0)]) == 0.0

    def test_single(self):
        with pytest.raises(InsufficientRecords):
            area_balance([record(0.0, 1.0, 0.0)])


class TestBlowup:
    @pytest.mark.parametrize("r0", [1.0, 0.5])
    def test_closed_form(self, r0):
        sol = HemisphereSolution(r0)
        t = np.linspace(0, 0.8 * sol.T, 40)
        est = blowup_estimate(sol.H(0), t, [sol.H(ti) for ti in t])
        assert est.paper_bound == pytest.approx(r0 ** 2 / 4)
        assert est.fitted_T == pytest.approx(r0 ** 2 / 4, rel=1e-10)
        assert est.c == pytest.approx(1.0, rel=1e-10)
        assert est.within_bound

    def test_flat(self):
        with pytest.raises(FitFailed):
            blowup_estimate(1.0, np.linspace(0, 1, 20), np.ones(20))

    def test_too_few(self):
        with pytest.raises(FitFailed):
            blowup_estimate(2.0, [0.0, 0.1], [2.0, 3.0])

    def test_nonpositive_H0(self):
        with pytest.raises(FitFailed):
            blowup_estimate(0.0, np.linspace(0, 1, 20), np.linspace(1, 2, 20))


class TestRescale:
    def test_exact_hemisphere(self):
        sol = HemisphereSolution(1.0)
        t = 0.16
        s = hemisphere_state(sol.r(t))
        rep = rescale_compare(s.mesh, PLANE_DOWN, t, sol.T, n_samples=10000, seed=0)
        h = s.mesh.edge_lengths().max() * rep.scale
        assert rep.scale == pytest.approx(1 / sol.r(t))
        assert rep.hausdorff <= 2 * h
        assert rep.umbilic_ratio_max <= 5e-3
        assert_allclose(rep.center, 0.0, atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-np.pi, np.pi), st.floats(-3, 3), st.floats(-3, 3))
    def test_rigid_motion_invariant(self, angle, dx, dy):
        s = hemisphere_state(0.6, n_rings=8)
        base = rescale_compare(s.mesh, PLANE_DOWN, 0.16, 0.25, n_samples=2000, seed=1)
        c, si = np.cos(angle), np.sin(angle)
        R = np.array([[c, -si, 0], [si, c, 0], [0, 0, 1]])
        moved = s.mesh.with_positions(s.mesh.positions @ R.T + [dx, dy, 0])
        rep = rescale_compare(moved, PLANE_DOWN, 0.16, 0.25, n_samples=2000, seed=1)
        assert rep.forward == pytest.approx(base.forward, abs=1e-9)

    def test_nonpositive_remaining(self, hemi):
        with pytest.raises(NonpositiveRemaining):
            rescale_compare(hemi.mesh, PLANE_DOWN, 0.3, 0.25)


class TestRecordFormat:
    def test_columns(self):
        assert CSV_COLUMNS == (
            "t", "dt", "area", "boundary_length", "H_min", "H_max", "maxA", "lambda_min_A",
            "lambda_min_Atilde", "pinch_margin", "f_max", "grad_ratio_max", "res_NH", "res_h11",
            "res_h22", "res_NAtilde", "res_P12", "umbilic_ratio_max", "min_angle",
        )
        assert len(record(0.0, 1.0, 0.0).csv_values()) == len(CSV_COLUMNS)

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_round_trip(self, v):
        assert float(format_csv_value(v)) == v

    def test_special(self):
        assert format_csv_value(float("nan")) == "nan"
        assert format_csv_value(float("-inf")) == "-inf"
