"""Tests for the closed-form hemisphere solution and the named cases."""
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from fbmcf.errors import InvalidParams, PastSingularTime
from fbmcf.flow import evaluate_state
from fbmcf.oracles import CASE_NAMES, DEFAULT_RINGS, HemisphereSolution, canonical_cases, hemisphere_exact, make_case


class TestHemisphereExact:
    def test_initial(self):
        r, H, area, rem = hemisphere_exact(1.0, 0.0)
        assert (r, H) == (1.0, 2.0)
        assert area == pytest.approx(2 * math.pi)
        assert rem == 0.25

    def test_t016(self):
        r, H, _, rem = hemisphere_exact(1.0, 0.16)
        assert r == pytest.approx(0.6, abs=1e-15)
        assert H == pytest.approx(10 / 3, abs=1e-14)
        assert rem == pytest.approx(0.09)

    @pytest.mark.parametrize("t", [0.25, 0.3, -1e-9])
    def test_past_singular_time(self, t):
        with pytest.raises(PastSingularTime):
            hemisphere_exact(1.0, t)

    def test_invalid_radius(self):
        with pytest.raises(InvalidParams):
            HemisphereSolution(0.0)


class TestHemisphereSolution:
    def test_closed_form_solves_ode(self):
        r0, t = sp.symbols("r0 t", positive=True)
        r = sp.sqrt(r0 ** 2 - 4 * t)
        assert sp.simplify(sp.diff(r, t) + 2 / r) == 0
        assert sp.simplify(r.subs(t, 0) - r0) == 0
        assert sp.limit(r, t, r0 ** 2 / 4, dir="-") == 0

    @given(st.floats(0.1, 5.0), st.floats(0.0, 0.999))
    def test_invariants(self, r0, frac):
        sol = HemisphereSolution(r0)
        t = frac * sol.T
        assert sol.H(t) * sol.r(t) == pytest.approx(2.0, rel=1e-14)
        assert sol.area(t) == pytest.approx(2 * math.pi * sol.r(t) ** 2, rel=1e-14)
        assert sol.T == pytest.approx(r0 ** 2 / 4)

    def test_numerical_integration(self):
        sol = HemisphereSolution(1.0)
        ts = np.linspace(0, 0.2, 11)
        num = solve_ivp(lambda t, r: -2 / r, (0, 0.2), [1.0], method="DOP853", t_eval=ts, rtol=1e-13, atol=1e-14)
        assert np.max(np.abs(num.y[0] - [sol.r(t) for t in ts])) <= 1e-8


class TestCases:
    def test_names(self):
        cases = canonical_cases(n_rings=6)
        assert [c.name for c in cases] == list(CASE_NAMES)
        assert set(CASE_NAMES) >= {"HEMI_PLANE", "HEMI_PLANE_PERTURBED", "CAP_SPHERE", "CAP_CYLINDER"}
        for c in cases:
            assert len(c.mesh.adjacency.loops) == 1
            assert np.max(np.abs(c.barrier.phi(c.mesh.positions[c.mesh.boundary_vertices]))) <= 1e-10

    def test_default_rings(self):
        c = make_case("hemi_plane")
        assert c.params["n_rings"] == DEFAULT_RINGS["HEMI_PLANE"]
        assert c.mesh.n_vertices >= 2562

    def test_unknown(self):
        with pytest.raises(InvalidParams):
            make_case("TORUS")

    def test_hemi_plane_umbilic(self):
        # max |Aring|/H is O(h^2) fit error; below 1e-3 from 48 rings on
        c = make_case("HEMI_PLANE", n_rings=48)
        g = evaluate_state(c.mesh, c.barrier).geometry
        assert np.max(g.Aring_norm / g.H) <= 1e-3

    def test_perturbed_amplitude(self):
        c = make_case("HEMI_PLANE_PERTURBED", n_rings=8)
        assert c.params["amplitude"] == 0.05
        assert make_case("HEMI_PLANE_PERTURBED", n_rings=8, amplitude=0.1).params["amplitude"] == 0.1
        r = np.linalg.norm(c.mesh.positions, axis=1)
        assert 0.94 <= r.min() < 1.0 < r.max() <= 1.06

    def test_cap_sphere_contact(self):
        c = make_case("CAP_SPHERE")
        rho = c.params["cap_radius"]
        cc = np.array([0.0, 0.0, math.hypot(1.0, rho)])
        P = c.mesh.positions[c.mesh.boundary_vertices]
        nu_cap = (P - cc) / rho
        assert np.max(np.abs(np.sum(nu_cap * c.barrier.normal(P), axis=1))) <= 1e-8

    def test_cap_cylinder_convex(self):
        c = make_case("CAP_CYLINDER")
        g = evaluate_state(c.mesh, c.barrier).geometry
        assert g.kappa1.min() >= 4.0
        assert c.barrier.K == pytest.approx(0.5)
