"""Tests for velocity, time step policy, stepping, projection and the run loop."""
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fbmcf.barrier import BarrierSurface
from fbmcf.errors import MeshDegenerate
from fbmcf.flow import (
    FlowConfig,
    StopReason,
    adaptive_dt,
    compute_velocity,
    evaluate_state,
    project_boundary,
    run,
    step,
)
from fbmcf.mesh import TriMesh, make_cap, polar_grid
from fbmcf.oracles import HemisphereSolution, make_case


def flat_disk(n_rings=6):
    """Unit disk in the plane z = 0; it meets the unit cylinder orthogonally."""
    s, ang, faces, _ = polar_grid(n_rings)
    P = np.stack([s * np.cos(ang), s * np.sin(ang), np.zeros_like(s)], 1)
    return TriMesh(P, faces)


CYL1 = BarrierSurface.cylinder(1.0)


def fake_state(h_min, a2_max, t=0.0):
    mesh = SimpleNamespace(edge_lengths=lambda: np.array([h_min, 2 * h_min]))
    geom = SimpleNamespace(A_norm2=np.array([a2_max, 0.5 * a2_max]))
    return SimpleNamespace(mesh=mesh, geometry=geom, t=t)


@pytest.fixture(scope="module")
def hemi16():
    c = make_case("HEMI_PLANE", n_rings=16)
    return evaluate_state(c.mesh, c.barrier)


class TestVelocity:
    def test_hemisphere_interior(self, hemi16):
        v = compute_velocity(hemi16)
        inner = ~hemi16.mesh.boundary_flags
        assert_allclose(np.linalg.norm(v[inner], axis=1), 2.0, atol=0.05)
        # inward: along -x for the unit sphere
        radial = np.sum(v[inner] * hemi16.mesh.positions[inner], axis=1)
        assert_allclose(radial, -np.linalg.norm(v[inner], axis=1), rtol=1e-3)

    def test_boundary_tangent_to_plane(self, hemi16):
        v = compute_velocity(hemi16)
        b = hemi16.mesh.boundary_vertices
        assert np.max(np.abs(v[b, 2])) <= 1e-15
        assert np.all(np.linalg.norm(v[b], axis=1) > 1.9)

    def test_flat_disk(self):
        s = evaluate_state(flat_disk(), CYL1)
        assert_allclose(compute_velocity(s), 0.0, atol=1e-10)


class TestAdaptiveDt:
    def test_curvature_limited_case(self):
        assert adaptive_dt(fake_state(0.05, 8.0), FlowConfig()) == pytest.approx(2.5e-4, rel=1e-12)

    def test_coarse_mesh(self):
        assert adaptive_dt(fake_state(0.5, 4.0), FlowConfig()) == pytest.approx(0.025, rel=1e-12)

    def test_floor(self):
        cfg = FlowConfig(dt_floor=1e-9)
        assert adaptive_dt(fake_state(0.05, 1e30), cfg) == 1e-9

    def test_clipped_to_target(self):
        assert adaptive_dt(fake_state(0.5, 4.0, t=0.19), FlowConfig(), t_target=0.2) == pytest.approx(0.01)

    @given(st.floats(1e-3, 1.0), st.floats(1e-3, 1e4))
    def test_policy(self, h, a2):
        cfg = FlowConfig()
        assert adaptive_dt(fake_state(h, a2), cfg) == max(cfg.dt_floor, min(cfg.c1 * h * h, cfg.c2 / a2))


class TestStep:
    def test_hemisphere_shrinks(self):
        c = make_case("HEMI_PLANE", n_rings=32)
        s1 = step(evaluate_state(c.mesh, c.barrier), 1e-4)
        r = np.linalg.norm(s1.mesh.positions, axis=1)
        assert_allclose(r, HemisphereSolution(1.0).r(1e-4), atol=1e-5)
        assert s1.t == 1e-4
        assert s1.step == 1

    def test_flat_disk_static(self):
        s0 = evaluate_state(flat_disk(), CYL1)
        s1 = step(s0, 0.01)
        assert_allclose(s1.mesh.positions, s0.mesh.positions, atol=1e-10)
        assert s1.t == pytest.approx(0.01)

    def test_oversized_dt(self, hemi16):
        with pytest.raises(MeshDegenerate):
            step(hemi16, 0.5)

    def test_nonpositive_dt(self, hemi16):
        with pytest.raises(ValueError):
            step(hemi16, 0.0)

    def test_boundary_stays_on_barrier(self):
        c = make_case("CAP_CYLINDER", n_rings=8)
        s = evaluate_state(c.mesh, c.barrier)
        cfg = FlowConfig()
        for _ in range(5):
            s = step(s, adaptive_dt(s, cfg), cfg)
            assert np.max(np.abs(c.barrier.phi(s.mesh.positions[s.mesh.boundary_vertices]))) <= cfg.projection_tol


class TestProjection:
    def test_plane(self):
        m = TriMesh([[1.0, 0.0, 0.01], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [[0, 1, 2]])
        # every vertex of a lone triangle is a boundary vertex
        out = project_boundary(m, BarrierSurface.plane())
        assert_allclose(out.positions[0], [1, 0, 0], atol=1e-15)

    def test_idempotent(self):
        m = make_cap("hemisphere", n_rings=8)
        bar = BarrierSurface.plane(normal=(0, 0, -1))
        once = project_boundary(m, bar)
        assert np.array_equal(project_boundary(once, bar).positions, once.positions)
        assert np.array_equal(once.positions[~m.boundary_flags], m.positions[~m.boundary_flags])

    def test_cylinder_snap(self):
        m = make_cap("cylinder_cap", n_rings=8, radius=0.2, barrier_radius=2.0)
        b = m.boundary_vertices
        P = m.positions.copy()
        radial = P[b] / np.linalg.norm(P[b, :2], axis=1, keepdims=True) * [1, 1, 0]
        P[b] -= 0.3 * radial
        cyl = BarrierSurface.cylinder(2.0)
        out = project_boundary(m.with_positions(P), cyl)
        assert np.max(np.abs(cyl.phi(out.positions[b]))) <= 1e-10
        assert_allclose(out.positions[b], m.positions[b], atol=1e-12)


class TestConfig:
    def test_defaults_valid(self):
        assert FlowConfig().validate() == []

    @pytest.mark.parametrize("kw,key", [(dict(sigma=0.9), "sigma"), (dict(sigma=0.0), "sigma"),
                                        (dict(c1=-1.0), "c1"), (dict(max_steps=0), "max_steps"),
                                        (dict(eta=1.5), "eta"), (dict(t_end=-1.0), "t_end")])
    def test_invalid(self, kw, key):
        assert key in [k for k, _ in FlowConfig(**kw).validate()]

    def test_eta_depends_on_K(self):
        cfg = FlowConfig(eta=0.3)
        assert cfg.validate(K=0.5) == []
        assert [k for k, _ in cfg.validate(K=1.0)] == ["eta"]


class TestRun:
    def test_hemisphere_blows_up_near_quarter(self):
        c = make_case("HEMI_PLANE", n_rings=12)
        res = run(FlowConfig(record_every=50), c.mesh, c.barrier)
        assert res.stop_reason is StopReason.CURVATURE_BLOWUP
        assert res.final_state.t == pytest.approx(0.25, abs=0.01)

    def test_stop_maxA_10(self):
        c = make_case("HEMI_PLANE", n_rings=12)
        res = run(FlowConfig(stop_maxA=10.0, record_every=1), c.mesh, c.barrier)
        assert res.stop_reason is StopReason.CURVATURE_BLOWUP
        maxA = [r.maxA for r in res.records]
        assert maxA[-1] >= 10.0 and maxA[-2] < 10.0
        # |A|^2 = 2 / r^2 on a sphere, so max|A| = 10 at r = 1/sqrt(50)
        r = np.linalg.norm(res.final_state.mesh.positions, axis=1).mean()
        assert r == pytest.approx(1 / math.sqrt(50), rel=0.05)

    def test_flat_disk_max_steps(self):
        m = flat_disk()
        res = run(FlowConfig(max_steps=7, record_every=3), m, CYL1)
        assert res.stop_reason is StopReason.MAX_STEPS
        assert res.final_state.step == 7
        assert res.final_state.t > 0
        assert_allclose(res.final_state.mesh.positions, m.positions, atol=1e-9)
        assert [r.step for r in res.records] == [0, 3, 6, 7]

    def test_end_time_and_invariants(self):
        c = make_case("HEMI_PLANE", n_rings=8)
        cfg = FlowConfig(t_end=0.05, record_every=1)
        res = run(cfg, c.mesh, c.barrier)
        assert res.stop_reason is StopReason.END_TIME
        assert res.final_state.t == pytest.approx(0.05, abs=1e-14)
        areas = [r.area for r in res.records]
        assert np.all(np.diff(areas) < 0)
        assert max(r.max_abs_phi_boundary for r in res.records) <= cfg.projection_tol
        Hmin = np.array([r.H_min for r in res.records])
        assert np.all(Hmin >= 0.98 * np.maximum.accumulate(Hmin))
        assert len(res.frames) == len(res.records)

    def test_area_floor(self):
        c = make_case("HEMI_PLANE", n_rings=6)
        res = run(FlowConfig(stop_min_area=0.9), c.mesh, c.barrier)
        assert res.stop_reason is StopReason.AREA_FLOOR
        assert res.records[-1].area < 0.9 * res.records[0].area

    def test_dt_floor(self):
        c = make_case("HEMI_PLANE", n_rings=6)
        res = run(FlowConfig(dt_floor=1.0), c.mesh, c.barrier)
        assert res.stop_reason is StopReason.DT_FLOOR
        assert res.final_state.step == 0

    def test_mesh_degenerate(self):
        c = make_case("HEMI_PLANE", n_rings=6)
        res = run(FlowConfig(angle_floor=89.0), c.mesh, c.barrier)
        assert res.stop_reason is StopReason.MESH_DEGENERATE
        assert res.message

    def test_callback(self):
        c = make_case("HEMI_PLANE", n_rings=6)
        seen = []
        run(FlowConfig(max_steps=4, record_every=2), c.mesh, c.barrier, on_record=lambda s, r: seen.append(s.step))
        assert seen == [0, 2, 4]

    def test_orthogonality_shrinks_under_refinement(self):
        worst = []
        for n in (8, 16):
            c = make_case("HEMI_PLANE", n_rings=n)
            res = run(FlowConfig(t_end=0.01, record_every=5), c.mesh, c.barrier)
            worst.append(max(r.orthogonality_max for r in res.records))
        assert worst[1] < worst[0]
