"""Explicit free-boundary mean curvature flow on triangle meshes.

Positions move with ``dF/dt = -H nu``.  Boundary vertices move with the
part of that velocity tangent to the barrier and are then snapped back to
their closest barrier point.  The contact angle is not imposed directly:
boundary curvature comes from a stencil mirrored across the barrier, so a
non-orthogonal contact shows up as a kink with large curvature that the
flow removes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields as dc_fields
from functools import cached_property

import numpy as np

from .barrier import extended_fields
from .errors import MeshDegenerate, NoConvergence, QuadricFitSingular
from .mesh import boundary_frame, mesh_quality, vertex_geometry
from .perturbation import perturbed_sff


class StopReason(str, enum.Enum):
    CURVATURE_BLOWUP = "CurvatureBlowup"
    AREA_FLOOR = "AreaFloor"
    MAX_STEPS = "MaxSteps"
    MESH_DEGENERATE = "MeshDegenerate"
    DT_FLOOR = "DtFloor"
    END_TIME = "EndTime"


@dataclass
class FlowConfig:
    """Time stepping, stopping and monitor parameters.

    ``stop_min_area`` is a fraction of the initial area.  ``t_end`` (if set)
    adds a final-time stop.  ``C_grad = None`` means twice the initial
    ``max |grad H|^2``.
    """

    c1: float = 0.1
    c2: float = 0.2
    dt_floor: float = 1e-9
    max_steps: int = 200000
    stop_maxA: float = 50.0
    stop_min_area: float = 1e-4
    projection_tol: float = 1e-10
    record_every: int = 10
    t_end: float | None = None
    sigma: float = 0.1
    eta: float = 0.05
    D: float = 0.0
    epsilon_pinch: float = 0.01
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    C_grad: float | None = None
    smoothing: float = 0.0
    angle_floor: float = 1.0
    area_floor: float = 1e-14

    def validate(self, K=None):
        """Return a list of ``(field, message)`` problems (empty when valid)."""
        bad = []
        for name in ("c1", "c2", "dt_floor", "stop_maxA", "stop_min_area", "projection_tol",
                     "eta", "epsilon_pinch", "area_floor"):
            if not getattr(self, name) > 0:
                bad.append((name, f"{name} must be positive"))
        for name in ("max_steps", "record_every"):
            if not int(getattr(self, name)) >= 1:
                bad.append((name, f"{name} must be >= 1"))
        if not 0 < self.sigma < 0.5:
            bad.append(("sigma", "sigma must lie in (0, 0.5)"))
        limit = 1.0 if K is None else min(1.0, 1.0 / (4 * K))
        if not 0 < self.eta < limit:
            bad.append(("eta", f"eta must lie in (0, {limit:g})"))
        if self.t_end is not None and not self.t_end > 0:
            bad.append(("t_end", "t_end must be positive"))
        if self.C_grad is not None and self.C_grad < 0:
            bad.append(("C_grad", "C_grad must be non-negative"))
        if self.smoothing < 0:
            bad.append(("smoothing", "smoothing must be non-negative"))
        if self.D < 0:
            bad.append(("D", "D must be non-negative"))
        return bad

    @classmethod
    def field_names(cls):
        return [f.name for f in dc_fields(cls)]


class FlowState:
    """Snapshot of the evolving surface at time ``t``.

    ``geometry`` is computed eagerly since the velocity needs it.  The
    extended barrier fields, the perturbed second fundamental form and the
    boundary frames are derived from the same positions on first access.
    """

    def __init__(self, t, step, mesh, geometry, barrier, K=None):
        self.t = t
        self.step = step
        self.mesh = mesh
        self.geometry = geometry
        self.barrier = barrier
        self.K = K

    def __repr__(self):
        return f"FlowState(t={self.t!r}, step={self.step}, n_vertices={self.mesh.n_vertices})"

    @cached_property
    def fields(self):
        return extended_fields(self.barrier, self.mesh.positions, self.K)

    @cached_property
    def perturbed(self):
        return perturbed_sff(self.mesh, self.barrier, self.geometry, fields=self.fields)

    @cached_property
    def frames(self):
        if not self.mesh.boundary_flags.any():
            return None
        return boundary_frame(self.mesh, self.barrier, self.geometry, tol=1e-6)

    @property
    def boundary_frames(self):
        return self.frames


def evaluate_state(mesh, barrier, t=0.0, step=0, K=None):
    """Build a state for the given positions (geometry fitted immediately)."""
    try:
        geom = vertex_geometry(mesh, barrier)
    except QuadricFitSingular as exc:
        raise MeshDegenerate(str(exc)) from exc
    return FlowState(t, step, mesh, geom, barrier, K)


def compute_velocity(state):
    """``-H nu`` inside; at boundary vertices only the part tangent to the barrier."""
    g = state.geometry
    v = -g.H[:, None] * g.nu
    b = state.mesh.boundary_vertices
    if len(b):
        nuS = state.barrier.normal(state.mesh.positions[b])
        v[b] -= np.sum(v[b] * nuS, axis=1, keepdims=True) * nuS
    return v


def adaptive_dt(state, config, t_target=None):
    """``max(dt_floor, min(c1 h_min^2, c2 / max|A|^2))``, clipped to ``t_target``."""
    h = state.mesh.edge_lengths().min()
    a2 = float(np.max(state.geometry.A_norm2))
    dt = config.c1 * h * h
    if a2 > 0:
        dt = min(dt, config.c2 / a2)
    dt = max(config.dt_floor, dt)
    if t_target is not None and t_target > state.t:
        dt = min(dt, t_target - state.t)
    return dt


def raw_dt(state, config):
    h = state.mesh.edge_lengths().min()
    a2 = float(np.max(state.geometry.A_norm2))
    return min(config.c1 * h * h, config.c2 / a2) if a2 > 0 else config.c1 * h * h


def project_boundary(mesh, barrier, tol=1e-10):
    """Snap boundary vertices to their closest barrier points."""
    b = mesh.boundary_vertices
    P = mesh.positions.copy()
    if len(b):
        p, conv = barrier.closest_point(P[b])
        if not np.all(conv) or np.max(np.abs(barrier.phi(p))) > max(tol, 1e-12) * 1e3:
            raise NoConvergence("boundary projection failed")
        P[b] = p
    return mesh.with_positions(P)


def _tangential_smoothing(mesh, geom, weight):
    """Move interior vertices toward their 1-ring barycenter within the tangent plane."""
    idx = mesh.ring_padded(1)
    mask = idx >= 0
    P = mesh.positions
    nb = P[np.where(mask, idx, 0)] * mask[..., None]
    bary = nb.sum(axis=1) / mask.sum(axis=1, keepdims=True)
    d = bary - P
    d -= np.sum(d * geom.nu, axis=1, keepdims=True) * geom.nu
    d[mesh.boundary_flags] = 0.0
    return P + weight * d


def step(state, dt, config=None):
    """One forward-Euler step followed by boundary projection and re-evaluation."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = config or FlowConfig()
    v = compute_velocity(state)
    P = state.mesh.positions + dt * v
    mesh = state.mesh.with_positions(P)
    if cfg.smoothing > 0:
        mesh = mesh.with_positions(_tangential_smoothing(mesh, state.geometry, cfg.smoothing))
    mesh = project_boundary(mesh, state.barrier, cfg.projection_tol)
    min_angle, _, min_area = mesh_quality(mesh)
    fn = mesh.face_normals()
    flipped = np.sum(fn * state.mesh.face_normals(), axis=1) <= 0
    if not np.isfinite(min_angle) or min_area < cfg.area_floor or min_angle < cfg.angle_floor or flipped.any():
        raise MeshDegenerate(f"min angle {min_angle:.3g} deg, min area {min_area:.3g}")
    return evaluate_state(mesh, state.barrier, state.t + dt, state.step + 1, state.K)


@dataclass
class RunResult:
    frames: list  # (t, positions) per recorded frame
    records: list
    stop_reason: StopReason
    final_state: FlowState
    initial_state: FlowState
    message: str = ""


def run(config, initial, barrier, on_record=None):
    """Iterate steps until a stop criterion fires.

    Diagnostics are recorded at step 0, every ``record_every`` steps and at
    the final state.  ``on_record(state, record)`` is called for each record.
    """
    from .diagnostics import RecordBuilder

    state = evaluate_state(project_boundary(initial, barrier, config.projection_tol), barrier)
    builder = RecordBuilder(config, barrier, state)
    A0 = state.mesh.area()
    frames, records = [], []
    last_dt = 0.0
    reason = None
    message = ""

    def record(st, dt):
        rec = builder.record(st, dt)
        records.append(rec)
        frames.append((st.t, st.mesh.positions.copy()))
        if on_record is not None:
            on_record(st, rec)

    recorded_step = -1
    while True:
        if state.step % config.record_every == 0:
            record(state, last_dt)
            recorded_step = state.step
        maxA = float(np.sqrt(np.max(state.geometry.A_norm2)))
        if maxA >= config.stop_maxA:
            reason = StopReason.CURVATURE_BLOWUP
        elif state.mesh.area() < config.stop_min_area * A0:
            reason = StopReason.AREA_FLOOR
        elif config.t_end is not None and state.t >= config.t_end * (1 - 1e-14):
            reason = StopReason.END_TIME
        elif state.step >= config.max_steps:
            reason = StopReason.MAX_STEPS
        elif raw_dt(state, config) < config.dt_floor:
            reason = StopReason.DT_FLOOR
        if reason is not None:
            break
        dt = adaptive_dt(state, config, config.t_end)
        try:
            state = step(state, dt, config)
        except (MeshDegenerate, NoConvergence) as exc:
            reason = StopReason.MESH_DEGENERATE
            message = str(exc)
            break
        last_dt = dt
    if recorded_step != state.step:
        record(state, last_dt)
    return RunResult(frames, records, reason, state, builder.initial_state, message)
