"""Monitored quantities of a flow run, packaged per recorded time.

Everything here reads a :class:`fbmcf.flow.FlowState` snapshot and never
modifies it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np
from scipy.spatial import cKDTree

from .barrier import _rotate_frame, chi
from .errors import FitFailed, InsufficientRecords, NonpositiveHtilde, NonpositiveRemaining
from .mesh import mesh_quality, vertex_geometry

CSV_COLUMNS = (
    "t", "dt", "area", "boundary_length", "H_min", "H_max", "maxA", "lambda_min_A",
    "lambda_min_Atilde", "pinch_margin", "f_max", "grad_ratio_max", "res_NH", "res_h11",
    "res_h22", "res_NAtilde", "res_P12", "umbilic_ratio_max", "min_angle",
)


@dataclass
class DiagnosticsRecord:
    t: float
    dt: float
    area: float
    boundary_length: float
    H_min: float
    H_max: float
    maxA: float
    lambda_min_A: float
    lambda_min_Atilde: float
    pinch_margin: float
    f_max: float
    grad_ratio_max: float
    res_NH: float
    res_h11: float
    res_h22: float
    res_NAtilde: float
    res_P12: float
    umbilic_ratio_max: float
    min_angle: float
    # not part of the CSV
    step: int = 0
    int_H2: float = 0.0
    grad_H4_max: float = 0.0
    g_max: float = 0.0
    zeta_min: float = 0.0
    zeta_max: float = 0.0
    zeta_ok: bool = True
    pinch_raw_min: float = 0.0
    max_Atilde_dev: float = 0.0
    max_abs_phi_boundary: float = 0.0
    orthogonality_max: float = 0.0

    def csv_values(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def format_csv_value(v):
    """Shortest round-trip text for a float (locale independent)."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


# ---------------------------------------------------------------------------
# pointwise monitors
# ---------------------------------------------------------------------------

@dataclass
class ConvexityMargin:
    lambda_min_A: float
    lambda_min_Atilde: float
    A_ok: bool
    Atilde_ok: bool


def convexity_margin(state, D=0.0):
    """Minimum eigenvalues of ``A`` and ``A~`` with flags against ``D/3`` and ``D/2``."""
    lA = float(state.geometry.kappa1.min())
    lT = float(state.perturbed.lambda_min.min())
    return ConvexityMargin(lA, lT, lA > D / 3.0, lT > D / 2.0)


def pinching_raw(state):
    """Signed ``|A~|^2 - H~^2 / 2`` per vertex."""
    p = state.perturbed
    return p.A_tilde_norm2 - 0.5 * p.H_tilde ** 2


def pinching_f(state, sigma):
    """``max max(0, |A~|^2 - H~^2/2) / H~^(2 - sigma)`` over vertices.

    Raises
    ------
    NonpositiveHtilde
        If ``H~ <= 0`` at some vertex.
    """
    Ht = state.perturbed.H_tilde
    if np.any(Ht <= 0):
        i = int(np.argmin(Ht))
        raise NonpositiveHtilde(i, float(Ht[i]))
    num = np.maximum(pinching_raw(state), 0.0)
    return float(np.max(num / Ht ** (2.0 - sigma)))


def zeta_from_distance(d, eta):
    """``eta * exp(rho / eta)`` with ``rho = d chi(|d| / eta)``."""
    d = np.asarray(d, dtype=float)
    s = np.abs(d) / eta
    inside = s < 2.0
    rho = np.zeros_like(d)
    rho[inside] = d[inside] * chi(s[inside])
    return eta * np.exp(rho / eta)


def zeta_field(barrier, x, eta):
    res = barrier.signed_distance(np.atleast_2d(x), check_width=False)
    return zeta_from_distance(res.d, eta)


def zeta_in_bracket(zeta, eta, tol=1e-12):
    return bool(np.all((zeta >= eta * math.exp(-2) - tol) & (zeta <= eta * math.exp(2) + tol)))


@dataclass
class GradientReport:
    grad_ratio_max: float
    g_max: float
    grad_H4_max: float
    zeta: np.ndarray = field(repr=False)
    zeta_ok: bool = True


def gradient_test(state, eta, C_grad, a=1.0, b=1.0, c=1.0):
    """Gradient-estimate monitors.

    ``grad_ratio_max = max |grad H|^2 / (eta H^4 + C_grad)``, and the
    composite test function

    ``g = |grad H - h^S_nn H nu_S^T|^2 / H + b H (|A~|^2 - H~^2/2) + b a |A~|^2 - zeta H^3 + c``

    evaluated where ``H > 0``.  ``h^S_nn`` and ``nu_S^T`` use the cut-off
    extensions, ``zeta = eta exp(rho / eta)``.
    """
    geo, pert, flds = state.geometry, state.perturbed, state.fields
    H = geo.H
    gH2 = np.sum(geo.grad_H ** 2, axis=1)
    denom = eta * H ** 4 + C_grad
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, gH2 / denom, np.where(gH2 > 0, np.inf, 0.0))
        g4 = np.where(H != 0, gH2 / H ** 4, np.inf)
    zeta = zeta_from_distance(flds.d, eta)
    nu = geo.nu
    hnn = np.einsum("ni,nij,nj->n", nu, flds.A, nu)
    nT = flds.nu_flat - np.sum(flds.nu_flat * nu, axis=1, keepdims=True) * nu
    pos = H > 0
    g = np.full(len(H), -np.inf)
    if np.any(pos):
        w = geo.grad_H - (hnn * H)[:, None] * nT
        g[pos] = (np.sum(w[pos] ** 2, axis=1) / H[pos]
                  + b * H[pos] * (pert.A_tilde_norm2[pos] - 0.5 * pert.H_tilde[pos] ** 2)
                  + b * a * pert.A_tilde_norm2[pos] - zeta[pos] * H[pos] ** 3 + c)
    return GradientReport(float(np.max(ratio)), float(np.max(g)), float(np.max(g4)), zeta,
                          zeta_in_bracket(zeta, eta))


def zeta_gradient_max(barrier, points, eta, h=1e-6):
    """Largest central-difference ``|grad zeta|`` over ``points``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    grad = np.zeros_like(X)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        grad[:, k] = (zeta_field(barrier, X + e, eta) - zeta_field(barrier, X - e, eta)) / (2 * h)
    return float(np.max(np.linalg.norm(grad, axis=1)))


# ---------------------------------------------------------------------------
# boundary identities
# ---------------------------------------------------------------------------

@dataclass
class BoundaryResiduals:
    res_NH: float
    res_h11: float
    res_h22: float
    res_NAtilde: float
    res_P12: float
    per_vertex: dict = field(default_factory=dict, repr=False)

    def as_tuple(self):
        return (self.res_NH, self.res_h11, self.res_h22, self.res_NAtilde, self.res_P12)


def _barrier_derivative_h22(barrier, p, direction, T, eps=1e-5):
    """Derivative of ``A_S(T, T)`` along ``direction`` on S, ``T`` carried by minimal rotation."""
    nu0 = barrier.normal(p)
    vals = []
    for s in (1.0, -1.0):
        q, _ = barrier.closest_point(p + s * eps * direction, check=False)
        (Tq,) = _rotate_frame(nu0, barrier.normal(q), (T,))
        A3 = barrier.shape_operator_3d(q)
        vals.append(np.einsum("ni,nij,nj->n", Tq, A3, Tq))
    return (vals[0] - vals[1]) / (2 * eps)


# width (in rings) of the interior stencil used for conormal derivatives
BOUNDARY_RING = 4


def _interior_stencils(mesh, k=None):
    k = BOUNDARY_RING if k is None else k
    key = ("bres_stencil", k)
    if key not in mesh._rings:
        r3 = mesh.ring(k)
        bflag = mesh.boundary_flags
        mesh._rings[key] = {int(i): r3[i][~bflag[r3[i]]] for i in mesh.boundary_vertices}
    return mesh._rings[key]


def _one_sided_normal_derivative(x, y, F):
    """Slope in ``x`` at the origin of a quadratic least-squares fit of ``F(x, y)``."""
    M = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)
    s = np.sqrt(np.mean(x * x + y * y))
    M = M * np.array([1, 1 / s, 1 / s, 1 / s ** 2, 1 / s ** 2, 1 / s ** 2])
    coef, *_ = np.linalg.lstsq(M, F, rcond=None)
    return coef[1] / s


def boundary_residuals(state, ring=None):
    """Residuals of the free-boundary identities at every boundary vertex.

    Conormal derivatives of ``H``, ``h11``, ``h22`` and ``|A~|^2`` come from a
    one-sided quadratic fit over interior vertices of the 4-ring, in the
    coordinates (conormal, boundary tangent).  The barrier terms
    ``h^S_nn``, ``h^S_22`` and the barrier derivative of ``h^S_22`` along
    ``nu`` are evaluated at the vertex.  Tensor components at stencil points
    use ``N`` and ``T`` projected to each point's tangent plane.
    """
    fr = state.frames
    if fr is None or len(fr.vertices) == 0:
        return BoundaryResiduals(0.0, 0.0, 0.0, 0.0, 0.0)
    mesh, geo, pert, barrier = state.mesh, state.geometry, state.perturbed, state.barrier
    P = mesh.positions
    A3 = geo.A3
    st = _interior_stencils(mesh, ring)
    v = fr.vertices
    N, T, nu = fr.N, fr.T, fr.nu
    nb = len(v)
    dH = np.zeros(nb)
    d11 = np.zeros(nb)
    d22 = np.zeros(nb)
    dAt = np.zeros(nb)
    for k, i in enumerate(v):
        q = st[int(i)]
        D = P[q] - P[i]
        x = D @ N[k]
        y = D @ T[k]
        nq = geo.nu[q]
        E1 = N[k] - (nq @ N[k])[:, None] * nq
        E1 /= np.linalg.norm(E1, axis=1, keepdims=True)
        E2 = T[k] - (nq @ T[k])[:, None] * nq
        E2 /= np.linalg.norm(E2, axis=1, keepdims=True)
        F = np.stack([
            geo.H[q],
            np.einsum("ni,nij,nj->n", E1, A3[q], E1),
            np.einsum("ni,nij,nj->n", E2, A3[q], E2),
            pert.A_tilde_norm2[q],
        ], axis=1)
        dH[k], d11[k], d22[k], dAt[k] = _one_sided_normal_derivative(x, y, F)

    pS = P[v]
    AS = barrier.shape_operator_3d(pS)
    hnn = np.einsum("ni,nij,nj->n", nu, AS, nu)
    hS22 = np.einsum("ni,nij,nj->n", T, AS, T)
    dhS22 = _barrier_derivative_h22(barrier, pS, nu, T)
    H = geo.H[v]
    h11 = np.einsum("ni,nij,nj->n", N, A3[v], N)
    h22 = np.einsum("ni,nij,nj->n", T, A3[v], T)
    h12 = np.einsum("ni,nij,nj->n", N, A3[v], T)
    At2 = pert.A_tilde_norm2[v]

    rNH = np.abs(dH - hnn * H)
    r11 = np.abs(d11 - (2 * hS22 * H + (hnn - 3 * hS22) * h11 + dhS22))
    r22 = np.abs(d22 - (hS22 * H + (hnn - 3 * hS22) * h22 - dhS22))
    rhs_At = 3 * hS22 * H * h11 + (hnn - 2 * hS22) * At2 - 2 * hS22 * h11 ** 2 + dhS22 * (h11 - h22)
    rAt = np.abs(0.5 * dAt - rhs_At)
    E = geo.tangent_basis[v]
    n_c = np.einsum("nai,ni->na", E, N)
    t_c = np.einsum("nai,ni->na", E, T)
    p12 = np.einsum("na,nab,nb->n", n_c, pert.P_sigma[v], t_c)
    rP = np.abs(p12 + h12)
    per = dict(vertices=v, NH=rNH, h11=r11, h22=r22, NAtilde=rAt, P12=rP)
    return BoundaryResiduals(float(rNH.max()), float(r11.max()), float(r22.max()), float(rAt.max()),
                             float(rP.max()), per)


# ---------------------------------------------------------------------------
# record assembly
# ---------------------------------------------------------------------------

class RecordBuilder:
    """Turns flow states into :class:`DiagnosticsRecord` objects for one run."""

    def __init__(self, config, barrier, initial_state):
        self.config = config
        self.barrier = barrier
        self.initial_state = initial_state
        if config.C_grad is None:
            self.C_grad = 2.0 * float(np.max(np.sum(initial_state.geometry.grad_H ** 2, axis=1)))
        else:
            self.C_grad = float(config.C_grad)

    def record(self, state, dt):
        cfg = self.config
        geo, pert, mesh = state.geometry, state.perturbed, state.mesh
        H = geo.H
        try:
            f_max = pinching_f(state, cfg.sigma)
        except NonpositiveHtilde:
            f_max = float("nan")
        gr = gradient_test(state, cfg.eta, self.C_grad, cfg.a, cfg.b, cfg.c)
        br = boundary_residuals(state)
        min_angle, _, _ = mesh_quality(mesh)
        with np.errstate(divide="ignore", invalid="ignore"):
            umb = np.where(H > 0, geo.Aring_norm / H, np.inf)
        b = mesh.boundary_vertices
        return DiagnosticsRecord(
            t=float(state.t), dt=float(dt), area=mesh.area(), boundary_length=mesh.boundary_length(),
            H_min=float(H.min()), H_max=float(H.max()), maxA=float(np.sqrt(geo.A_norm2.max())),
            lambda_min_A=float(geo.kappa1.min()), lambda_min_Atilde=float(pert.lambda_min.min()),
            pinch_margin=float(np.min(geo.kappa1 - cfg.epsilon_pinch * H)), f_max=f_max,
            grad_ratio_max=gr.grad_ratio_max, res_NH=br.res_NH, res_h11=br.res_h11, res_h22=br.res_h22,
            res_NAtilde=br.res_NAtilde, res_P12=br.res_P12, umbilic_ratio_max=float(umb.max()),
            min_angle=float(min_angle), step=int(state.step),
            int_H2=float(np.sum(H ** 2 * geo.vertex_area)), grad_H4_max=gr.grad_H4_max, g_max=gr.g_max,
            zeta_min=float(gr.zeta.min()), zeta_max=float(gr.zeta.max()), zeta_ok=gr.zeta_ok,
            pinch_raw_min=float(pinching_raw(state).min()),
            max_Atilde_dev=float(np.max(np.abs(pert.A_tilde - geo.A))),
            max_abs_phi_boundary=float(np.max(np.abs(self.barrier.phi(mesh.positions[b])))) if len(b) else 0.0,
            orthogonality_max=float(state.frames.orthogonality_residual.max()) if state.frames is not None
            and len(state.frames.vertices) else 0.0,
        )


# ---------------------------------------------------------------------------
# run-level analysis
# ---------------------------------------------------------------------------

def area_balance(records):
    """Largest relative defect of ``dA/dt = -int H^2`` between consecutive records.

    Uses the trapezoid rule in time.  Intervals with no area change and no
    curvature contribute 0.
    """
    if len(records) < 2:
        raise InsufficientRecords("area balance needs at least two records")
    worst = 0.0
    for r0, r1 in zip(records[:-1], records[1:]):
        dA = r1.area - r0.area
        flux = 0.5 * (r0.int_H2 + r1.int_H2) * (r1.t - r0.t)
        num = abs(dA + flux)
        if dA == 0.0:
            rel = 0.0 if num == 0.0 else math.inf
        else:
            rel = num / abs(dA)
        worst = max(worst, rel)
    return worst


@dataclass
class BlowupEstimate:
    paper_bound: float
    fitted_T: float
    within_bound: bool
    c: float
    n_points: int


def blowup_estimate(H0, t, H_max, min_points=5, tail=0.5):
    """Fit ``H_max(t) = c / sqrt(T - t)`` and compare ``T`` with ``1 / H0^2``.

    The model is linear in ``H_max^-2 = (T - t) / c^2``; the fit uses the
    last ``tail`` fraction of the records, which must show strictly
    increasing ``H_max``.
    """
    if not H0 > 0:
        raise FitFailed("H0 must be positive")
    t = np.asarray(t, dtype=float)
    Hm = np.asarray(H_max, dtype=float)
    bound = 1.0 / H0 ** 2
    start = int(len(t) * (1 - tail))
    ts, hs = t[start:], Hm[start:]
    if len(ts) < min_points:
        raise FitFailed(f"need at least {min_points} records in the fit window, got {len(ts)}")
    if np.any(np.diff(hs) <= 0) or np.any(hs <= 0):
        raise FitFailed("max H is not increasing over the fit window")
    y = hs ** -2.0
    slope, icpt = np.polyfit(ts, y, 1)
    if not slope < 0:
        raise FitFailed("fitted growth does not blow up")
    T = -icpt / slope
    c = 1.0 / math.sqrt(-slope)
    return BlowupEstimate(bound, float(T), bool(T <= bound * 1.05), float(c), len(ts))


def _rotation_to(a, b):
    """Rotation matrix taking unit ``a`` to unit ``b``."""
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1 + 1e-12:
        # half turn about any axis orthogonal to a
        ax = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(ax) < 1e-6:
            ax = np.cross(a, [0.0, 1.0, 0.0])
        ax /= np.linalg.norm(ax)
        return 2 * np.outer(ax, ax) - np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def _distance_to_hemisphere(y):
    """Euclidean distance from points to the closed unit upper hemisphere."""
    r = np.linalg.norm(y, axis=1)
    up = y[:, 2] >= 0
    rho = np.linalg.norm(y[:, :2], axis=1)
    return np.where(up, np.abs(r - 1.0), np.sqrt((rho - 1.0) ** 2 + y[:, 2] ** 2))


def _sample_mesh(mesh, n, rng):
    areas = mesh.face_areas()
    f = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    P = mesh.positions[mesh.faces[f]]
    return P[:, 0] + u[:, None] * (P[:, 1] - P[:, 0]) + v[:, None] * (P[:, 2] - P[:, 0])


def _sample_hemisphere(n, rng):
    z = rng.random(n)
    a = 2 * np.pi * rng.random(n)
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(a), s * np.sin(a), z], axis=1)


@dataclass
class RescaleReport:
    hausdorff: float
    umbilic_ratio_max: float
    scale: float
    center: np.ndarray
    forward: float  # surface to hemisphere
    backward: float  # hemisphere to surface


def rescaled_positions(mesh, barrier, t, T_est):
    """Positions translated, rotated and scaled onto the unit-hemisphere frame."""
    if not T_est > t:
        raise NonpositiveRemaining(f"T_est = {T_est!r} is not after t = {t!r}")
    P = mesh.positions
    loops = mesh.adjacency.loops
    if loops:
        bv = np.concatenate(loops)
        c = P[bv].mean(axis=0)
    else:
        c = P.mean(axis=0)
    p, _ = barrier.closest_point(c[None], check=False)
    p = p[0]
    R = _rotation_to(barrier.normal(p[None])[0], np.array([0.0, 0.0, -1.0]))
    scale = 1.0 / math.sqrt(4.0 * (T_est - t))
    return (P - p) @ R.T * scale, p, scale


def rescale_compare(mesh, barrier, t, T_est, n_samples=10000, seed=0, geometry=None):
    """Symmetric sampled Hausdorff distance to the unit upper hemisphere after rescaling.

    Both directions use ``n_samples`` random points; the hemisphere-to-surface
    direction measures against surface samples plus vertices, so it is an
    upper bound of the true distance up to the sample spacing.
    """
    Y, p, scale = rescaled_positions(mesh, barrier, t, T_est)
    rng = np.random.default_rng(seed)
    ym = mesh.with_positions(Y)
    S = _sample_mesh(ym, n_samples, rng)
    forward = float(max(_distance_to_hemisphere(S).max(), _distance_to_hemisphere(Y).max()))
    tree = cKDTree(np.vstack([S, Y]))
    dist, _ = tree.query(_sample_hemisphere(n_samples, rng))
    backward = float(dist.max())
    geo = vertex_geometry(mesh, barrier) if geometry is None else geometry
    with np.errstate(divide="ignore", invalid="ignore"):
        umb = np.where(geo.H > 0, geo.Aring_norm / geo.H, np.inf)
    return RescaleReport(max(forward, backward), float(umb.max()), scale, p, forward, backward)


def record_field_names():
    return [f.name for f in dc_fields(DiagnosticsRecord)]
