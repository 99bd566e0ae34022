"""Analytic barrier surfaces given as quadric level sets.

Every catalog surface is written as ``phi(x) = x.Q.x + b.x + c`` with a
constant Hessian ``2Q``.  The global unit normal is
``nu_S = orientation_sign * grad(phi) / |grad(phi)|`` and the second
fundamental form uses the convention ``A_S(u, v) = -<D_u v, nu_S>``, so a
sphere with outward normal has ``A_S = I / R``.

All point-wise routines accept a single point of shape ``(3,)`` or a batch of
shape ``(n, 3)`` and return correspondingly shaped results.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import PPoly
from scipy.optimize import brentq

from .errors import (
    DegenerateGradient,
    InsufficientSamples,
    NonpositiveK,
    NoConvergence,
    OutsideTubular,
)

K_MIN = 0.1
MAX_ITER = 50
NEWTON_TOL = 1e-12
GRAD_FLOOR = 1e-10

KINDS = ("plane", "sphere", "cylinder", "ellipsoid", "slab", "custom")


# ---------------------------------------------------------------------------
# cutoff profile
# ---------------------------------------------------------------------------

def _build_cutoff(ramp=0.05, peak=4.8):
    """Piecewise-polynomial C^2 step from 1 (s <= 1) to 0 (s >= 2).

    The second derivative is a continuous trapezoidal wave of height
    ``peak``; the plateau width is solved so that the profile drops by
    exactly one.  Result: chi' >= -1.65 and |chi''| <= 4.8.
    """

    def pieces(b):
        bp = np.array([0, ramp, b, b + ramp, 1 - b - ramp, 1 - b, 1 - ramp, 1.0])
        vals = np.array([0, -peak, -peak, 0, 0, peak, peak, 0.0])
        coef = np.vstack([np.diff(vals) / np.diff(bp), vals[:-1]])
        d2 = PPoly(coef, bp)
        return d2, d2.antiderivative(1), d2.antiderivative(2)

    b = brentq(lambda b: pieces(b)[2](1.0) + 1.0, 2 * ramp, 0.5 - ramp - 1e-9, xtol=1e-15)
    return pieces(b)


_CHI2, _CHI1, _CHI0 = _build_cutoff()


def chi(s):
    """Base cutoff: 1 on (-inf, 1], 0 on [2, inf), C^2 in between."""
    s = np.asarray(s, dtype=float)
    t = np.clip(s - 1.0, 0.0, 1.0)
    out = 1.0 + _CHI0(t)
    out = np.where(s <= 1.0, 1.0, np.where(s >= 2.0, 0.0, out))
    return out if out.ndim else float(out)


def chi_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.where((s > 1.0) & (s < 2.0), _CHI1(np.clip(s - 1.0, 0.0, 1.0)), 0.0)
    return out if out.ndim else float(out)


def chi_second(s):
    s = np.asarray(s, dtype=float)
    out = np.where((s > 1.0) & (s < 2.0), _CHI2(np.clip(s - 1.0, 0.0, 1.0)), 0.0)
    return out if out.ndim else float(out)


def cutoff_chi(d, K):
    """Truncation ``chi_K(d) = chi(4 K |d|)``.

    Equal to one for ``|d| <= 1/(4K)`` and zero for ``|d| >= 1/(2K)``;
    ``|d chi_K / dd| <= 8K`` and ``|d^2 chi_K / dd^2| <= 96 K^2``.
    """
    if not K > 0:
        raise NonpositiveK(f"K must be positive, got {K}")
    return chi(4.0 * K * np.abs(d))


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass
class BarrierPointFrame:
    p: np.ndarray
    nu_S: np.ndarray
    tangent_basis: np.ndarray  # (2, 3), rows are orthonormal tangents
    A_S: np.ndarray
    H_S: float
    Aring_S: np.ndarray


@dataclass
class BarrierBounds:
    K: float
    L1: float
    L2: float
    sample_count: int


@dataclass
class DistanceResult:
    d: np.ndarray
    p: np.ndarray
    converged: np.ndarray


def _as_points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector")
    return v / n


def _tangent_pair(n):
    """Deterministic orthonormal tangent pair for a batch of unit normals."""
    n = np.atleast_2d(n)
    ref = np.where(np.abs(n[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = ref - np.sum(ref * n, axis=1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


@dataclass(eq=False)
class BarrierSurface:
    """Quadric barrier surface with an explicit unit normal orientation.

    Parameters
    ----------
    kind : str
        One of ``plane, sphere, cylinder, ellipsoid, slab, custom``.
    params : tuple of float
        Raw parameters as given by the user (kept for reporting).
    Q, b, c : quadric coefficients of the level-set function.
    orientation_sign : {+1, -1}
        Multiplies ``grad(phi)/|grad(phi)|`` to give ``nu_S``.
    tube_width : float
        Half-width of the neighborhood on which closest points are unique.
    """

    kind: str
    params: tuple
    Q: np.ndarray
    b: np.ndarray
    c: float
    orientation_sign: int = 1
    tube_width: float = np.inf
    _K: float | None = field(default=None, repr=False)

    # -- constructors ------------------------------------------------------
    @classmethod
    def plane(cls, point=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0), orientation_sign=1):
        n = _unit(normal)
        p0 = np.asarray(point, dtype=float)
        return cls("plane", tuple(p0) + tuple(n), np.zeros((3, 3)), n, -float(n @ p0),
                   int(orientation_sign), np.inf, K_MIN)

    @classmethod
    def sphere(cls, radius=1.0, center=(0.0, 0.0, 0.0), orientation_sign=1):
        R = float(radius)
        if R <= 0:
            raise ValueError("radius must be positive")
        c0 = np.asarray(center, dtype=float)
        # scaled so that |grad phi| = 1 on the surface
        Q = np.eye(3) / (2 * R)
        return cls("sphere", (R,) + tuple(c0), Q, -c0 / R, (c0 @ c0 - R * R) / (2 * R),
                   int(orientation_sign), R, 1.0 / R)

    @classmethod
    def cylinder(cls, radius=1.0, axis=(0.0, 0.0, 1.0), center=(0.0, 0.0, 0.0),
                 orientation_sign=1):
        R = float(radius)
        if R <= 0:
            raise ValueError("radius must be positive")
        a = _unit(axis)
        c0 = np.asarray(center, dtype=float)
        P = np.eye(3) - np.outer(a, a)
        Q = P / (2 * R)
        return cls("cylinder", (R,) + tuple(a) + tuple(c0), Q, -P @ c0 / R,
                   (c0 @ P @ c0 - R * R) / (2 * R), int(orientation_sign), R, 1.0 / R)

    @classmethod
    def ellipsoid(cls, axes=(2.0, 1.5, 1.0), center=(0.0, 0.0, 0.0), orientation_sign=1):
        ax = np.asarray(axes, dtype=float)
        if np.any(ax <= 0):
            raise ValueError("semi-axes must be positive")
        c0 = np.asarray(center, dtype=float)
        Q = np.diag(0.5 / ax ** 2)
        b = -2 * Q @ c0
        c = c0 @ Q @ c0 - 0.5
        # smallest principal radius of curvature bounds the focal distance
        width = float(ax.min() ** 2 / ax.max())
        return cls("ellipsoid", tuple(ax) + tuple(c0), Q, b, float(c), int(orientation_sign), width)

    @classmethod
    def slab(cls, gap=1.0, normal=(0.0, 0.0, 1.0), offset=0.0, orientation_sign=1):
        """Two parallel planes ``<x, n> = offset +- gap/2``.

        With ``orientation_sign=+1`` each plane's normal points away from the
        other plane, which is the orientation giving ``Zbar = 2/gap``.
        """
        r = float(gap)
        if r <= 0:
            raise ValueError("gap must be positive")
        n = _unit(normal)
        Q = np.outer(n, n) / r
        b = -2 * offset * n / r
        c = (offset ** 2 - r * r / 4) / r
        return cls("slab", (r,) + tuple(n) + (float(offset),), Q, b, float(c),
                   int(orientation_sign), r / 2, 2.0 / r)

    @classmethod
    def custom(cls, Q, b, c, orientation_sign=1, tube_width=1.0):
        Q = np.asarray(Q, dtype=float)
        Q = 0.5 * (Q + Q.T)
        b = np.asarray(b, dtype=float)
        params = tuple(Q.ravel()) + tuple(b) + (float(c),)
        return cls("custom", params, Q, b, float(c), int(orientation_sign), float(tube_width))

    @classmethod
    def from_params(cls, kind, params=(), orientation_sign=1):
        """Build a catalog surface from a flat parameter list.

        plane: px py pz nx ny nz; sphere: R [cx cy cz]; cylinder: R [ax ay az
        [cx cy cz]]; ellipsoid: a b c [cx cy cz]; slab: gap [nx ny nz [offset]];
        custom: 9 entries of Q, 3 of b, then c [, tube width].
        """
        p = [float(v) for v in params]
        s = orientation_sign
        if kind == "plane":
            if not p:
                return cls.plane(orientation_sign=s)
            if len(p) != 6:
                raise ValueError("plane takes 6 parameters")
            return cls.plane(p[:3], p[3:6], s)
        if kind == "sphere":
            if len(p) not in (0, 1, 4):
                raise ValueError("sphere takes 1 or 4 parameters")
            return cls.sphere(p[0] if p else 1.0, p[1:4] if len(p) == 4 else (0, 0, 0), s)
        if kind == "cylinder":
            if len(p) not in (0, 1, 4, 7):
                raise ValueError("cylinder takes 1, 4 or 7 parameters")
            R = p[0] if p else 1.0
            axis = p[1:4] if len(p) >= 4 else (0, 0, 1)
            center = p[4:7] if len(p) == 7 else (0, 0, 0)
            return cls.cylinder(R, axis, center, s)
        if kind == "ellipsoid":
            if len(p) not in (0, 3, 6):
                raise ValueError("ellipsoid takes 3 or 6 parameters")
            axes = p[:3] if p else (2.0, 1.5, 1.0)
            return cls.ellipsoid(axes, p[3:6] if len(p) == 6 else (0, 0, 0), s)
        if kind == "slab":
            if len(p) not in (0, 1, 4, 5):
                raise ValueError("slab takes 1, 4 or 5 parameters")
            gap = p[0] if p else 1.0
            normal = p[1:4] if len(p) >= 4 else (0, 0, 1)
            return cls.slab(gap, normal, p[4] if len(p) == 5 else 0.0, s)
        if kind == "custom":
            if len(p) not in (13, 14):
                raise ValueError("custom takes 13 or 14 parameters")
            Q = np.reshape(p[:9], (3, 3))
            width = p[13] if len(p) == 14 else 1.0
            return cls.custom(Q, p[9:12], p[12], s, width)
        raise ValueError(f"unknown barrier kind {kind!r}")

    # -- level set -----------------------------------------------------------
    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.b + self.c

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ self.Q + self.b

    def hessian(self, x=None):
        return 2.0 * self.Q

    def normal(self, p):
        g = self.grad(p)
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(n < GRAD_FLOOR):
            raise DegenerateGradient("level-set gradient vanishes")
        return self.orientation_sign * g / n

    # -- closest point and signed distance ---------------------------------
    def _closest_closed_form(self, x):
        k = self.kind
        if k == "plane":
            n = self.b
            return x - np.outer(x @ n + self.c, n)
        if k == "sphere":
            R, c0 = self.params[0], np.array(self.params[1:4])
            v = x - c0
            r = np.linalg.norm(v, axis=1, keepdims=True)
            if np.any(r < GRAD_FLOOR):
                raise NoConvergence("closest point undefined at the sphere center")
            return c0 + R * v / r
        if k == "cylinder":
            R, a, c0 = self.params[0], np.array(self.params[1:4]), np.array(self.params[4:7])
            v = x - c0
            along = np.outer(v @ a, a)
            radial = v - along
            r = np.linalg.norm(radial, axis=1, keepdims=True)
            if np.any(r < GRAD_FLOOR):
                raise NoConvergence("closest point undefined on the cylinder axis")
            return c0 + along + R * radial / r
        if k == "slab":
            r, n, off = self.params[0], np.array(self.params[1:4]), self.params[4]
            s = x @ n - off
            target = np.where(s >= 0, r / 2, -r / 2)
            return x - np.outer(s - target, n)
        return None

    def _closest_newton(self, x):
        """Damped Newton on the Lagrangian ``p - x + lam grad phi(p) = 0, phi(p) = 0``."""
        p = x.copy()
        # seed: Newton-projection steps on phi^2 (gradient descent with exact step)
        for _ in range(MAX_ITER):
            f = self.phi(p)
            g = self.grad(p)
            g2 = np.sum(g * g, axis=1)
            if np.any(g2 < GRAD_FLOOR ** 2):
                raise DegenerateGradient("level-set gradient vanishes during projection")
            if np.all(np.abs(f) < 1e-6):
                break
            p = p - (f / g2)[:, None] * g
        g = self.grad(p)
        lam = np.sum((x - p) * g, axis=1) / np.sum(g * g, axis=1)
        Hs = self.hessian()
        n = len(x)
        converged = np.zeros(n, dtype=bool)
        I3 = np.eye(3)

        def residual(p, lam):
            g = self.grad(p)
            r1 = p - x + lam[:, None] * g
            return np.concatenate([r1, self.phi(p)[:, None]], axis=1)

        for _ in range(MAX_ITER):
            res = residual(p, lam)
            g = self.grad(p)
            gn = np.linalg.norm(g, axis=1)
            tang = res[:, :3] - np.sum(res[:, :3] * g, axis=1, keepdims=True) * g / gn[:, None] ** 2
            converged = (np.abs(res[:, 3]) <= NEWTON_TOL) & (np.linalg.norm(tang, axis=1) <= NEWTON_TOL * max(1.0, 1.0))
            if np.all(converged):
                break
            J = np.zeros((n, 4, 4))
            J[:, :3, :3] = I3 + lam[:, None, None] * Hs
            J[:, :3, 3] = g
            J[:, 3, :3] = g
            step = np.linalg.solve(J, -res[:, :, None])[:, :, 0]
            # backtracking on the residual norm
            r0 = np.linalg.norm(res, axis=1)
            t = np.ones(n)
            for _ in range(30):
                trial = residual(p + t[:, None] * step[:, :3], lam + t * step[:, 3])
                bad = np.linalg.norm(trial, axis=1) > (1 - 1e-4 * t) * r0
                bad &= r0 > NEWTON_TOL
                if not np.any(bad):
                    break
                t = np.where(bad, 0.5 * t, t)
            p = p + t[:, None] * step[:, :3]
            lam = lam + t * step[:, 3]
        return p, converged

    def closest_point(self, x, check=True):
        """Closest point on the barrier and a per-point convergence flag."""
        X, single = _as_points(x)
        p = self._closest_closed_form(X)
        if p is None:
            p, conv = self._closest_newton(X)
            if check and not np.all(conv):
                raise NoConvergence(f"closest-point iteration failed at {int(np.sum(~conv))} points")
        else:
            conv = np.ones(len(X), dtype=bool)
        return (p[0], conv[0]) if single else (p, conv)

    def signed_distance(self, x, check_width=True):
        """Signed distance, closest point and convergence flag.

        The sign is positive when ``<x - p, nu_S(p)> >= 0``.
        """
        X, single = _as_points(x)
        p, conv = self.closest_point(X)
        diff = X - p
        dist = np.linalg.norm(diff, axis=1)
        sgn = np.where(np.sum(diff * self.normal(p), axis=1) >= 0, 1.0, -1.0)
        d = sgn * dist
        if check_width:
            # catalog quadrics only focus on the side where phi < 0
            limited = (self.phi(X) < 0) if self.kind != "custom" else np.ones(len(X), bool)
            over = limited & (dist > self.tube_width)
        if check_width and np.any(over):
            raise OutsideTubular(f"|d| = {dist.max():.6g} exceeds tubular width {self.tube_width:.6g}")
        if single:
            return DistanceResult(float(d[0]), p[0], bool(conv[0]))
        return DistanceResult(d, p, conv)

    # -- curvature ---------------------------------------------------------
    def shape_operator_3d(self, p):
        """``A_S`` at points of S as a 3x3 form acting on the tangent plane.

        Normal directions are annihilated, so ``u.A.v = A_S(u^T, v^T)``.
        """
        P, single = _as_points(p)
        g = self.grad(P)
        gn = np.linalg.norm(g, axis=1)
        if np.any(gn < GRAD_FLOOR):
            raise DegenerateGradient("level-set gradient vanishes")
        n = g / gn[:, None]
        Pt = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
        A = self.orientation_sign * Pt @ self.hessian() @ Pt / gn[:, None, None]
        return A[0] if single else A

    def surface_frame(self, p, basis=None):
        """Normal, tangent basis and curvature data at a point on S."""
        p = np.asarray(p, dtype=float)
        if abs(self.phi(p)) > 1e-8:
            raise ValueError("surface_frame requires a point on the barrier")
        nu = self.normal(p)
        if basis is None:
            t1, t2 = _tangent_pair(nu)
            E = np.vstack([t1[0], t2[0]])
        else:
            E = np.asarray(basis, dtype=float)
        A3 = self.shape_operator_3d(p)
        A = E @ A3 @ E.T
        A = 0.5 * (A + A.T)
        H = float(np.trace(A))
        Aring = A - 0.5 * H * np.eye(2)
        return BarrierPointFrame(p, nu, E, A, H, Aring)

    @property
    def K(self):
        """Ball-curvature bound (closed form for catalog surfaces, sampled otherwise)."""
        if self._K is None:
            rng = np.random.default_rng(0)
            self._K = estimate_bounds(self, self.sample(1500, rng), with_derivatives=False).K
        return self._K

    # -- sampling ------------------------------------------------------------
    def sample(self, n, rng=None, extent=2.0):
        """Random points on S (``extent`` bounds unbounded directions)."""
        rng = np.random.default_rng(rng)
        k = self.kind
        if k == "plane":
            n_ = self.b
            t1, t2 = _tangent_pair(n_[None])
            uv = rng.uniform(-extent, extent, size=(n, 2))
            p0 = -self.c * n_
            return p0 + uv[:, :1] * t1 + uv[:, 1:] * t2
        if k in ("sphere", "ellipsoid"):
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            if k == "sphere":
                return np.array(self.params[1:4]) + self.params[0] * v
            ax = np.array(self.params[:3])
            pts = np.array(self.params[3:6]) + v * ax
            return pts
        if k == "cylinder":
            R, a, c0 = self.params[0], np.array(self.params[1:4]), np.array(self.params[4:7])
            t1, t2 = _tangent_pair(a[None])
            th = rng.uniform(0, 2 * np.pi, n)
            z = rng.uniform(-extent, extent, n)
            return c0 + R * (np.cos(th)[:, None] * t1 + np.sin(th)[:, None] * t2) + z[:, None] * a
        if k == "slab":
            # matched pairs: each in-plane location appears on both planes
            r, nn, off = self.params[0], np.array(self.params[1:4]), self.params[4]
            t1, t2 = _tangent_pair(nn[None])
            m = (n + 1) // 2
            uv = rng.uniform(-extent, extent, size=(m, 2))
            base = uv[:, :1] * t1 + uv[:, 1:] * t2
            top = base + (off + r / 2) * nn
            bot = base + (off - r / 2) * nn
            return np.vstack([top, bot])[:n]
        # custom: project random points from a box
        x = rng.uniform(-extent, extent, size=(4 * n, 3))
        pts, conv = self.closest_point(x, check=False)
        pts = pts[conv & (np.abs(self.phi(pts)) < 1e-10)]
        if len(pts) < n:
            raise InsufficientSamples("could not sample the custom barrier")
        return pts[:n]


# ---------------------------------------------------------------------------
# ball curvatures and bounds
# ---------------------------------------------------------------------------

def ball_curvatures(barrier, samples, chunk=256):
    """Interior and exterior ball curvatures restricted to a sample set.

    ``Zbar(p) = max_q 2<p - q, nu_S(p)> / |p - q|^2`` and ``Zlow`` the
    corresponding minimum, over all other samples ``q``.
    """
    S = np.asarray(samples, dtype=float)
    if S.ndim != 2 or len(S) < 2:
        raise InsufficientSamples("need at least two sample points")
    nu = barrier.normal(S)
    n = len(S)
    zbar = np.empty(n)
    zlow = np.empty(n)
    for i0 in range(0, n, chunk):
        P = S[i0:i0 + chunk]
        D = P[:, None, :] - S[None, :, :]
        num = 2.0 * np.einsum("ijk,ik->ij", D, nu[i0:i0 + chunk])
        den = np.einsum("ijk,ijk->ij", D, D)
        same = den <= 1e-28
        ratio = np.where(same, 0.0, num / np.where(same, 1.0, den))
        zbar[i0:i0 + chunk] = np.where(same, -np.inf, ratio).max(axis=1)
        zlow[i0:i0 + chunk] = np.where(same, np.inf, ratio).min(axis=1)
    if not np.all(np.isfinite(zbar)):
        raise InsufficientSamples("need at least two distinct sample points")
    return zbar, zlow


def _rotate_frame(nu0, nu1, vecs):
    """Apply the minimal rotation taking ``nu0`` to ``nu1`` to each vector.

    For nearby points on a surface this agrees with parallel transport to
    second order and keeps orthonormal frames orthonormal.
    """
    k = np.cross(nu0, nu1)
    c = np.sum(nu0 * nu1, axis=-1, keepdims=True)
    out = []
    for v in vecs:
        kv = np.cross(k, v)
        out.append(v + kv + np.cross(k, kv) / (1.0 + c))
    return out


def _aring_in(barrier, p, nu0, E1, E2):
    A3 = barrier.shape_operator_3d(p)
    nu = barrier.normal(p)
    e1, e2 = _rotate_frame(nu0, nu, (E1, E2))
    a11 = np.einsum("ni,nij,nj->n", e1, A3, e1)
    a12 = np.einsum("ni,nij,nj->n", e1, A3, e2)
    a22 = np.einsum("ni,nij,nj->n", e2, A3, e2)
    return np.stack([a11, a12, a22], axis=1), a11 + a22


def estimate_bounds(barrier, samples, h_floor=1e-6, with_derivatives=True):
    """Sampled estimates of ``K``, ``L1`` and ``L2``.

    ``K = max(max Zbar, K_MIN)``.  ``L1`` bounds ``|grad_S A_S| / H_S`` and
    ``L2`` bounds ``|grad_S^2 Aring_S|``, both from central differences along
    the surface with step ``1e-3 / K``.  These are estimates, not certified
    bounds.
    """
    S = np.asarray(samples, dtype=float)
    if S.ndim != 2 or len(S) < 2:
        raise InsufficientSamples("need at least two sample points")
    zbar, _ = ball_curvatures(barrier, S)
    # the principal curvatures are also lower bounds for Zbar
    A3 = barrier.shape_operator_3d(S)
    kmax = np.linalg.eigvalsh(A3).max(axis=1)
    K = float(max(zbar.max(), kmax.max(), K_MIN))
    if not with_derivatives:
        return BarrierBounds(K, 0.0, 0.0, len(S))

    h = 1e-3 / K
    nu = barrier.normal(S)
    t1, t2 = _tangent_pair(nu)
    T = (t1, t2)

    def comps(points):
        p, _ = barrier.closest_point(points)
        full, H = _aring_in(barrier, p, nu, t1, t2)
        return full, H

    A0, H0 = comps(S)
    grad_sq = np.zeros(len(S))
    for k in range(2):
        Ap, _ = comps(S + h * T[k])
        Am, _ = comps(S - h * T[k])
        dA = (Ap - Am) / (2 * h)
        # components (11, 12, 22); the 12 entry appears twice in the norm
        grad_sq += dA[:, 0] ** 2 + 2 * dA[:, 1] ** 2 + dA[:, 2] ** 2
    ok = H0 >= h_floor
    L1 = float(np.max(np.sqrt(grad_sq[ok]) / H0[ok])) if np.any(ok) else 0.0

    def aring(points):
        full, H = comps(points)
        out = full.copy()
        out[:, 0] -= 0.5 * H
        out[:, 2] -= 0.5 * H
        return out

    R0 = aring(S)
    hess_sq = np.zeros(len(S))
    for k in range(2):
        Rp, Rm = aring(S + h * T[k]), aring(S - h * T[k])
        d2 = (Rp - 2 * R0 + Rm) / h ** 2
        hess_sq += d2[:, 0] ** 2 + 2 * d2[:, 1] ** 2 + d2[:, 2] ** 2
    Rpp = aring(S + h * (t1 + t2))
    Rpm = aring(S + h * (t1 - t2))
    Rmp = aring(S - h * (t1 - t2))
    Rmm = aring(S - h * (t1 + t2))
    dm = (Rpp - Rpm - Rmp + Rmm) / (4 * h * h)
    hess_sq += 2 * (dm[:, 0] ** 2 + 2 * dm[:, 1] ** 2 + dm[:, 2] ** 2)
    L2 = float(np.max(np.sqrt(hess_sq)))
    return BarrierBounds(K, L1, L2, len(S))


# ---------------------------------------------------------------------------
# tensor extension
# ---------------------------------------------------------------------------

@dataclass
class ExtendedFields:
    """Extended ``A_S``, ``g_S`` (3x3 forms) and ``nu_S`` covector at points."""

    A: np.ndarray
    g: np.ndarray
    nu_flat: np.ndarray
    chi: np.ndarray
    d: np.ndarray
    foot: np.ndarray


def extended_fields(barrier, x, K=None):
    """All three extended tensors at a batch of points.

    Each field equals ``chi_K(d(x))`` times the tensor at the closest point
    ``p_x`` (tangentially projected for ``A_S`` and ``g_S``).  Points outside
    the support ``|d| >= 1/(2K)`` get zeros and no closest-point solve is
    attempted when the distance is already known to be too large.
    """
    X, single = _as_points(x)
    K = barrier.K if K is None else K
    n = len(X)
    A = np.zeros((n, 3, 3))
    g = np.zeros((n, 3, 3))
    nf = np.zeros((n, 3))
    cw = np.zeros(n)
    d = np.full(n, np.inf)
    foot = np.full((n, 3), np.nan)
    support = 0.5 / K
    # cheap screen: |phi| / |grad phi| is a first-order distance estimate
    gnorm = np.linalg.norm(barrier.grad(X), axis=1)
    est = np.abs(barrier.phi(X)) / np.maximum(gnorm, GRAD_FLOOR)
    cand = est < 2.0 * support
    if np.any(cand):
        res = barrier.signed_distance(X[cand], check_width=False)
        d[cand] = res.d
        foot[cand] = res.p
        inside = np.abs(res.d) < support
        idx = np.flatnonzero(cand)[inside]
        if len(idx):
            p = res.p[inside]
            c = cutoff_chi(res.d[inside], K)
            nu = barrier.normal(p)
            Pt = np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]
            A[idx] = c[:, None, None] * barrier.shape_operator_3d(p)
            g[idx] = c[:, None, None] * Pt
            nf[idx] = c[:, None] * nu
            cw[idx] = c
    out = ExtendedFields(A, g, nf, cw, d, foot)
    if single:
        return ExtendedFields(A[0], g[0], nf[0], cw[0], d[0], foot[0])
    return out


def extend_tensor(barrier, x, which, K=None):
    """Extended ``A_S`` or ``g_S`` (3x3) or ``nu_flat`` (3-vector) at ``x``."""
    f = extended_fields(barrier, x, K)
    if which == "A_S":
        return f.A
    if which == "g_S":
        return f.g
    if which == "nu_flat":
        return f.nu_flat
    raise ValueError(f"unknown tensor {which!r}")
