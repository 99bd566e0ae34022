"""The (0,5) perturbation tensor built from the barrier and the perturbed
second fundamental form of an evolving surface.

``P(U, V, X, Y, Z) = (A_S(U,X) nu(V) + A_S(V,X) nu(U)) g_S(Y,Z)
                     - (g_S(U,X) nu(V) + g_S(V,X) nu(U)) A_S(Y,Z)``

with ``A_S``, ``g_S`` and ``nu = nu_S^flat`` the cut-off extensions from
:mod:`fbmcf.barrier`.  ``P`` vanishes identically for umbilic barriers and
its restriction ``P^Sigma(u, v) = P(u, v, nu, nu, nu)`` cancels the
off-diagonal part of the second fundamental form along the free boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barrier import _tangent_pair, extended_fields


def _bil(F, u, v):
    return np.einsum("...i,...ij,...j->...", u, F, v)


def _P_from_fields(A, g, nf, U, V, X, Y, Z):
    nU = np.sum(nf * U, axis=-1)
    nV = np.sum(nf * V, axis=-1)
    first = (_bil(A, U, X) * nV + _bil(A, V, X) * nU) * _bil(g, Y, Z)
    second = (_bil(g, U, X) * nV + _bil(g, V, X) * nU) * _bil(A, Y, Z)
    return first - second


def eval_P(barrier, x, U, V, X, Y, Z, K=None):
    """Evaluate ``P(U, V, X, Y, Z)`` at point(s) ``x``.

    All vector arguments broadcast against ``x``; returns a scalar for a
    single point.
    """
    x = np.asarray(x, dtype=float)
    f = extended_fields(barrier, x, K)
    vecs = [np.broadcast_to(np.asarray(w, dtype=float), x.shape) for w in (U, V, X, Y, Z)]
    out = _P_from_fields(f.A, f.g, f.nu_flat, *vecs)
    return float(out) if np.ndim(out) == 0 else out


def p_sigma_from_fields(fields, nu, E):
    """``P^Sigma(e_a, e_b)`` in the tangent bases ``E`` (rows) with normals ``nu``."""
    A, g, nf = fields.A, fields.g, fields.nu_flat
    a = np.einsum("nai,nij,nj->na", E, A, nu)
    b = np.einsum("nai,ni->na", E, nf)
    gn = np.einsum("nai,nij,nj->na", E, g, nu)
    gnn = _bil(g, nu, nu)
    Ann = _bil(A, nu, nu)
    ab = a[:, :, None] * b[:, None, :]
    gb = gn[:, :, None] * b[:, None, :]
    return (ab + np.swapaxes(ab, 1, 2)) * gnn[:, None, None] - (gb + np.swapaxes(gb, 1, 2)) * Ann[:, None, None]


def eval_P_sigma(geometry, positions, barrier, K=None):
    """``P^Sigma`` per vertex in the vertex tangent frame of ``geometry``."""
    f = extended_fields(barrier, positions, K)
    return p_sigma_from_fields(f, geometry.nu, geometry.tangent_basis)


@dataclass
class PerturbedSFF:
    """Per-vertex perturbed second fundamental form (arrays over vertices)."""

    P_sigma: np.ndarray
    A_tilde: np.ndarray
    H_tilde: np.ndarray
    A_tilde_norm2: np.ndarray

    @property
    def lambda_min(self):
        return np.linalg.eigvalsh(self.A_tilde)[:, 0]


def perturbed_sff(mesh, barrier, geometry, K=None, fields=None):
    """``A~ = A + P^Sigma`` in the shared per-vertex tangent frame."""
    if fields is None:
        fields = extended_fields(barrier, mesh.positions, K)
    Ps = p_sigma_from_fields(fields, geometry.nu, geometry.tangent_basis)
    At = geometry.A + Ps
    Ht = At[:, 0, 0] + At[:, 1, 1]
    return PerturbedSFF(Ps, At, Ht, np.sum(At * At, axis=(1, 2)))


def boundary_decomposition(geometry, psff, frames):
    """Residuals of the boundary splitting of ``P^Sigma`` in the Fermi frame.

    Returns per-boundary-vertex arrays ``(|P11|, |P22|, |P12 + h12|)``.
    """
    v = frames.vertices
    E = geometry.tangent_basis[v]
    # Fermi directions in the vertex tangent basis
    n_c = np.einsum("nai,ni->na", E, frames.N)
    t_c = np.einsum("nai,ni->na", E, frames.T)
    Ps = psff.P_sigma[v]
    A = geometry.A[v]
    p11 = np.einsum("na,nab,nb->n", n_c, Ps, n_c)
    p22 = np.einsum("na,nab,nb->n", t_c, Ps, t_c)
    p12 = np.einsum("na,nab,nb->n", n_c, Ps, t_c)
    h12 = np.einsum("na,nab,nb->n", n_c, A, t_c)
    return np.abs(p11), np.abs(p22), np.abs(p12 + h12)


@dataclass
class IdentityReport:
    n_points: int
    vanish_normal_slot: float
    vanish_tangent_pair: float
    vanish_repeated: float
    vanish_normal_pair: float
    normal_derivative: float
    symmetry: float
    c0_bound_violation: float

    def as_dict(self):
        return dict(self.__dict__)


def identity_suite(barrier, n_points=100, seed=0, fd_step=None, K=None):
    """Check the vanishing properties of ``P`` at random barrier points.

    Clauses, each reported as a maximum absolute residual:

    (i)   P = 0 when X, Y or Z is normal to S;
    (ii)  P = 0 when U and V are tangent to S;
    (iii) P(U, V, V, V, V) = 0 for tangent V;
    (iv)  P(nu_S, nu_S, ., ., .) = 0;
    (v)   the derivative of P along nu_S vanishes (central differences).

    The default difference step ``1 / (16 K)`` keeps both samples on the
    plateau ``|d| <= 1/(4K)`` where the extension is constant along normal
    lines, so the quotient carries no truncation error, only roundoff.

    Also reports the symmetry defect in (U, V) and the amount by which
    ``|P(u, v, n, n, n)|`` exceeds ``4 max |Aring_S|`` for unit arguments.
    """
    rng = np.random.default_rng(seed)
    K = barrier.K if K is None else K
    if fd_step is None:
        fd_step = 1.0 / (16.0 * K)
    p = barrier.sample(n_points, rng)
    p, _ = barrier.closest_point(p)
    nS = barrier.normal(p)
    t1, t2 = _tangent_pair(nS)

    def rand_vec():
        return rng.normal(size=(n_points, 3))

    def rand_tan():
        c = rng.normal(size=(n_points, 2))
        return c[:, :1] * t1 + c[:, 1:] * t2

    f = extended_fields(barrier, p, K)

    def P(U, V, X, Y, Z, fields=f):
        return _P_from_fields(fields.A, fields.g, fields.nu_flat, U, V, X, Y, Z)

    U, V, X, Y, Z = (rand_vec() for _ in range(5))
    r1 = max(np.abs(P(U, V, nS, Y, Z)).max(), np.abs(P(U, V, X, nS, Z)).max(), np.abs(P(U, V, X, Y, nS)).max())
    r2 = np.abs(P(rand_tan(), rand_tan(), X, Y, Z)).max()
    Vt = rand_tan()
    r3 = np.abs(P(U, Vt, Vt, Vt, Vt)).max()
    r4 = np.abs(P(nS, nS, X, Y, Z)).max()
    fp = extended_fields(barrier, p + fd_step * nS, K)
    fm = extended_fields(barrier, p - fd_step * nS, K)
    r5 = np.abs((P(U, V, X, Y, Z, fp) - P(U, V, X, Y, Z, fm)) / (2 * fd_step)).max()
    sym = np.abs(P(U, V, X, Y, Z) - P(V, U, X, Y, Z)).max()

    # C0 bound: for unit u, v, n one has |P(u, v, n, n, n)| <= 4 |Aring_S|
    A3 = barrier.shape_operator_3d(p)
    a11, a12, a22 = _bil(A3, t1, t1), _bil(A3, t1, t2), _bil(A3, t2, t2)
    aring = np.sqrt(0.5 * (a11 - a22) ** 2 + 2 * a12 ** 2)

    def unit(w):
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    u, v, nn = unit(rand_vec()), unit(rand_vec()), unit(rand_vec())
    viol = np.max(np.abs(P(u, v, nn, nn, nn)) - 4 * aring.max())
    return IdentityReport(n_points, float(r1), float(r2), float(r3), float(r4), float(r5), float(sym),
                          float(max(viol, 0.0)))
