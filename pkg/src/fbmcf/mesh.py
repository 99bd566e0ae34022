"""Triangle meshes with boundary, discrete curvature and boundary frames.

Curvature is estimated per vertex by a least-squares height-function fit in
the local tangent frame.  The fit carries linear, quadratic and cubic terms
so that the second fundamental form is second-order accurate on irregular
stencils.  Boundary vertices augment their one-sided stencil with ghost
points obtained by reflecting each neighbor across the barrier (through the
tangent plane at the neighbor's own closest barrier point); this restores a
symmetric stencil and encodes the orthogonal-contact condition.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    BoundaryOffSurface,
    InconsistentOrientation,
    InvalidParams,
    NonManifold,
    QuadricFitSingular,
)

AREA_FLOOR = 1e-14
MIN_STENCIL = 14
MIN_INTERIOR = 6


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------

@dataclass
class HalfEdgeAdjacency:
    """Half-edge connectivity of an oriented triangle mesh.

    Half-edge ``h = 3 f + k`` runs from ``faces[f, k]`` to ``faces[f, (k+1) % 3]``.
    ``twin[h]`` is -1 on the boundary.
    """

    n_vertices: int
    he_from: np.ndarray
    he_to: np.ndarray
    twin: np.ndarray
    edges: np.ndarray  # (n_edges, 2) sorted vertex pairs
    boundary_edges: np.ndarray  # (n_b, 2) oriented as traversed by their face
    loops: list  # ordered vertex index arrays, one per boundary loop
    boundary_flags: np.ndarray


def build_halfedge(faces, n_vertices=None):
    """Build half-edge adjacency and enumerate boundary loops.

    Raises
    ------
    NonManifold
        If an edge borders more than two faces.
    InconsistentOrientation
        If two faces traverse a shared edge in the same direction.
    """
    F = np.asarray(faces, dtype=np.int64)
    if F.ndim != 2 or F.shape[1] != 3:
        raise ValueError("faces must have shape (m, 3)")
    nv = int(F.max()) + 1 if n_vertices is None else int(n_vertices)
    if F.min() < 0 or F.max() >= nv:
        raise ValueError("face indices out of range")
    he_from = F.ravel()
    he_to = np.roll(F, -1, axis=1).ravel()
    nh = len(he_from)

    directed = {}
    for h in range(nh):
        key = (int(he_from[h]), int(he_to[h]))
        if key in directed:
            # the same directed edge twice: either >2 faces or flipped faces
            a, b = key
            count = int(np.sum((np.minimum(he_from, he_to) == min(a, b)) & (np.maximum(he_from, he_to) == max(a, b))))
            if count > 2:
                raise NonManifold(f"edge {min(a, b)}-{max(a, b)} borders {count} faces")
            raise InconsistentOrientation(f"edge {a}->{b} traversed twice in the same direction")
        directed[key] = h

    twin = np.full(nh, -1, dtype=np.int64)
    undirected = {}
    for (a, b), h in directed.items():
        k = (min(a, b), max(a, b))
        undirected.setdefault(k, []).append(h)
        g = directed.get((b, a))
        if g is not None:
            twin[h] = g
    for k, hs in undirected.items():
        if len(hs) > 2:
            raise NonManifold(f"edge {k[0]}-{k[1]} borders {len(hs)} faces")

    edges = np.array(sorted(undirected), dtype=np.int64).reshape(-1, 2)
    bmask = twin < 0
    bedges = np.stack([he_from[bmask], he_to[bmask]], axis=1)

    # boundary loops: follow he_to along boundary half-edges
    nxt = {}
    for a, b in bedges:
        if int(a) in nxt:
            raise NonManifold(f"vertex {int(a)} is a boundary pinch point")
        nxt[int(a)] = int(b)
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            if v in seen or v not in nxt:
                raise NonManifold("boundary edges do not form closed loops")
            loop.append(v)
            seen.add(v)
            v = nxt[v]
        loops.append(np.array(loop, dtype=np.int64))
    flags = np.zeros(nv, dtype=bool)
    if len(bedges):
        flags[bedges.ravel()] = True
    return HalfEdgeAdjacency(nv, he_from, he_to, twin, edges, bedges, loops, flags)


def _padded(lists):
    m = max((len(l) for l in lists), default=0)
    out = np.full((len(lists), max(m, 1)), -1, dtype=np.int64)
    for i, l in enumerate(lists):
        out[i, :len(l)] = l
    return out


# ---------------------------------------------------------------------------
# mesh container
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TriMesh:
    """Oriented triangle mesh.  Topology is fixed; positions may change."""

    positions: np.ndarray
    faces: np.ndarray
    adjacency: HalfEdgeAdjacency = None
    _rings: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.adjacency is None:
            self.adjacency = build_halfedge(self.faces, len(self.positions))

    @property
    def n_vertices(self):
        return len(self.positions)

    @property
    def boundary_flags(self):
        return self.adjacency.boundary_flags

    @property
    def boundary_vertices(self):
        return np.flatnonzero(self.adjacency.boundary_flags)

    def with_positions(self, positions):
        """Copy sharing topology (and cached neighborhoods) with new positions."""
        m = TriMesh(np.array(positions, dtype=float), self.faces, self.adjacency)
        m._rings = self._rings
        return m

    # -- neighborhoods -----------------------------------------------------
    def _adjacency_matrix(self):
        if "adj" not in self._rings:
            e = self.adjacency.edges
            n = self.n_vertices
            A = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                              shape=(n, n)).tocsr()
            self._rings["adj"] = A
        return self._rings["adj"]

    def ring(self, k):
        """List of vertex index arrays: the k-ring of each vertex, without itself."""
        if k not in self._rings:
            A = self._adjacency_matrix()
            n = self.n_vertices
            R = sp.identity(n, format="csr")
            for _ in range(k):
                R = (R + R @ A).tocsr()
                R.data[:] = 1.0
            out = []
            for i in range(n):
                nb = R.indices[R.indptr[i]:R.indptr[i + 1]]
                out.append(np.sort(nb[nb != i]))
            self._rings[k] = out
        return self._rings[k]

    def ring_padded(self, k):
        key = ("pad", k)
        if key not in self._rings:
            self._rings[key] = _padded(self.ring(k))
        return self._rings[key]

    # -- elementary geometry -------------------------------------------------
    def face_normals(self):
        """Unnormalized face normals (length = twice the face area).

        Cached per instance; positions are not meant to be edited in place.
        """
        if "fn" not in self._cache:
            P = self.positions
            F = self.faces
            self._cache["fn"] = np.cross(P[F[:, 1]] - P[F[:, 0]], P[F[:, 2]] - P[F[:, 0]])
        return self._cache["fn"]

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def vertex_areas(self):
        """Barycentric vertex areas (one third of each incident face)."""
        a = self.face_areas() / 3.0
        out = np.zeros(self.n_vertices)
        for k in range(3):
            np.add.at(out, self.faces[:, k], a)
        return out

    def vertex_normals(self):
        """Area-weighted average of incident face normals, normalized."""
        fn = self.face_normals()
        out = np.zeros((self.n_vertices, 3))
        for k in range(3):
            np.add.at(out, self.faces[:, k], fn)
        return out / np.linalg.norm(out, axis=1, keepdims=True)

    def edge_lengths(self):
        e = self.adjacency.edges
        return np.linalg.norm(self.positions[e[:, 0]] - self.positions[e[:, 1]], axis=1)

    def boundary_length(self):
        b = self.adjacency.boundary_edges
        if len(b) == 0:
            return 0.0
        return float(np.linalg.norm(self.positions[b[:, 0]] - self.positions[b[:, 1]], axis=1).sum())


def mesh_quality(mesh):
    """Return ``(min_angle_degrees, max_edge_ratio, min_area)`` over all faces."""
    P = mesh.positions
    F = mesh.faces
    a = P[F[:, 1]] - P[F[:, 0]]
    b = P[F[:, 2]] - P[F[:, 1]]
    c = P[F[:, 0]] - P[F[:, 2]]
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))

    def angle(u, v, lu, lv):
        cosang = -np.sum(u * v, axis=1) / (lu * lv)
        return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))

    angles = np.stack([angle(c, a, lc, la), angle(a, b, la, lb), angle(b, c, lb, lc)], axis=1)
    L = np.stack([la, lb, lc], axis=1)
    ratio = L.max(axis=1) / L.min(axis=1)
    return float(angles.min()), float(ratio.max()), float(mesh.face_areas().min())


# ---------------------------------------------------------------------------
# vertex geometry
# ---------------------------------------------------------------------------

@dataclass
class VertexGeometry:
    """Per-vertex discrete geometry (arrays over vertices).

    ``A`` is the second fundamental form in the orthonormal ``tangent_basis``
    (rows), with ``A(u, v) = -<D_u v, nu>``.
    """

    nu: np.ndarray
    tangent_basis: np.ndarray  # (n, 2, 3)
    A: np.ndarray  # (n, 2, 2)
    H: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    A_norm2: np.ndarray
    vertex_area: np.ndarray
    _mesh: object = field(default=None, repr=False)
    _grad_H: np.ndarray = field(default=None, repr=False)

    @property
    def grad_H(self):
        """Tangential gradient of H per vertex, shape (n, 3); computed on first use."""
        if self._grad_H is None:
            self._grad_H = _grad_H(self._mesh, self.nu, self.tangent_basis, self.H)
        return self._grad_H

    @property
    def A3(self):
        """Second fundamental form as an ambient 3x3 form (zero on nu)."""
        E = self.tangent_basis
        return np.einsum("nai,nab,nbj->nij", E, self.A, E)

    @property
    def Aring_norm(self):
        return np.sqrt(np.maximum(self.A_norm2 - 0.5 * self.H ** 2, 0.0))


def _frames_from_normals(n):
    ref = np.where(np.abs(n[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = ref - np.sum(ref * n, axis=1, keepdims=True) * n
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


def _design(u, v, degree):
    ncol = 9 if degree >= 3 else 5
    M = np.empty(u.shape + (ncol,))
    uu, vv = u * u, v * v
    M[..., 0] = u
    M[..., 1] = v
    M[..., 2] = uu
    M[..., 3] = u * v
    M[..., 4] = vv
    if degree >= 3:
        M[..., 5] = uu * u
        M[..., 6] = uu * v
        M[..., 7] = u * vv
        M[..., 8] = vv * v
    return M


def _project(D, e):
    return (D @ e[:, :, None])[..., 0]


def _jet_fit(center, n, e1, e2, pts, mask, degree=3):
    """Batched least-squares height fit ``z = f(x, y)``, ``f(0) = 0``.

    Returns the fitted coefficients in physical units as a dict with keys
    fx, fy, fxx, fxy, fyy (and the cubic partials when ``degree == 3``)
    plus a per-vertex flag marking rank-deficient systems.
    """
    # padded slots get zero offsets; with no constant term they drop out
    D = (pts - center[:, None, :]) * mask[..., None]
    x, y, z = _project(D, e1), _project(D, e2), _project(D, n)
    cnt = np.maximum(mask.sum(axis=1), 1)
    s = np.sqrt(np.sum(x * x + y * y, axis=1) / cnt)
    s = np.where(s > 0, s, 1.0)
    inv = (1.0 / s)[:, None]
    M = _design(x * inv, y * inv, degree)
    Mt = np.swapaxes(M, 1, 2)
    G = Mt @ M
    rhs = (Mt @ (z * inv)[..., None])[..., 0]
    c, singular = _spd_solve(G, rhs)
    out = {
        "fx": c[:, 0],
        "fy": c[:, 1],
        "fxx": 2 * c[:, 2] / s,
        "fxy": c[:, 3] / s,
        "fyy": 2 * c[:, 4] / s,
    }
    if degree >= 3:
        s2 = s * s
        out.update(fxxx=6 * c[:, 5] / s2, fxxy=2 * c[:, 6] / s2, fxyy=2 * c[:, 7] / s2, fyyy=6 * c[:, 8] / s2)
    return out, singular


def _lower_inverse(L):
    """Batched inverse of lower-triangular matrices by forward substitution."""
    k = L.shape[-1]
    X = np.zeros_like(L)
    d = np.diagonal(L, axis1=1, axis2=2)
    for j in range(k):
        X[:, j, j] = 1.0
        if j:
            X[:, j, :j] -= (L[:, j:j + 1, :j] @ X[:, :j, :j])[:, 0]
        X[:, j, :j + 1] /= d[:, j:j + 1]
    return X


def _spd_solve(G, rhs, rtol=1e-9):
    """Solve batched normal equations and flag rank-deficient systems.

    With ``G = L L^T`` one has ``lambda_min >= 1 / |L^-1|_F^2`` and
    ``lambda_max <= tr G``, a cheap screen.  Systems that fail it get an
    exact eigenvalue check and, if really ill-conditioned, a tiny ridge.
    """
    tr = np.trace(G, axis1=1, axis2=2)
    try:
        Linv = _lower_inverse(np.linalg.cholesky(G))
        lo = 1.0 / np.sum(Linv * Linv, axis=(1, 2))
        suspect = ~(lo > rtol * tr)
    except np.linalg.LinAlgError:
        Linv = None
        suspect = np.ones(len(G), dtype=bool)
    singular = np.zeros(len(G), dtype=bool)
    if np.any(suspect):
        ev = np.linalg.eigvalsh(G[suspect])
        singular[suspect] = ev[:, 0] <= rtol * np.maximum(ev[:, -1], 1e-300)
    if Linv is None or np.any(suspect):
        ridge = np.where(singular, 1e-9 * np.maximum(tr, 1e-300), 0.0)
        G = G + np.eye(G.shape[1])[None] * ridge[:, None, None]
        return np.linalg.solve(G, rhs[..., None])[..., 0], singular
    y = Linv @ rhs[..., None]
    return (np.swapaxes(Linv, 1, 2) @ y)[..., 0], singular


def _shape_from_jet(jet, n, e1, e2):
    """Normal, orthonormal tangent basis and second fundamental form of the fit."""
    fx, fy = jet["fx"], jet["fy"]
    W = np.sqrt(1 + fx * fx + fy * fy)
    II = -np.stack([np.stack([jet["fxx"], jet["fxy"]], -1), np.stack([jet["fxy"], jet["fyy"]], -1)], -2) / W[:, None, None]
    # tangent vectors of the graph in local coordinates
    J = np.zeros((len(fx), 3, 2))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, 2, 0] = fx
    J[:, 2, 1] = fy
    Qm, Rm = np.linalg.qr(J)
    sgn = np.sign(np.diagonal(Rm, axis1=1, axis2=2))
    Qm = Qm * sgn[:, None, :]
    Rm = Rm * sgn[:, :, None]
    Rinv = np.linalg.inv(Rm)
    A = np.einsum("nki,nkl,nlj->nij", Rinv, II, Rinv)
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    frame = np.stack([e1, e2, n], axis=1)  # rows: local axes in global coords
    E = np.einsum("nkc,nkj->ncj", Qm, frame)  # (n, 2, 3)
    nu_local = np.stack([-fx, -fy, np.ones_like(fx)], axis=1) / W[:, None]
    nu = np.einsum("nk,nkj->nj", nu_local, frame)
    return nu, E, A


@dataclass
class _Stencil:
    idx: np.ndarray  # (n, m) vertex indices, -1 padded
    ghost: np.ndarray  # (n, m) bool: entry is the reflection of idx


def _stencils(mesh, boundary_aware=True):
    """Fitting stencils: 2-ring, widened to the 3-ring where too small.

    Boundary vertices additionally carry ghost copies of every non-boundary
    neighbor.
    """
    key = ("stencil", boundary_aware)
    if key in mesh._rings:
        return mesh._rings[key]
    r2, r3 = mesh.ring(2), mesh.ring(3)
    bflag = mesh.boundary_flags
    lists, ghosts = [], []
    for i in range(mesh.n_vertices):
        nb = r2[i]
        if boundary_aware and bflag[i]:
            g = nb[~bflag[nb]]
            # the ghost-symmetric fit needs enough off-boundary points for
            # the terms odd in the conormal direction
            if len(nb) + len(g) < MIN_STENCIL or len(g) < MIN_INTERIOR:
                nb = r3[i]
                g = nb[~bflag[nb]]
            lists.append(np.r_[nb, g])
            ghosts.append(np.r_[np.zeros(len(nb), bool), np.ones(len(g), bool)])
        else:
            if len(nb) < MIN_STENCIL:
                nb = r3[i]
            lists.append(nb)
            ghosts.append(np.zeros(len(nb), bool))
    idx = _padded(lists)
    gh = np.zeros(idx.shape, dtype=bool)
    for i, g in enumerate(ghosts):
        gh[i, :len(g)] = g
    st = _Stencil(idx, gh)
    mesh._rings[key] = st
    return st


def reflect_across(barrier, x):
    """Mirror points through the tangent plane at their own closest barrier point."""
    res = barrier.signed_distance(x, check_width=False)
    return x - 2.0 * res.d[:, None] * barrier.normal(res.p)


def vertex_geometry(mesh, barrier=None, ghosts=True):
    """Discrete normal, tangent frame, second fundamental form and grad H.

    Parameters
    ----------
    mesh : TriMesh
    barrier : BarrierSurface, optional
        Needed for ghost reflection at boundary vertices.  Without it boundary
        vertices use their one-sided stencil.
    ghosts : bool
        Disable to force one-sided boundary stencils.
    """
    P = mesh.positions
    n = mesh.n_vertices
    use_ghosts = ghosts and barrier is not None and mesh.boundary_flags.any()
    st = _stencils(mesh, boundary_aware=use_ghosts)
    idx = st.idx
    mask = idx >= 0
    pts = P[np.where(mask, idx, 0)]
    nrm = mesh.vertex_normals()
    bflag = mesh.boundary_flags
    if use_ghosts:
        gi = np.flatnonzero(st.ghost.ravel())
        if len(gi):
            flat = pts.reshape(-1, 3)
            flat[gi] = reflect_across(barrier, flat[gi])
            pts = flat.reshape(pts.shape)
        # symmetric frame at boundary vertices: normal tangent to the barrier
        b = np.flatnonzero(bflag)
        nuS = barrier.normal(barrier.closest_point(P[b])[0])
        nb = nrm[b] - np.sum(nrm[b] * nuS, axis=1, keepdims=True) * nuS
        nrm[b] = nb / np.linalg.norm(nb, axis=1, keepdims=True)
    e1, e2 = _frames_from_normals(nrm)
    if use_ghosts:
        e1[b] = nuS
        e2[b] = np.cross(nrm[b], nuS)

    jet, singular = _jet_fit(P, nrm, e1, e2, pts, mask, degree=3)
    if np.any(singular):
        # retry with the 3-ring and no ghosts, then with a quadric only
        bad = np.flatnonzero(singular)
        idx3 = _padded([mesh.ring(3)[i] for i in bad])
        m3 = idx3 >= 0
        j2, s2 = _jet_fit(P[bad], nrm[bad], e1[bad], e2[bad], P[np.where(m3, idx3, 0)], m3, degree=3)
        if np.any(s2):
            j2, s2 = _jet_fit(P[bad], nrm[bad], e1[bad], e2[bad], P[np.where(m3, idx3, 0)], m3, degree=2)
            if np.any(s2):
                raise QuadricFitSingular(f"rank-deficient neighborhood at vertex {int(bad[np.argmax(s2)])}")
        for k in ("fx", "fy", "fxx", "fxy", "fyy"):
            jet[k][bad] = j2[k]
    nu, E, A = _shape_from_jet(jet, nrm, e1, e2)
    H = A[:, 0, 0] + A[:, 1, 1]
    k = _eig2(A)
    A2 = np.sum(A * A, axis=(1, 2))
    return VertexGeometry(nu, E, A, H, k[:, 0], k[:, 1], A2, mesh.vertex_areas(), mesh)


def _eig2(A):
    """Ascending eigenvalues of symmetric 2x2 matrices."""
    m = 0.5 * (A[:, 0, 0] + A[:, 1, 1])
    r = np.hypot(0.5 * (A[:, 0, 0] - A[:, 1, 1]), A[:, 0, 1])
    return np.stack([m - r, m + r], axis=1)


def _grad_H(mesh, nu, E, H):
    """Least-squares linear fit of H over the 1-ring, as a tangent vector."""
    idx = mesh.ring_padded(1)
    mask = idx >= 0
    safe = np.where(mask, idx, 0)
    D = mesh.positions[safe] - mesh.positions[:, None, :]
    x = _project(D, E[:, 0])
    y = _project(D, E[:, 1])
    dh = (H[safe] - H[:, None]) * mask
    X = np.stack([x, y], -1) * mask[..., None]
    Xt = np.swapaxes(X, 1, 2)
    G = Xt @ X
    r = (Xt @ dh[..., None])[..., 0]
    det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] ** 2
    ok = det > 1e-300
    g = np.zeros((len(H), 2))
    g[ok] = np.linalg.solve(G[ok], r[ok][..., None])[..., 0]
    return g[:, :1] * E[:, 0] + g[:, 1:] * E[:, 1]


# ---------------------------------------------------------------------------
# boundary frames
# ---------------------------------------------------------------------------

@dataclass
class BoundaryFrame:
    """Fermi frame at boundary vertices (arrays over ``vertices``)."""

    vertices: np.ndarray
    N: np.ndarray
    T: np.ndarray
    nu: np.ndarray
    orthogonality_residual: np.ndarray


def boundary_frame(mesh, barrier, geometry=None, tol=1e-6):
    """Outward conormal N, boundary tangent T and surface normal per boundary vertex.

    Raises
    ------
    BoundaryOffSurface
        If a boundary vertex has ``|phi| > tol``.
    """
    geom = vertex_geometry(mesh, barrier) if geometry is None else geometry
    P = mesh.positions
    verts, Ts = [], []
    for loop in mesh.adjacency.loops:
        prev = np.roll(loop, 1)
        nxt = np.roll(loop, -1)
        verts.append(loop)
        Ts.append(P[nxt] - P[prev])
    if not verts:
        e = np.zeros((0, 3))
        return BoundaryFrame(np.zeros(0, dtype=np.int64), e, e, e, np.zeros(0))
    v = np.concatenate(verts)
    phi = barrier.phi(P[v])
    if np.any(np.abs(phi) > tol):
        bad = v[np.argmax(np.abs(phi))]
        raise BoundaryOffSurface(f"boundary vertex {int(bad)} has |phi| = {np.abs(phi).max():.3g}")
    nu = geom.nu[v]
    T = np.concatenate(Ts)
    T = T - np.sum(T * nu, axis=1, keepdims=True) * nu
    T /= np.linalg.norm(T, axis=1, keepdims=True)
    N = np.cross(nu, T)
    # outward: away from the centroid of the 1-ring
    ring = mesh.ring(1)
    inward = np.array([P[ring[i]].mean(axis=0) for i in v]) - P[v]
    flip = np.sum(N * inward, axis=1) > 0
    N[flip] *= -1
    T[flip] *= -1
    nuS = barrier.normal(P[v])
    res = np.abs(np.sum(nu * nuS, axis=1))
    return BoundaryFrame(v, N, T, nu, res)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _ring_counts(n_rings):
    k = np.arange(1, n_rings + 1)
    return np.maximum(6, np.round(4 * n_rings * np.sin(k * np.pi / (2 * n_rings)))).astype(int)


def polar_grid(n_rings):
    """Triangulated unit disk in polar parameters ``(s, angle)``, ``s in [0, 1]``.

    Ring ``k`` sits at ``s = k / n_rings`` with a vertex count proportional to
    the circumference of the corresponding latitude on a unit hemisphere
    (``s`` maps to polar angle ``s * pi / 2``), which keeps triangles close to
    equilateral after that mapping.  Returns ``(s, angle, faces, rings)``.
    """
    if n_rings < 1:
        raise InvalidParams("need at least one ring")
    counts = _ring_counts(n_rings)
    s = [0.0]
    ang = [0.0]
    rings = [np.array([0])]
    start = 1
    for k, m in enumerate(counts, start=1):
        off = 0.5 * (k % 2)
        a = 2 * np.pi * (np.arange(m) + off) / m
        s.extend([k / n_rings] * m)
        ang.extend(a.tolist())
        rings.append(np.arange(start, start + m))
        start += m
    s = np.array(s)
    ang = np.array(ang)
    faces = []
    r1 = rings[1]
    for j in range(len(r1)):
        faces.append((0, r1[j], r1[(j + 1) % len(r1)]))
    for k in range(1, n_rings):
        faces.extend(_zip_rings(rings[k], rings[k + 1], ang))
    return s, ang, np.array(faces, dtype=np.int64), rings


def _zip_rings(inner, outer, ang):
    """Triangulate the band between two closed rings ordered by angle."""
    a_in = np.mod(ang[inner] - ang[inner[0]], 2 * np.pi)
    a_out = np.mod(ang[outer] - ang[inner[0]], 2 * np.pi)
    o0 = int(np.argmin(a_out))
    outer = np.roll(outer, -o0)
    a_out = np.roll(a_out, -o0)
    mi, mo = len(inner), len(outer)
    # unwrap so both sequences increase from about zero to 2 pi
    ai = np.r_[a_in, 2 * np.pi + a_in[0]]
    ao = np.r_[a_out, 2 * np.pi + a_out[0]]
    i = j = 0
    faces = []
    while i < mi or j < mo:
        adv_outer = j < mo and (i >= mi or ao[j + 1] <= ai[i + 1])
        if adv_outer:
            faces.append((inner[i % mi], outer[j % mo], outer[(j + 1) % mo]))
            j += 1
        else:
            faces.append((inner[i % mi], outer[j % mo], inner[(i + 1) % mi]))
            i += 1
    return faces


def _orient(positions, faces, outward):
    """Flip all faces if they disagree with the desired outward normals."""
    P = positions
    fn = np.cross(P[faces[:, 1]] - P[faces[:, 0]], P[faces[:, 2]] - P[faces[:, 0]])
    cen = P[faces].mean(axis=1)
    if np.sum(fn * outward(cen)) < 0:
        faces = faces[:, [0, 2, 1]]
    return faces


def icosphere(subdivisions=4, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Closed geodesic sphere: ``10 * 4**k + 2`` vertices, outward faces."""
    if subdivisions < 0 or radius <= 0:
        raise InvalidParams("need subdivisions >= 0 and radius > 0")
    g = (1 + 5 ** 0.5) / 2
    V = [(-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0), (0, -1, g), (0, 1, g),
         (0, -1, -g), (0, 1, -g), (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1)]
    F = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        mid = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                mid[key] = len(V) - 1
            return mid[key]

        new = []
        for a, b, c in F:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = new
    X = np.asarray(center, dtype=float) + radius * np.array(V)
    faces = _orient(X, np.array(F, dtype=np.int64), lambda x: x - np.asarray(center, dtype=float))
    return TriMesh(X, faces)


def perturbation_profile(theta, phi):
    """Smooth reflection-even radial profile with ``max |f| <= 1``.

    Both modes have vanishing polar derivative on the equator, so a hemisphere
    perturbed radially by this profile still meets the equatorial plane
    orthogonally.
    """
    return 0.6 * np.sin(theta) ** 2 * np.cos(2 * phi) + 0.4 * np.sin(theta) ** 3 * np.sin(3 * phi)


def make_cap(kind, n_rings=16, radius=1.0, amplitude=0.0, barrier_radius=1.0, center=(0.0, 0.0, 0.0)):
    """Initial surfaces meeting their barrier orthogonally.

    kind
        ``hemisphere``: sphere of ``radius`` about ``center`` (on the plane
        ``z = center_z``), upper half; ``amplitude`` radially perturbs it.
        ``sphere_cap``: the part inside the ball of radius ``barrier_radius``
        (centered at the origin) of the sphere of ``radius`` that meets the
        ball's boundary orthogonally, centered on the +z axis.
        ``cylinder_cap``: surface over the geodesic disk of ``radius`` around
        ``(barrier_radius, 0, 0)`` on the cylinder of radius
        ``barrier_radius`` about the z axis, obtained by mapping a hemisphere
        written in geodesic-normal/normal-distance coordinates; it bulges
        toward the axis.

    The surface normal is oriented so that caps have positive mean curvature.
    """
    if n_rings < 2 or radius <= 0:
        raise InvalidParams("need n_rings >= 2 and radius > 0")
    s, ang, faces, rings = polar_grid(n_rings)
    theta = s * np.pi / 2
    c0 = np.asarray(center, dtype=float)
    if kind == "hemisphere":
        if abs(amplitude) >= 1:
            raise InvalidParams("amplitude must be below 1")
        r = radius * (1 + amplitude * perturbation_profile(theta, ang))
        X = c0 + r[:, None] * np.stack([np.sin(theta) * np.cos(ang), np.sin(theta) * np.sin(ang), np.cos(theta)], 1)
        X[rings[-1], 2] = c0[2]

        def outward(x):
            return x - c0
    elif kind == "sphere_cap":
        Rb = float(barrier_radius)
        rho = float(radius)
        dist = np.sqrt(Rb * Rb + rho * rho)
        cc = np.array([0.0, 0.0, dist])
        tmax = np.arctan2(Rb, rho)  # cos(tmax) = rho / dist
        th = s * tmax
        w = np.stack([np.sin(th) * np.cos(ang), np.sin(th) * np.sin(ang), -np.cos(th)], 1)
        X = cc + rho * w
        b = rings[-1]
        X[b] *= Rb / np.linalg.norm(X[b], axis=1, keepdims=True)

        def outward(x):
            return x - cc
    elif kind == "cylinder_cap":
        R = float(barrier_radius)
        rho = float(radius)
        if rho >= R:
            raise InvalidParams("cap radius must be smaller than the cylinder radius")
        u1 = rho * np.sin(theta) * np.cos(ang)
        u2 = rho * np.sin(theta) * np.sin(ang)
        depth = rho * np.cos(theta)
        depth[rings[-1]] = 0.0
        X = np.stack([(R - depth) * np.cos(u1 / R), (R - depth) * np.sin(u1 / R), u2], 1)
        p0 = np.array([R, 0.0, 0.0])

        def outward(x):
            return x - p0
    else:
        raise InvalidParams(f"unknown cap kind {kind!r}")
    faces = _orient(X, faces, outward)
    return TriMesh(X, faces)


# ---------------------------------------------------------------------------
# OBJ io
# ---------------------------------------------------------------------------

def write_obj(path, mesh, comments=()):
    lines = [f"# {c}" for c in comments]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.positions]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path):
    """Read an ASCII OBJ.  Returns ``(mesh, comments)``; boundary flags are recomputed."""
    verts, faces, comments = [], [], []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                comments.append(line[1:].strip())
            elif parts[0] == "v":
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64)), comments
