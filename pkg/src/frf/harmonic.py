"""Harmonic extension, extension matrices and harmonic coordinates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .resistance import (
    QuadForm,
    Weights,
    _as_weights,
    dirichlet_solve,
    lambda_map,
    replicate,
    solve_renormalization_symmetric,
)
from .structure import format_word, index_word, word_index

RANK_TOL = 1e-10


class InfeasibleTangent(ValueError):
    pass


class NotFixedPointWarning(UserWarning):
    pass


def harmonic_extend(q, boundary_vals, boundary=None):
    """Minimum-energy extension of values on ``boundary`` (default: ids 0..b-1)."""
    vals = np.asarray(boundary_vals, dtype=float)
    if boundary is None:
        boundary = np.arange(vals.shape[0])
    return dirichlet_solve(q, boundary, vals)


@dataclass
class ExtensionSet:
    """A[i] maps boundary values of a harmonic function to its values on V_{i}."""

    A: np.ndarray
    _levels: dict = field(default_factory=dict, repr=False)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def b(self):
        return self.A.shape[1]

    def M(self, word):
        # M_{w.j} = A_j M_w
        out = np.eye(self.b)
        for s in word:
            out = self.A[s] @ out
        return out

    def level(self, n):
        """Stack of M_w for all words of length n in word-index order."""
        if n not in self._levels:
            if n == 0:
                arr = np.eye(self.b)[None]
            else:
                prev = self.level(n - 1)
                arr = np.einsum("jab,wbc->wjac", self.A, prev).reshape(-1, self.b, self.b)
            self._levels[n] = arr
        return self._levels[n]


def extension_matrices(e0, fdef, rho, check=True):
    rho = _as_weights(rho, fdef.m)
    if check:
        img = lambda_map(e0, fdef, rho).dense()
        if np.abs(img - e0.dense()).max() > 1e-9 * np.abs(e0.dense()).max():
            warnings.warn(
                "e0 is not a fixed point of Lambda; matrices only describe one-step extension",
                NotFixedPointWarning,
                stacklevel=2,
            )
    q1 = replicate(e0, fdef, rho, 1)
    H = harmonic_extend(q1, np.eye(fdef.b))
    A = H[fdef.level(1).cells]
    return ExtensionSet(A)


@dataclass
class HarmonicStructure:
    """Fixed-point form together with its weights and extension matrices."""

    fdef: object
    e0: QuadForm
    weights: Weights
    ext: ExtensionSet
    _cache: dict = field(default_factory=dict, repr=False)

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def d0(self):
        return self.e0.dense()

    @property
    def rho(self):
        return self.weights.values

    def form(self, n):
        return self.cached(("form", n), lambda: replicate(self.e0, self.fdef, self.weights, n))


def harmonic_structure(fdef, weights=None, e0=None):
    """Build the harmonic structure, solving the symmetric problem if needed."""
    if weights is None:
        e0, r = solve_renormalization_symmetric(fdef)
        weights = Weights.uniform(fdef.m, r)
    else:
        weights = _as_weights(weights, fdef.m)
        if e0 is None:
            e0 = QuadForm.complete(fdef.b)
    return HarmonicStructure(fdef, e0, weights, extension_matrices(e0, fdef, weights))


@dataclass
class HarmonicEmbedding:
    n: int
    coords: np.ndarray  # (|V_n|, b)
    vertex_level: np.ndarray

    def lines(self):
        out = []
        for i, (lev, row) in enumerate(zip(self.vertex_level, self.coords)):
            out.append(f"{i}  {lev}  " + " ".join(f"{v:.15g}" for v in row))
        return out


def vertex_levels(fdef, n):
    counts = [fdef.level(k).n_vertices for k in range(n + 1)]
    return np.searchsorted(np.asarray(counts), np.arange(counts[-1]), side="right")


def embed(hs, n, method="products"):
    """psi on V_n, either from M_w products or from b Dirichlet solves."""
    lg = hs.fdef.level(n)
    if method == "products":
        coords = np.empty((lg.n_vertices, hs.fdef.b))
        mats = hs.ext.level(n)
        coords[lg.cells.ravel()] = mats.reshape(-1, hs.fdef.b)
    elif method == "dirichlet":
        coords = hs.cached(("psi", n), lambda: harmonic_extend(hs.form(n), np.eye(hs.fdef.b)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return HarmonicEmbedding(n, coords, vertex_levels(hs.fdef, n))


@dataclass
class HCReport:
    level: int
    injective: bool
    cell_injective: bool
    hull_pairs: bool
    nested: bool
    degenerate_cells: int
    witness: str = ""

    @property
    def passed(self):
        return self.injective and self.cell_injective and self.hull_pairs and self.nested

    def lines(self):
        yes = {True: "pass", False: "FAIL"}
        out = [
            f"level {self.level}",
            f"injective on V_n       {yes[self.injective]}",
            f"injective on each V_w  {yes[self.cell_injective]}",
            f"hull pairs             {yes[self.hull_pairs]}",
            f"child hull containment {yes[self.nested]}",
            f"degenerate cells       {self.degenerate_cells}",
        ]
        if self.witness:
            out.append(f"witness: {self.witness}")
        return out


def _affine(coords):
    # barycentric points live in sum = 1; drop the last coordinate
    return coords[..., :-1]


def _bary(points, x, tol):
    """Convex weights of x w.r.t. points, or None when x is outside the hull."""
    k = len(points)
    a_eq = np.vstack([points.T, np.ones(k)])
    b_eq = np.append(x, 1.0)
    res = linprog(np.zeros(k), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.x if res.status == 0 else None


def _hull_excess(P, Q, shared_p, shared_q):
    """Largest weight on non-shared vertices over points common to both hulls."""
    kp, kq = len(P), len(Q)
    dim = P.shape[1]
    c = np.zeros(kp + kq)
    c[:kp][~shared_p] = -1.0
    c[kp:][~shared_q] = -1.0
    a_eq = np.zeros((dim + 2, kp + kq))
    a_eq[:dim, :kp] = P.T
    a_eq[:dim, kp:] = -Q.T
    a_eq[dim, :kp] = 1.0
    a_eq[dim + 1, kp:] = 1.0
    b_eq = np.zeros(dim + 2)
    b_eq[dim:] = 1.0
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 2:
        return 0.0  # hulls disjoint
    return -float(res.fun)


def _degenerate(P, tol):
    if len(P) <= 1:
        return True
    diffs = P[1:] - P[0]
    s = np.linalg.svd(diffs, compute_uv=False)
    return s.size < len(P) - 1 or s[-1] < tol * max(1.0, s[0])


def _bary_inverse(P):
    """Matrix taking (x, 1) to barycentric weights w.r.t. the simplex P."""
    return np.linalg.inv(np.vstack([P.T, np.ones(len(P))]))


def _cross(u, v):
    return float(u[0] * v[1] - u[1] * v[0])


def _clip(poly, P):
    """Part of the convex polygon ``poly`` inside the triangle P (2D)."""
    if _cross(P[1] - P[0], P[2] - P[0]) < 0:
        P = P[::-1]
    out = list(poly)
    for a, b in zip(P, np.roll(P, -1, axis=0)):
        if not out:
            break
        edge = b - a
        side = [_cross(edge, x - a) for x in out]
        nxt = []
        for k, x in enumerate(out):
            y, sx, sy = out[k - 1], side[k], side[k - 1]
            if sx >= 0:
                if sy < 0:
                    nxt.append(y + (x - y) * (sy / (sy - sx)))
                nxt.append(x)
            elif sy >= 0:
                nxt.append(y + (x - y) * (sy / (sy - sx)))
        out = nxt
    return np.array(out).reshape(-1, 2)


def _common_points(P, Q):
    """Vertices of hull(P) & hull(Q) for b <= 3, P a non-degenerate simplex."""
    if P.shape[1] == 1:
        lo = max(P.min(), Q.min())
        hi = min(P.max(), Q.max())
        return np.array([[lo], [hi]]) if lo <= hi else np.empty((0, 1))
    return _clip(Q, P)


def _pair_excess(P, Q, shared_p, shared_q, deg_p, deg_q):
    """Weight on non-shared vertices at common points (0 when the pair is fine)."""
    if P.shape[1] <= 2 and not (deg_p and deg_q):
        if deg_p:
            P, Q, shared_p = Q, P, shared_q
        pts = _common_points(P, Q)
        if len(pts) == 0:
            return 0.0
        lam = np.hstack([pts, np.ones((len(pts), 1))]) @ _bary_inverse(P).T
        return float(lam[:, ~shared_p].sum(axis=1).max())
    return _hull_excess(P, Q, shared_p, shared_q)


def _outside_parent(parent, kids, tol):
    """True when some child vertex lies outside the parent's hull."""
    if _degenerate(parent, 1e-8):
        return any(_bary(parent, x, tol) is None for x in kids)
    lam = np.hstack([kids, np.ones((len(kids), 1))]) @ _bary_inverse(parent).T
    return bool(lam.min() < -1e-9)


def check_hc(hs, n=4, tol=1e-9):
    """Finite-level (HC) certificate.

    Checks injectivity of psi on V_n and on every V_w, that distinct cells of
    the same level (1..n) have hulls meeting only in the hull of their common
    vertices, and that each child hull lies in its parent's hull.  Cells with
    affinely dependent images are counted as degenerate; a pair of two such
    cells is tested by a linear program that is only one-sided (it maximises
    the weight on non-shared vertices over all convex representations).
    """
    fdef = hs.fdef
    emb = embed(hs, n)
    pts = _affine(emb.coords)
    rep = HCReport(n, True, True, True, True, 0)

    pairs = cKDTree(pts).query_pairs(tol)
    if pairs:
        i, j = sorted(pairs)[0]
        rep.injective = False
        rep.witness = f"vertices {i} and {j} share coordinates {np.round(emb.coords[i], 12).tolist()}"

    for k in range(1, n + 1):
        lg = fdef.level(k)
        cell_pts = pts[lg.cells]  # (m^k, b, b-1)
        d = np.linalg.norm(cell_pts[:, :, None] - cell_pts[:, None], axis=-1)
        iu = np.triu_indices(fdef.b, 1)
        clash = (d[:, iu[0], iu[1]] < tol).any(axis=1)
        if clash.any() and rep.cell_injective:
            rep.cell_injective = False
            w = int(np.flatnonzero(clash)[0])
            rep.witness = rep.witness or f"cell {format_word(lg.word(w))} has coincident vertex images"
        deg = np.array([_degenerate(P, 1e-8) for P in cell_pts])
        if k == n:
            rep.degenerate_cells = int(deg.sum())

        lo, hi = cell_pts.min(axis=1), cell_pts.max(axis=1)
        if rep.hull_pairs:
            for p, q in _overlapping_boxes(lo, hi, tol):
                cp, cq = lg.cells[p], lg.cells[q]
                shared = np.intersect1d(cp, cq)
                excess = _pair_excess(
                    cell_pts[p], cell_pts[q], np.isin(cp, shared), np.isin(cq, shared), deg[p], deg[q]
                )
                if excess > 1e-7:
                    rep.hull_pairs = False
                    rep.witness = rep.witness or (
                        f"cells {format_word(lg.word(p))} and {format_word(lg.word(q))} "
                        "overlap outside their common vertices"
                    )
                    break

        if rep.nested:
            prev = pts[fdef.level(k - 1).cells]
            for w in range(lg.n_cells):
                if _outside_parent(prev[w // fdef.m], cell_pts[w], tol):
                    rep.nested = False
                    rep.witness = rep.witness or f"cell {format_word(lg.word(w))} leaves its parent hull"
                    break
    return rep


def _overlapping_boxes(lo, hi, tol):
    """Index pairs p < q whose bounding boxes intersect (sort-and-sweep on axis 0)."""
    order = np.argsort(lo[:, 0], kind="stable")
    active = []
    for p in order:
        active = [q for q in active if hi[q, 0] >= lo[p, 0] - tol]
        for q in active:
            if (lo[p] <= hi[q] + tol).all() and (lo[q] <= hi[p] + tol).all():
                yield (min(p, q), max(p, q))
        active.append(p)


def tangent(hs, f, word, tol=1e-9):
    """Minimum-energy harmonic boundary vector matching f on the cell V_w.

    ``f`` holds values on V_n with n = len(word).  Returned with mean zero.
    """
    word = tuple(word)
    lg = hs.fdef.level(len(word))
    fw = np.asarray(f, dtype=float)[lg.cells[word_index(word, hs.fdef.m)]]
    M = hs.ext.M(word)
    d0 = hs.d0
    u, s, vt = np.linalg.svd(M)
    r = int((s > RANK_TOL * s[0]).sum())
    hp = vt[:r].T @ ((u[:, :r].T @ fw) / s[:r])
    if np.linalg.norm(M @ hp - fw) > tol * max(1.0, np.linalg.norm(fw)):
        raise InfeasibleTangent(f"values on cell {format_word(word)} are not the restriction of a harmonic function")
    N = vt[r:].T
    if N.shape[1]:
        z = np.linalg.lstsq(N.T @ d0 @ N, -N.T @ d0 @ hp, rcond=None)[0]
        hp = hp + N @ z
    return hp - hp.mean()


@dataclass
class WNReport:
    fractal: str
    level: int
    null_counts: list
    maximal_null: list
    rank_counts: list  # per level: {rank: count} over non-null cells

    @property
    def full_support(self):
        return not any(self.null_counts)

    def lines(self):
        out = [f"fractal {self.fractal}", f"supp(nu) = F up to level {self.level}: {self.full_support}"]
        for k, (cnt, ranks) in enumerate(zip(self.null_counts, self.rank_counts)):
            rk = " ".join(f"rank{r}:{c}" for r, c in sorted(ranks.items()))
            out.append(f"level {k}  null cells {cnt}  {rk}")
        if self.maximal_null:
            out.append("maximal null cells: " + " ".join(self.maximal_null))
        return out


def wn_diagnostic(hs, n):
    """Null cells (zero Kusuoka measure) and Z-rank profile up to level n."""
    from .kusuoka import level_q, null_mask

    null_counts, rank_counts, maximal = [], [], []
    parent_null = np.zeros(1, bool)
    total = np.trace(hs.d0)
    for k in range(n + 1):
        Q = level_q(hs, k)
        null = null_mask(Q, total)
        null_counts.append(int(null.sum()))
        inherited = np.repeat(parent_null, hs.fdef.m) if k else np.zeros(1, bool)
        for w in np.flatnonzero(null & ~inherited):
            maximal.append(format_word(index_word(int(w), k, hs.fdef.m)))
        live = Q[~null]
        ranks = {}
        if len(live):
            s = np.linalg.eigvalsh(live)
            rk = (s > RANK_TOL * s[:, -1:]).sum(axis=1)
            vals, cnts = np.unique(rk, return_counts=True)
            ranks = {int(v): int(c) for v, c in zip(vals, cnts)}
        rank_counts.append(ranks)
        parent_null = null
    return WNReport(hs.fdef.name, n, null_counts, maximal, rank_counts)
