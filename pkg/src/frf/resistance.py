"""Resistance forms on finite vertex sets.

Energy convention: E(f, f) = f^T D f = sum over unordered pairs x < y of
c_xy (f(x) - f(y))^2, with D the weighted graph Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.sparse.csgraph import connected_components

SPARSE_THRESHOLD = 500
PIVOT_TOL = 1e-12


class FloatingInteriorError(ValueError):
    """Part of the eliminated set has no path to the kept vertices."""


class NumericalError(ArithmeticError):
    pass


class SymmetryMismatchError(ValueError):
    """Lambda(e0) is not a scalar multiple of e0."""


class MarkovViolation(ValueError):
    pass


class QuadForm:
    """Symmetric nonnegative quadratic form given by its Laplacian-type matrix.

    ``vertices`` labels the rows (ids in some ambient vertex set).
    """

    def __init__(self, matrix, vertices=None):
        if sparse.issparse(matrix):
            matrix = matrix.tocsr()
        else:
            matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"form matrix must be square, got {matrix.shape}")
        self.matrix = matrix
        n = matrix.shape[0]
        self.vertices = np.arange(n) if vertices is None else np.asarray(vertices)
        if len(self.vertices) != n:
            raise ValueError("vertex labels do not match matrix size")

    @classmethod
    def from_conductances(cls, n, edges, vertices=None):
        """Build from (x, y, c) triples with x != y; parallel edges add."""
        edges = list(edges)
        if not edges:
            return cls(np.zeros((n, n)), vertices)
        x, y, c = (np.asarray(v) for v in zip(*edges))
        return cls(_laplacian(n, x.astype(int), y.astype(int), c.astype(float)), vertices)

    @classmethod
    def complete(cls, n, conductance=1.0):
        d = -conductance * np.ones((n, n))
        np.fill_diagonal(d, conductance * (n - 1))
        return cls(d)

    @property
    def size(self):
        return self.matrix.shape[0]

    @property
    def is_sparse(self):
        return sparse.issparse(self.matrix)

    def dense(self):
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def energy(self, f, g=None):
        f = np.asarray(f, dtype=float)
        g = f if g is None else np.asarray(g, dtype=float)
        if f.shape[0] != self.size or g.shape[0] != self.size:
            raise ValueError(f"function has {f.shape[0]} values, form has {self.size} vertices")
        return float(g @ (self.matrix @ f))

    def conductances(self):
        """Upper-triangular (i, j, c) list, positional indices."""
        d = sparse.triu(self.matrix, k=1).tocoo() if self.is_sparse else None
        if d is None:
            i, j = np.triu_indices(self.size, 1)
            c = -self.matrix[i, j]
            keep = c != 0
            return list(zip(i[keep].tolist(), j[keep].tolist(), c[keep].tolist()))
        return [(int(a), int(b), -float(v)) for a, b, v in zip(d.row, d.col, d.data) if v != 0]

    def markov_defect(self):
        """Largest positive off-diagonal entry (0 for a Markov form)."""
        d = self.dense() if self.size <= SPARSE_THRESHOLD else None
        if d is not None:
            off = d - np.diag(np.diag(d))
            return float(max(off.max(), 0.0))
        coo = self.matrix.tocoo()
        off = coo.data[coo.row != coo.col]
        return float(max(off.max(initial=0.0), 0.0))

    def frobenius(self):
        if self.is_sparse:
            return float(sparse.linalg.norm(self.matrix))
        return float(np.linalg.norm(self.matrix))

    def as_laplacian(self):
        """Same conductances, diagonal reset so rows sum to zero."""
        d = self.dense().copy()
        np.fill_diagonal(d, 0.0)
        np.fill_diagonal(d, -d.sum(axis=1))
        return QuadForm(d, self.vertices)

    def scaled(self, s):
        return QuadForm(self.matrix * s, self.vertices)

    def __repr__(self):
        return f"QuadForm(size={self.size}, sparse={self.is_sparse})"


def _laplacian(n, x, y, c):
    rows = np.concatenate([x, y, x, y])
    cols = np.concatenate([y, x, x, y])
    vals = np.concatenate([-c, -c, c, c])
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat if n > SPARSE_THRESHOLD else mat.toarray()


def energy(q, f, g=None):
    return q.energy(f, g)


def _positions(q, U):
    lookup = {int(v): k for k, v in enumerate(q.vertices)}
    try:
        return np.array([lookup[int(u)] for u in U], dtype=int)
    except KeyError as exc:
        raise ValueError(f"vertex {exc.args[0]} not in form") from None


def _check_floating(q, keep, drop):
    if len(drop) == 0:
        return
    mat = q.matrix if q.is_sparse else sparse.csr_matrix(q.matrix)
    sub = mat[drop][:, drop]
    ncomp, labels = connected_components(sub, directed=False)
    touch = np.asarray(abs(mat[drop][:, keep]).sum(axis=1)).ravel() > 0
    reached = np.zeros(ncomp, bool)
    np.logical_or.at(reached, labels, touch)
    if not reached.all():
        comp = int(np.flatnonzero(~reached)[0])
        witness = q.vertices[drop[labels == comp][0]]
        raise FloatingInteriorError(f"interior vertex {witness} is not connected to the kept set")


class _InteriorSolver:
    """Factorisation of an interior block D_II (Cholesky dense, LU sparse)."""

    def __init__(self, block):
        if sparse.issparse(block) and block.shape[0] > SPARSE_THRESHOLD:
            self.lu = splinalg.splu(block.tocsc())
            diag = np.abs(self.lu.U.diagonal())
            self.dense = False
        else:
            block = block.toarray() if sparse.issparse(block) else block
            try:
                self.chol = scipy.linalg.cho_factor(block)
            except np.linalg.LinAlgError:
                raise NumericalError("interior block is not positive definite") from None
            diag = np.abs(np.diag(self.chol[0])) ** 2
            self.dense = True
        if diag.size and diag.min() < PIVOT_TOL * diag.max():
            raise NumericalError("interior block is numerically singular")

    def solve(self, rhs):
        if self.dense:
            return scipy.linalg.cho_solve(self.chol, rhs)
        return self.lu.solve(np.asarray(rhs))


def trace_to(q, U):
    """Trace of ``q`` on the vertex labels ``U`` (Schur complement)."""
    keep = _positions(q, U)
    mask = np.ones(q.size, bool)
    mask[keep] = False
    drop = np.flatnonzero(mask)
    _check_floating(q, keep, drop)
    mat = q.matrix
    d_uu = mat[keep][:, keep]
    d_uu = d_uu.toarray() if sparse.issparse(d_uu) else d_uu
    if len(drop) == 0:
        return QuadForm(d_uu.copy(), q.vertices[keep])
    d_ii = mat[drop][:, drop]
    d_iu = mat[drop][:, keep]
    d_iu = d_iu.toarray() if sparse.issparse(d_iu) else d_iu
    x = _InteriorSolver(d_ii).solve(d_iu)
    schur = d_uu - d_iu.T @ x
    schur = 0.5 * (schur + schur.T)
    return QuadForm(schur, q.vertices[keep])


def dirichlet_solve(q, boundary, values):
    """Minimise energy with prescribed values on ``boundary`` (positional ids).

    ``values`` may be a vector or a (len(boundary), k) matrix. Returns values on
    all vertices.
    """
    boundary = np.asarray(boundary, dtype=int)
    values = np.asarray(values, dtype=float)
    mask = np.ones(q.size, bool)
    mask[boundary] = False
    interior = np.flatnonzero(mask)
    out = np.zeros((q.size,) + values.shape[1:])
    out[boundary] = values
    if len(interior) == 0:
        return out
    _check_floating(q, boundary, interior)
    mat = q.matrix
    d_ii = mat[interior][:, interior]
    d_ib = mat[interior][:, boundary]
    rhs = -(d_ib @ values)
    out[interior] = _InteriorSolver(d_ii).solve(rhs)
    return out


@dataclass(frozen=True)
class Weights:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if (vals <= 0).any():
            raise ValueError("renormalisation weights must be positive")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, m, rho=1.0):
        return cls(np.full(m, float(rho)))

    @property
    def regular(self):
        return bool((self.values > 1).all())

    def word_weights(self, n):
        """rho_w for all words of length n, in word-index order."""
        out = np.ones(1)
        for _ in range(n):
            out = (out[:, None] * self.values[None, :]).ravel()
        return out


def _as_weights(rho, m):
    if isinstance(rho, Weights):
        return rho
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    return Weights(np.full(m, rho[0]) if rho.size == 1 else rho)


def replicate(e0, fdef, rho, n):
    """Level-n form: each n-cell carries rho_w times a copy of ``e0``."""
    rho = _as_weights(rho, fdef.m)
    lg = fdef.level(n)
    d0 = e0.dense()
    scale = rho.word_weights(n)
    cells = lg.cells
    b = fdef.b
    rows = np.repeat(cells, b, axis=1).ravel()
    cols = np.tile(cells, (1, b)).ravel()
    vals = (scale[:, None] * d0.ravel()[None, :]).ravel()
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(lg.n_vertices,) * 2).tocsr()
    mat.sum_duplicates()
    if lg.n_vertices <= SPARSE_THRESHOLD:
        mat = mat.toarray()
    return QuadForm(mat)


def lambda_map(e0, fdef, rho):
    """Trace on V_0 of the level-1 replica of ``e0``."""
    return trace_to(replicate(e0, fdef, rho, 1), np.arange(fdef.b))


def solve_renormalization_symmetric(fdef, tol=1e-10):
    """Equal-weight fixed point started from the complete graph on V_0.

    Returns (e0, rho) with e0 the unit complete-graph form.  Raises
    SymmetryMismatchError when Lambda with unit weights is not proportional to e0.
    """
    e0 = QuadForm.complete(fdef.b)
    lam = lambda_map(e0, fdef, np.ones(fdef.m)).dense()
    d0 = e0.dense()
    c = float(np.sum(lam * d0) / np.sum(d0 * d0))
    if c <= 0 or np.abs(lam - c * d0).max() > tol * np.abs(d0).max():
        raise SymmetryMismatchError(
            f"{fdef.name}: Lambda(e0) is not a multiple of e0 (residual "
            f"{np.abs(lam - c * d0).max():.3e}); the declared symmetry is wrong"
        )
    rho = 1.0 / c
    check = lambda_map(e0, fdef, np.full(fdef.m, rho)).dense()
    if np.abs(check - d0).max() > tol:
        raise NumericalError(f"{fdef.name}: fixed point check failed")
    return e0, rho


@dataclass
class FixedPointResult:
    form: QuadForm
    residual: float
    scale: float
    iterations: int
    converged: bool
    markov_defect: float = 0.0


def fixed_point_iterate(e_init, fdef, rho, tol=1e-12, max_iter=500):
    """Iterate e <- Lambda_rho(e) / ||Lambda_rho(e)||_F.

    The returned residual is ||Lambda_rho(e) - lam e||_F with lam the
    least-squares scalar.  Non-convergence is reported, not raised.
    """
    rho = _as_weights(rho, fdef.m)
    e = e_init.scaled(1.0 / e_init.frobenius())
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # roundoff along the constants grows under Lambda, so project each step
        nxt = lambda_map(e, fdef, rho).as_laplacian()
        defect = nxt.markov_defect()
        if defect > 1e-12 * nxt.frobenius():
            raise MarkovViolation(f"Lambda produced a positive off-diagonal entry {defect:.3e}")
        nxt = nxt.scaled(1.0 / nxt.frobenius())
        step = float(np.linalg.norm(nxt.dense() - e.dense()))
        e = nxt
        if step < tol:
            converged = True
            break
    img = lambda_map(e, fdef, rho).dense()
    cur = e.dense()
    lam = float(np.sum(img * cur) / np.sum(cur * cur))
    residual = float(np.linalg.norm(img - lam * cur))
    return FixedPointResult(e, residual, lam, it, converged)


def effective_resistance(q, p, u):
    """R(p, u) = 1 / min{E(f): f(p)=0, f(u)=1}; inf for disconnected pairs."""
    if p == u:
        raise ValueError("effective resistance needs two distinct vertices")
    mat = q.matrix if q.is_sparse else sparse.csr_matrix(q.matrix)
    _, labels = connected_components(mat, directed=False)
    ip, iu = _positions(q, [p, u])
    if labels[ip] != labels[iu]:
        return float("inf")
    comp = np.flatnonzero(labels == labels[ip])
    sub = QuadForm(mat[comp][:, comp], q.vertices[comp])
    jp, ju = _positions(sub, [p, u])
    f = dirichlet_solve(sub, [jp, ju], [0.0, 1.0])
    return 1.0 / sub.energy(f)
