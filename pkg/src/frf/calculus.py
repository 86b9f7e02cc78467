"""Energy quadratures in harmonic coordinates and the Gauss-Green check.

Smooth test functions act on arrays of points of shape (N, b) and carry
certified sup bounds over the simplex {x >= 0, sum x = 1} containing psi(F).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .harmonic import embed
from .kusuoka import level_centroids, level_q, null_mask


class BoundaryValueError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothTestFn:
    name: str
    f: callable
    grad: callable
    hess: callable
    sup: float  # sup |f|
    sup_grad: float  # sup ||grad f||_2
    sup_hess: float  # sup ||D^2 f||_op
    linear: bool = False

    def __call__(self, x):
        return self.f(np.atleast_2d(x))

    @property
    def c1(self):
        return max(self.sup, self.sup_grad)

    @property
    def c2(self):
        return max(self.sup, self.sup_grad, self.sup_hess)


def coordinate(j, b):
    e = np.eye(b)[j]
    return SmoothTestFn(
        f"x{j + 1}",
        lambda x: x[:, j].copy(),
        lambda x: np.broadcast_to(e, x.shape).copy(),
        lambda x: np.zeros(x.shape + (b,)),
        1.0,
        1.0,
        0.0,
        linear=True,
    )


def linear(g, name=None):
    g = np.asarray(g, dtype=float)
    b = g.size
    return SmoothTestFn(
        name or "linear",
        lambda x: x @ g,
        lambda x: np.broadcast_to(g, x.shape).copy(),
        lambda x: np.zeros(x.shape + (b,)),
        float(np.abs(g).max()),
        float(np.linalg.norm(g)),
        0.0,
        linear=True,
    )


def quadratic(B, c=None, d=0.0, name="quadratic"):
    """x^T B x + c.x + d with bounds valid on the simplex."""
    B = np.asarray(B, dtype=float)
    b = B.shape[0]
    c = np.zeros(b) if c is None else np.asarray(c, dtype=float)
    H = B + B.T
    hop = float(np.linalg.norm(H, 2))
    return SmoothTestFn(
        name,
        lambda x: np.einsum("ni,ij,nj->n", x, B, x) + x @ c + d,
        lambda x: x @ H.T + c,
        lambda x: np.broadcast_to(H, x.shape + (b,)).copy(),
        float(np.abs(B).max() + np.abs(c).max() + abs(d)),
        hop + float(np.linalg.norm(c)),
        hop,
    )


def norm_squared(b):
    return quadratic(np.eye(b), name="|x|^2")


def product(i, j, b):
    B = np.zeros((b, b))
    B[i, j] = B[j, i] = 0.5
    fn = quadratic(B, name=f"x{i + 1}*x{j + 1}")
    # tighter than the generic bounds: x_i x_j <= 1/4, |grad| <= 1
    return SmoothTestFn(fn.name, fn.f, fn.grad, fn.hess, 0.25, 1.0, 1.0)


def triple_product(b):
    def f(x):
        return x[:, 0] * x[:, 1] * x[:, 2]

    def grad(x):
        g = np.zeros_like(x)
        g[:, 0] = x[:, 1] * x[:, 2]
        g[:, 1] = x[:, 0] * x[:, 2]
        g[:, 2] = x[:, 0] * x[:, 1]
        return g

    def hess(x):
        h = np.zeros(x.shape + (b,))
        for i, j, k in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
            h[:, i, j] = h[:, j, i] = x[:, k]
        return h

    # on the simplex: x1x2x3 <= 1/27, grad entries <= 1/4, hess rows sum to at most 1
    return SmoothTestFn("x1*x2*x3", f, grad, hess, 1 / 27, np.sqrt(3) / 4, 1.0)


def exp_linear(a):
    a = np.asarray(a, dtype=float)
    top = float(np.exp(a.max()))
    na = float(np.linalg.norm(a))
    return SmoothTestFn(
        "exp(a.x)",
        lambda x: np.exp(x @ a),
        lambda x: np.exp(x @ a)[:, None] * a,
        lambda x: np.exp(x @ a)[:, None, None] * np.outer(a, a),
        top,
        na * top,
        na * na * top,
    )


def sin_difference(b):
    """sin(pi (x1 - x2))."""
    e = np.zeros(b)
    e[0], e[1] = 1.0, -1.0
    return SmoothTestFn(
        "sin(pi(x1-x2))",
        lambda x: np.sin(np.pi * (x @ e)),
        lambda x: np.pi * np.cos(np.pi * (x @ e))[:, None] * e,
        lambda x: -np.pi**2 * np.sin(np.pi * (x @ e))[:, None, None] * np.outer(e, e),
        1.0,
        np.pi * np.sqrt(2),
        2 * np.pi**2,
    )


def sin_bump(b):
    """sin(pi x1) sin(pi x2), zero at every vertex of the simplex."""

    def f(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def grad(x):
        g = np.zeros_like(x)
        s0, s1 = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
        c0, c1 = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
        g[:, 0] = np.pi * c0 * s1
        g[:, 1] = np.pi * s0 * c1
        return g

    def hess(x):
        h = np.zeros(x.shape + (b,))
        s0, s1 = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
        c0, c1 = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
        h[:, 0, 0] = h[:, 1, 1] = -np.pi**2 * s0 * s1
        h[:, 0, 1] = h[:, 1, 0] = np.pi**2 * c0 * c1
        return h

    # |grad|^2 = pi^2 (c0^2 s1^2 + s0^2 c1^2) <= pi^2; hess is pi^2 [[-ss, cc], [cc, -ss]], op <= pi^2
    return SmoothTestFn("sin(pi x1)sin(pi x2)", f, grad, hess, 1.0, np.pi, np.pi**2)


def bump_complement(b):
    """1 - |x|^2 (= 2 sum_{i<j} x_i x_j on the simplex)."""
    fn = quadratic(-np.eye(b), d=1.0, name="1-|x|^2")
    return SmoothTestFn(fn.name, fn.f, fn.grad, fn.hess, 1.0, 2.0, 2.0)


def smooth_corpus(b):
    """Coordinate linears, |x|^2, pairwise products and two transcendental functions."""
    out = [coordinate(j, b) for j in range(b)]
    out.append(norm_squared(b))
    out += [product(i, j, b) for i, j in combinations(range(b), 2)]
    out.append(exp_linear(np.linspace(1.0, -0.5, b)))
    out.append(sin_difference(b))
    return out


def bump_corpus(b):
    """Functions vanishing at the simplex vertices, i.e. on psi(V_0)."""
    out = [product(i, j, b) for i, j in combinations(range(b), 2)]
    if b >= 3:
        out.append(triple_product(b))
    out.append(sin_bump(b))
    out.append(bump_complement(b))
    return out


# ----------------------------------------------------------------------------
# energies


def _psi(hs, n):
    return hs.cached(("psi_products", n), lambda: embed(hs, n).coords)


def discrete_energy(hs, n, f, g=None):
    """E_n(f o psi, g o psi) on the level-n network."""
    # edge sum rather than f^T L f: the latter cancels badly once rho^n is large
    x = _psi(hs, n)
    i, j, c = _edges(hs, n)
    fv = f(x)
    df = fv[i] - fv[j]
    dg = df if g is None else (lambda v: v[i] - v[j])(g(x))
    return float(np.sum(c * df * dg))


def kigami_quadrature(hs, n, f, g=None):
    """sum_w <grad f(x_w), Z_w grad g(x_w)> nu(F_w) with x_w the nu-centroid."""
    Q = level_q(hs, n)
    x = level_centroids(hs, n)
    gf = f.grad(x)
    gg = gf if g is None else g.grad(x)
    return float(np.einsum("wi,wij,wj->", gf, Q, gg))


def _edges(hs, n):
    def build():
        c = hs.form(n).conductances()
        i, j, w = (np.asarray(v) for v in zip(*c))
        return i.astype(int), j.astype(int), w.astype(float)

    return hs.cached(("edges", n), build)


def quantum_graph_energy(hs, n, f, quad_order=4):
    """Sum over edges of c_xy int_0^1 <grad f(x + t(y - x)), y - x>^2 dt."""
    if quad_order < 2:
        raise ValueError("quad_order must be at least 2")
    x = _psi(hs, n)
    i, j, c = _edges(hs, n)
    t, wt = np.polynomial.legendre.leggauss(quad_order)
    t, wt = 0.5 * (t + 1.0), 0.5 * wt
    d = x[j] - x[i]
    total = 0.0
    for tk, wk in zip(t, wt):
        pts = x[i] + tk * d
        total += wk * float(np.sum(c * np.einsum("ni,ni->n", f.grad(pts), d) ** 2))
    return total


def laplacian_field(hs, n, f):
    """Tr(Z_w D^2 f(x_w)) per cell, nan on null cells."""
    Q = level_q(hs, n)
    x = level_centroids(hs, n)
    nu = np.trace(Q, axis1=1, axis2=2)
    null = null_mask(Q, np.trace(hs.d0))
    tr = np.einsum("wij,wji->w", Q, f.hess(x))
    return np.where(null, np.nan, tr / np.where(null, 1.0, nu))


def gauss_green_residual(hs, n, f, g, tol=1e-12):
    """|E_n(f, g) + sum_w g(x_w) Tr(Z_w D^2 f(x_w)) nu(F_w)| for g zero on psi(V_0)."""
    corners = g(np.eye(hs.fdef.b))
    if np.abs(corners).max() > tol:
        raise BoundaryValueError(f"{g.name} does not vanish on the boundary: {corners}")
    Q = level_q(hs, n)
    x = level_centroids(hs, n)
    lap = np.einsum("wij,wji->w", Q, f.hess(x))
    return abs(discrete_energy(hs, n, f, g) + float(g(x) @ lap))


@dataclass
class LaplacianCheck:
    level: int
    value: float
    deviation: float
    residuals: dict = field(default_factory=dict)
    reference_value: float = 1.0  # stated under a different normalisation; recorded only

    def lines(self):
        out = [
            f"level {self.level}",
            f"Tr(Z_w D^2|x|^2) = {self.value:.15g}  max deviation {self.deviation:.3e}",
            f"reference constant under the alternative normalisation: {self.reference_value:g}",
        ]
        out += [f"gauss-green {k:<22s} {v:.6e}" for k, v in self.residuals.items()]
        return out


def laplacian_constant_check(hs, n):
    f = norm_squared(hs.fdef.b)
    field_ = laplacian_field(hs, n, f)
    live = field_[~np.isnan(field_)]
    value = float(live.mean())
    res = {g.name: gauss_green_residual(hs, n, f, g) for g in bump_corpus(hs.fdef.b)[:5]}
    return LaplacianCheck(n, value, float(np.abs(live - value).max()), res)


@dataclass
class BoundReport:
    kind: str
    rows: list  # (level, lhs, rhs)

    @property
    def violations(self):
        return [r for r in self.rows if r[1] > r[2] * (1 + 1e-12) + 1e-14]

    @property
    def ok(self):
        return not self.violations

    def slack(self):
        return min((r[2] / r[1] for r in self.rows if r[1] > 0), default=np.inf)


def c1_bound(hs, levels, f):
    """E_n(f) <= nu(F) ||f||_{C^1}^2 for each level."""
    nu = float(np.trace(hs.d0))
    rows = [(n, discrete_energy(hs, n, f), nu * f.c1**2) for n in levels]
    return BoundReport("C1", rows)


def c2_pairing_bound(hs, levels, f, g):
    """|E_n(f, g)| <= nu(F) ||g||_{C^0} ||f||_{C^2} for g vanishing on psi(V_0)."""
    corners = g(np.eye(hs.fdef.b))
    if np.abs(corners).max() > 1e-12:
        raise BoundaryValueError(f"{g.name} does not vanish on the boundary")
    nu = float(np.trace(hs.d0))
    rows = [(n, abs(discrete_energy(hs, n, f, g)), nu * g.sup * f.c2) for n in levels]
    return BoundReport("C2", rows)


def convergence_table(hs, f, levels, g=None, quad_order=4):
    """Rows (level, discrete, kigami, quantum, gauss_green or nan)."""
    rows = []
    for n in levels:
        gg = gauss_green_residual(hs, n, f, g) if g is not None else float("nan")
        rows.append(
            (
                n,
                discrete_energy(hs, n, f),
                kigami_quadrature(hs, n, f),
                quantum_graph_energy(hs, n, f, quad_order),
                gg,
            )
        )
    return rows
