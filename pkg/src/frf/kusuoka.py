"""Kusuoka energy measure, cell energy matrices and Z-matrices.

Convention: nu(F_w) = Tr Q_w with Q_w = rho_w M_w^T D_0 M_w, the plain trace
over the b coordinate harmonics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resistance import dirichlet_solve
from .structure import format_word, word_index

NULL_TOL = 1e-12
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class KusuokaCell:
    word: tuple
    Q: np.ndarray
    nu: float
    null: bool

    @property
    def Z(self):
        """Q / Tr Q, or None on a null cell."""
        return None if self.null else self.Q / self.nu


def _rho_word(hs, word):
    return float(np.prod(hs.rho[list(word)])) if word else 1.0


def cell_energy_matrix(hs, word):
    word = tuple(word)
    M = hs.ext.M(word)
    Q = _rho_word(hs, word) * M.T @ hs.d0 @ M
    Q = 0.5 * (Q + Q.T)
    nu = float(np.trace(Q))
    return KusuokaCell(word, Q, nu, nu < NULL_TOL * np.trace(hs.d0))


def cell_energy_matrix_direct(hs, word):
    """Q_w by summing edge energies of the coordinate harmonics inside cell w.

    Uses a level-|w| Dirichlet solve, never the extension matrices.
    """
    word = tuple(word)
    n = len(word)
    lg = hs.fdef.level(n)
    H = dirichlet_solve(hs.form(n), np.arange(hs.fdef.b), np.eye(hs.fdef.b))
    Hw = H[lg.cells[word_index(word, hs.fdef.m)]]  # (b, b): vertex a, harmonic j
    Q = np.zeros((hs.fdef.b, hs.fdef.b))
    for x, y, c in hs.e0.conductances():
        d = Hw[x] - Hw[y]
        Q += c * np.outer(d, d)
    return _rho_word(hs, word) * Q


def level_q(hs, n):
    """Q_w for every word of length n, stacked in word-index order."""
    return hs.cached(("Q", n), lambda: _level_q(hs, n))


def _level_q(hs, n):
    M = hs.ext.level(n)
    rho = hs.weights.word_weights(n)
    Q = rho[:, None, None] * np.einsum("wab,ac,wcd->wbd", M, hs.d0, M, optimize=True)
    return 0.5 * (Q + Q.transpose(0, 2, 1))


def null_mask(Q, total):
    return np.trace(Q, axis1=1, axis2=2) < NULL_TOL * total


def additivity_check(hs, word):
    word = tuple(word)
    parent = cell_energy_matrix(hs, word).Q
    kids = sum(cell_energy_matrix(hs, word + (j,)).Q for j in range(hs.fdef.m))
    return float(np.abs(parent - kids).max())


def level_additivity(hs, n):
    """max over words of length < n of |Q_w - sum_j Q_wj|."""
    worst = 0.0
    for k in range(n):
        parent = level_q(hs, k)
        kids = level_q(hs, k + 1).reshape(parent.shape[0], hs.fdef.m, hs.fdef.b, hs.fdef.b).sum(axis=1)
        worst = max(worst, float(np.abs(parent - kids).max()))
    return worst


def z_matrix(hs, word):
    return cell_energy_matrix(hs, word).Z


def _charged(nus, total):
    """Child measures with roundoff-level (null) entries set to zero."""
    return np.where(nus < NULL_TOL * total, 0.0, nus)


class MeasureTrap(RuntimeError):
    """All children of a sampled cell have zero measure."""


def _child_probs(hs, word):
    """nu(F_wj)/nu(F_w) for j = 1..m."""
    M = hs.ext.M(word)
    nus = np.array(
        [hs.rho[j] * np.trace(hs.ext.A[j].T @ hs.d0 @ hs.ext.A[j] @ M @ M.T) for j in range(hs.fdef.m)]
    )
    nus = _charged(nus, np.trace(hs.d0))
    tot = nus.sum()
    if tot <= 0:
        raise MeasureTrap(f"cell {format_word(word)} has no charged children")
    return nus / tot


def measure_sample(hs, depth, seed=None, rng=None):
    """A word of length ``depth`` drawn from nu, one symbol at a time."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    word = ()
    for _ in range(depth):
        word = word + (int(rng.choice(hs.fdef.m, p=_child_probs(hs, word))),)
    return word


@dataclass
class ZStatsReport:
    fractal: str
    depth: int
    n_samples: int
    seed: int
    ratio_quantiles: np.ndarray  # (depth, 3): 10/50/90% of lambda_2/lambda_1
    increment_quantiles: np.ndarray  # (depth, 3) of ||Z_{k} - Z_{k-1}||_F
    martingale_residual: float

    @property
    def median_ratio(self):
        return self.ratio_quantiles[:, 1]

    def lines(self):
        out = [
            f"fractal {self.fractal}  depth {self.depth}  samples {self.n_samples}  seed {self.seed}",
            f"martingale identity residual {self.martingale_residual:.3e}",
            "depth   ratio_q10     ratio_med     ratio_q90     incr_med",
        ]
        for k in range(self.depth):
            r = self.ratio_quantiles[k]
            out.append(
                f"{k + 1:5d}  {r[0]:.6e}  {r[1]:.6e}  {r[2]:.6e}  {self.increment_quantiles[k, 1]:.6e}"
            )
        return out


def martingale_stats(hs, depth, n_samples, seed=0):
    """Sample nu-paths and record Z spectra, increments and the martingale identity."""
    if depth > 20 or n_samples > 100_000:
        raise ValueError("depth <= 20 and n_samples <= 1e5 required")
    rng = np.random.default_rng(seed)
    m, b = hs.fdef.m, hs.fdef.b
    A, d0 = hs.ext.A, hs.d0
    ratios = np.zeros((n_samples, depth))
    incr = np.zeros((n_samples, depth))
    resid = 0.0
    for s in range(n_samples):
        M = np.eye(b)
        rho_w = 1.0
        Q = d0
        Z = Q / np.trace(Q)
        for k in range(depth):
            # children's Q at once: rho_w rho_j (A_j M)^T D0 (A_j M)
            AM = A @ M
            kids = rho_w * hs.rho[:, None, None] * np.einsum("jab,ac,jcd->jbd", AM, d0, AM)
            kids = 0.5 * (kids + kids.transpose(0, 2, 1))
            resid = max(resid, float(np.abs(kids.sum(axis=0) - Q).max() / np.trace(hs.d0)))
            nus = _charged(np.trace(kids, axis1=1, axis2=2), np.trace(d0))
            j = int(rng.choice(m, p=nus / nus.sum()))
            M = AM[j]
            rho_w *= hs.rho[j]
            Q = kids[j]
            Znew = Q / nus[j]
            ev = np.linalg.eigvalsh(Znew)
            # eigenvalues at roundoff scale count as zero (numerical rank)
            lam2 = ev[-2] if ev[-2] > b * EPS * ev[-1] else 0.0
            ratios[s, k] = lam2 / ev[-1]
            incr[s, k] = np.linalg.norm(Znew - Z)
            Z = Znew
    qs = [10, 50, 90]
    return ZStatsReport(
        hs.fdef.name,
        depth,
        n_samples,
        seed,
        np.percentile(ratios, qs, axis=0).T,
        np.percentile(incr, qs, axis=0).T,
        resid,
    )


def centroid_operator(hs, tol=1e-14, max_iter=200):
    """Tensor T with S(C)_j = sum_{p,q} T[j,p,q] C[p,q].

    For a harmonic-coordinate matrix C = M M^T of a cell, S(C) is the nu-weighted
    integral of the coordinate function over the rescaled fractal, so that the
    exact nu-centroid of F_w is rho_w M_w^T S(M_w M_w^T) / nu(F_w).  S solves
    S(C) = sum_i A_i^T S(rho_i A_i C A_i^T) with S(C)_j summing to Tr(D_0 C).
    """
    A, rho, d0 = hs.ext.A, hs.rho, hs.d0
    b = hs.fdef.b
    P = np.eye(b) - 1.0 / b
    T = np.einsum("qp,j->jpq", d0, np.full(b, 1.0 / b))
    for _ in range(max_iter):
        new = np.einsum("i,ikj,irp,isq,krs->jpq", rho, A, A, A, T, optimize=True)
        # S(C) only sees C modulo constants; the constant directions grow like sum(rho)
        new = P @ (0.5 * (new + new.transpose(0, 2, 1))) @ P
        step = np.abs(new - T).max()
        T = new
        if step < tol * np.abs(T).max():
            break
    return T


def level_centroids(hs, n, T=None):
    """x_w (nu-centroid of psi over F_w) for every word of length n.

    Null cells fall back to the vertex average of psi(V_w).
    """
    T = hs.cached("centroid", lambda: centroid_operator(hs)) if T is None else T
    M = hs.ext.level(n)
    rho = hs.weights.word_weights(n)
    C = np.einsum("wab,wcb->wac", M, M)  # M M^T
    S = np.einsum("jpq,wpq->wj", T, C)
    num = rho[:, None] * np.einsum("waj,wa->wj", M, S)
    nu = np.trace(level_q(hs, n), axis1=1, axis2=2)
    null = nu < NULL_TOL * np.trace(hs.d0)
    out = np.where(null[:, None], M.mean(axis=1), num / np.where(null, 1.0, nu)[:, None])
    return out
