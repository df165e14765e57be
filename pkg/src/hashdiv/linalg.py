"""Numerical kernels: truncated SVD by subspace iteration, and Euclidean
projection onto the capped simplex {a : sum(a) = k, 0 <= a <= 1}.

Subspace iteration was chosen over Lanczos: simpler, deterministic given a
seeded start block, and adequate for the desk-scale ranks (<= 500) this
library targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class TruncatedBasis:
    """Top singular directions of a d x n matrix X.

    U: (d, alpha) with orthonormal columns, singular values non-increasing.
    residual_history holds max-column residual |X X^T u - s^2 u| / s1^2 per
    outer iteration.
    """

    U: np.ndarray
    singular_values: np.ndarray
    converged: bool
    iterations: int
    residual_history: tuple[float, ...] = ()


def truncated_svd(X, alpha: int, tol: float = 1e-6, max_iter: int = 300, seed: int = 0) -> TruncatedBasis:
    """Top-alpha left singular vectors of X (d x n, columns are points).

    Block power iteration on X X^T with QR re-orthonormalization and a
    Rayleigh-Ritz rotation each sweep. Column i of the result satisfies
    ||X X^T u_i - s_i^2 u_i|| <= tol * s_1^2 on convergence; if max_iter is
    exhausted the best iterate is returned with converged=False.
    """
    d, n = X.shape
    if not 1 <= alpha <= min(d, n):
        raise ValueError(f"alpha={alpha} out of range [1, {min(d, n)}]")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, alpha)))
    Xt = X.T.tocsr() if sp.issparse(X) else X.T
    history: list[float] = []
    converged = False
    it = 0
    lam = np.zeros(alpha)
    for it in range(1, max_iter + 1):
        W = Xt @ Q                      # (n, alpha)
        Z = X @ W                       # X X^T Q
        B = W.T @ W                     # = Q^T X X^T Q, symmetric PSD
        evals, V = np.linalg.eigh(B)
        order = np.argsort(evals)[::-1]
        lam = np.clip(evals[order], 0.0, None)
        U = Q @ V[:, order]
        R = Z @ V[:, order] - U * lam   # per-column residual X X^T u - lam u
        res = np.linalg.norm(R, axis=0)
        scale = lam[0] if lam[0] > 0 else 1.0
        history.append(float(res.max() / scale))
        if np.all(res <= tol * scale):
            Q = U
            converged = True
            break
        Q, _ = np.linalg.qr(Z)
    else:
        Q = U
    return TruncatedBasis(
        U=Q,
        singular_values=np.sqrt(lam),
        converged=converged,
        iterations=it,
        residual_history=tuple(history),
    )


@dataclass(frozen=True)
class CappedSimplex:
    """Feasible set {a in R^n : sum(a) = k, 0 <= a <= 1} of the relaxed
    selection program."""

    k: int
    n: int

    def __post_init__(self):
        if not 0 < self.k <= self.n:
            raise ValueError(f"need 0 < k <= n, got k={self.k}, n={self.n}")

    def contains(self, v, atol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.n:
            return False
        return bool(np.all(v >= -atol) and np.all(v <= 1 + atol) and np.isclose(v.sum(), self.k, atol=atol))

    def project(self, v) -> np.ndarray:
        return project_capped_simplex(v, self.k)


def project_capped_simplex(v, k: int) -> np.ndarray:
    """Euclidean projection of v onto {a : sum(a) = k, 0 <= a <= 1}.

    Solves sum_i clip(v_i - tau, 0, 1) = k for the scalar tau by bisecting
    the sorted breakpoint grid {v_i, v_i - 1}; exact in exact arithmetic,
    no tolerance knob. O(n log n).
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if not 0 < k <= n:
        raise ValueError(f"budget k={k} out of range (0, {n}]")
    if k == n:
        return np.ones(n)

    def mass(tau: float) -> float:
        return float(np.clip(v - tau, 0.0, 1.0).sum())

    bps = np.concatenate([v - 1.0, v])
    bps.sort()
    # mass is non-increasing in tau: mass(bps[0]) = n >= k, mass(bps[-1]) = 0.
    lo, hi = 0, bps.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mass(bps[mid]) >= k:
            lo = mid
        else:
            hi = mid
    mid_tau = 0.5 * (bps[lo] + bps[hi])
    free = (v - mid_tau > 0.0) & (v - mid_tau < 1.0)
    n_ones = int(np.count_nonzero(v - mid_tau >= 1.0))
    nf = int(np.count_nonzero(free))
    if nf == 0:
        tau = mid_tau  # mass is flat (= n_ones = k) on this segment
    else:
        tau = (n_ones + v[free].sum() - k) / nf
    return np.clip(v - tau, 0.0, 1.0)
