"""Tyler-type scatter estimators and the robust HOSVD variant built on them.

Samples are the rows of ``X`` (shape ``(N, D)``).  All estimators start from
``Sigma = I / D`` and stop when the relative Frobenius change of ``Sigma``
drops below ``conv_tol``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor_core import flatten, multi_mode_product


class SubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class SubspaceConfig:
    d: int = 1
    ste_gamma: float = 0.9
    reg_alpha: float = 0.05
    max_iters: int = 200
    conv_tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.ste_gamma < 1:
            raise ValueError("ste_gamma must lie in (0, 1)")
        if self.reg_alpha < 0:
            raise ValueError("reg_alpha must be >= 0")
        if self.max_iters < 1 or self.conv_tol <= 0:
            raise ValueError("max_iters >= 1 and conv_tol > 0 required")


@dataclass
class CovarianceEstimate:
    sigma: np.ndarray
    iterations: int
    converged: bool


@dataclass
class SubspaceEstimate:
    basis: np.ndarray
    sigma: np.ndarray
    iterations: int
    converged: bool


def _check_samples(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise SubspaceError("samples must be a 2-D array (N, D)")
    if np.any(np.linalg.norm(X, axis=1) == 0):
        raise SubspaceError("zero sample")
    return X


def _inv_psd(sigma, floor=1e-14):
    w, U = np.linalg.eigh(sigma)
    w = np.maximum(w, floor * w.max())
    return (U / w) @ U.T


def _weighted_scatter(X, sigma, prefactor=True):
    """``(D/N) sum_i x_i x_i^T / (x_i^T Sigma^{-1} x_i)``."""
    N, D = X.shape
    q = np.einsum("ij,jk,ik->i", X, _inv_psd(sigma), X)
    if np.any(q <= 0) or not np.all(np.isfinite(q)):
        raise SubspaceError("singular scatter matrix in Tyler iteration")
    Z = (X / q[:, None]).T @ X
    return Z * (D / N) if prefactor else Z


def _rel_change(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def tme(X, cfg: SubspaceConfig = SubspaceConfig()) -> CovarianceEstimate:
    """Tyler's M-estimator, trace-normalized."""
    X = _check_samples(X)
    N, D = X.shape
    if N <= D:
        raise SubspaceError(f"TME needs N > D (got N={N}, D={D}); use regularized_tme")
    sigma = np.eye(D) / D
    for k in range(1, cfg.max_iters + 1):
        Z = _weighted_scatter(X, sigma)
        new = Z / np.trace(Z)
        if np.linalg.eigvalsh(new)[0] <= 1e-14:
            raise SubspaceError("TME iterate became singular (rank-deficient samples)")
        done = _rel_change(new, sigma) < cfg.conv_tol
        sigma = new
        if done:
            return CovarianceEstimate(sigma, k, True)
    return CovarianceEstimate(sigma, cfg.max_iters, False)


def regularized_tme(X, cfg: SubspaceConfig = SubspaceConfig()) -> CovarianceEstimate:
    """Regularized TME, shrunk towards the identity; reported with unit trace.

    Each iterate is renormalized to unit trace and the identity term is
    expressed in those units (``I / D``), as in regularized STE.  This keeps
    the iteration bounded for every ``reg_alpha > 0`` even when ``N < D``; a
    fixed multiple of the identity on an unnormalized iterate has no fixed
    point once ``D / (N (1 + reg_alpha)) > 1`` and the iterates blow up.
    """
    X = _check_samples(X)
    N, D = X.shape
    a = cfg.reg_alpha
    if a == 0 and N <= D:
        raise SubspaceError("reg_alpha must be positive when N <= D")
    sigma = np.eye(D) / D
    for k in range(1, cfg.max_iters + 1):
        new = _weighted_scatter(X, sigma) / (1 + a) + a / (1 + a) * np.trace(sigma) / D * np.eye(D)
        new /= np.trace(new)
        done = _rel_change(new, sigma) < cfg.conv_tol
        sigma = new
        if done:
            return CovarianceEstimate(sigma, k, True)
    return CovarianceEstimate(sigma, cfg.max_iters, False)


def _ste_shrink(Z, d, gamma):
    w, U = np.linalg.eigh(Z)
    w, U = w[::-1], U[:, ::-1]
    w = w.copy()
    w[d:] = gamma * w[d:].mean()
    S = (U * w) @ U.T
    return (S + S.T) / 2 / np.sum(w), U


def _ste(X, cfg, alpha):
    X = _check_samples(X)
    N, D = X.shape
    d = cfg.d
    if not 0 < d < D:
        raise SubspaceError(f"subspace dimension d={d} must satisfy 0 < d < D={D}")
    if N < d:
        raise SubspaceError("need at least d samples")
    sigma = np.eye(D) / D
    U = np.eye(D)
    for k in range(1, cfg.max_iters + 1):
        Z = _weighted_scatter(X, sigma)
        if alpha > 0:
            # identity expressed in the units of the trace-normalized iterate
            Z = Z / (1 + alpha) + alpha / (1 + alpha) * np.trace(sigma) / D * np.eye(D)
        new, U = _ste_shrink(Z, d, cfg.ste_gamma)
        done = _rel_change(new, sigma) < cfg.conv_tol
        sigma = new
        if done:
            return SubspaceEstimate(U[:, :d], sigma, k, True)
    return SubspaceEstimate(U[:, :d], sigma, cfg.max_iters, False)


def ste(X, cfg: SubspaceConfig) -> SubspaceEstimate:
    """Subspace-constrained Tyler's estimator; ``basis`` spans the recovered d-dim subspace."""
    return _ste(X, cfg, 0.0)


def regularized_ste(X, cfg: SubspaceConfig) -> SubspaceEstimate:
    return _ste(X, cfg, cfg.reg_alpha)


def horste(T, ranks=(6, 4, 4), cfg: SubspaceConfig = SubspaceConfig(), sample_tol: float = 1e-12,
           return_factors: bool = False):
    """HOSVD with per-mode subspaces from regularized STE.

    Columns of each flattening are the samples; numerically zero columns carry
    no direction and are dropped before estimation.
    """
    T = np.asarray(T, dtype=float)
    if not np.any(T):
        raise SubspaceError("zero tensor has no samples")
    factors = []
    for mode, r in zip((1, 2, 3), ranks):
        M = flatten(T, mode)
        norms = np.linalg.norm(M, axis=0)
        cols = M[:, norms > sample_tol * norms.max()]
        est = regularized_ste(cols.T, replace(cfg, d=r))
        factors.append(est.basis)
    core = multi_mode_product(T, [A.T for A in factors])
    out = multi_mode_product(core, factors)
    return (out, factors) if return_factors else out
