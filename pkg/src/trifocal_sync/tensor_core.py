"""Dense order-3 tensor algebra: flattenings, mode products, SVD backends and HOSVD.

Tensors are plain ``numpy`` arrays of shape ``(d1, d2, d3)``.  Modes are numbered
1, 2, 3.  The mode-m flattening has the mode-m fibers as columns, ordered
lexicographically in the remaining two indices with the *last* index running
fastest, i.e. ``flatten(T, 1)[a, b * d3 + c] == T[a, b, c]``.  This is numpy's C
order, so ``T.ravel()`` is the canonical linearization used for serialization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdConfig",
    "TuckerFactors",
    "ThresholdTooHighError",
    "flatten",
    "unflatten",
    "mode_product",
    "multi_mode_product",
    "truncated_svd",
    "hosvd",
    "hosvd_ht",
    "hooi",
    "multilinear_rank",
    "singular_values",
]


class ThresholdTooHighError(ValueError):
    """No singular value of some flattening exceeds its threshold."""

    def __init__(self, mode: int, sigma_max: float, threshold: float):
        self.mode = mode
        self.sigma_max = sigma_max
        self.threshold = threshold
        super().__init__(
            f"threshold too high for mode {mode}: largest singular value "
            f"{sigma_max:.3e} <= threshold {threshold:.3e}"
        )


@dataclass(frozen=True)
class SvdConfig:
    """Backend used for every per-mode SVD.

    ``mode="randomized"`` uses a seeded Gaussian range finder with
    ``oversampling`` extra columns and ``power_iterations`` subspace iterations.
    """

    mode: str = "exact"
    oversampling: int = 10
    power_iterations: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "randomized"):
            raise ValueError(f"unknown SVD mode {self.mode!r}")
        if self.oversampling < 0 or self.power_iterations < 0:
            raise ValueError("oversampling and power_iterations must be >= 0")


EXACT = SvdConfig()


@dataclass
class TuckerFactors:
    core: np.ndarray
    factors: tuple

    @property
    def ranks(self) -> tuple:
        return tuple(self.core.shape)

    def reconstruct(self) -> np.ndarray:
        return multi_mode_product(self.core, self.factors)


def _check_mode(mode) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def flatten(T: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``(d_mode, prod(other dims))``."""
    m = _check_mode(mode)
    T = np.asarray(T)
    if T.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got ndim={T.ndim}")
    return np.moveaxis(T, m, 0).reshape(T.shape[m], -1)


def unflatten(M: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`flatten`."""
    m = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError("dims must have length 3")
    M = np.asarray(M)
    rest = [d for i, d in enumerate(dims) if i != m]
    if M.shape != (dims[m], rest[0] * rest[1]):
        raise ValueError(f"matrix shape {M.shape} inconsistent with dims {dims} for mode {mode}")
    return np.moveaxis(M.reshape(dims[m], *rest), 0, m)


def mode_product(T: np.ndarray, U: np.ndarray, mode: int) -> np.ndarray:
    """``T x_mode U``: contracts the mode index of ``T`` with the columns of ``U``."""
    m = _check_mode(mode)
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[1] != T.shape[m]:
        raise ValueError(
            f"dimension mismatch: U has shape {U.shape}, tensor mode {mode} has size {T.shape[m]}"
        )
    dims = list(T.shape)
    dims[m] = U.shape[0]
    return unflatten(U @ flatten(T, mode), mode, dims)


def multi_mode_product(core: np.ndarray, factors) -> np.ndarray:
    """``core x1 A1 x2 A2 x3 A3``."""
    A1, A2, A3 = factors
    return np.einsum("abc,ia,jb,kc->ijk", core, A1, A2, A3, optimize=True)


def _randomized_svd(M, k, cfg: SvdConfig):
    rows, cols = M.shape
    rng = np.random.default_rng(cfg.seed)
    ell = min(k + cfg.oversampling, min(rows, cols))
    Q, _ = np.linalg.qr(M @ rng.standard_normal((cols, ell)))
    for _ in range(cfg.power_iterations):
        # re-orthonormalize between applications to keep small singular directions
        Z, _ = np.linalg.qr(M.T @ Q)
        Q, _ = np.linalg.qr(M @ Z)
    Ub, S, Vt = np.linalg.svd(Q.T @ M, full_matrices=False)
    return (Q @ Ub)[:, :k], S[:k], Vt[:k].T


def truncated_svd(M: np.ndarray, k: int, cfg: SvdConfig = EXACT):
    """Leading ``k`` singular triplets ``(U, S, V)`` with ``M ~ U diag(S) V^T``."""
    M = np.asarray(M, dtype=float)
    if not 1 <= k <= min(M.shape):
        raise ValueError(f"k={k} out of range for matrix of shape {M.shape}")
    if cfg.mode == "randomized":
        return _randomized_svd(M, k, cfg)
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    return U[:, :k], S[:k], Vt[:k].T


def singular_values(T: np.ndarray, mode: int) -> np.ndarray:
    return np.linalg.svd(flatten(T, mode), compute_uv=False)


def _left_singular(T, mode, cfg):
    """All left singular vectors/values of a flattening (thin)."""
    M = flatten(T, mode)
    k = min(M.shape)
    U, S, _ = truncated_svd(M, k, cfg)
    return U, S


def hosvd(T: np.ndarray, ranks, cfg: SvdConfig = EXACT) -> TuckerFactors:
    """Truncated higher-order SVD with multilinear rank ``ranks``."""
    T = np.asarray(T, dtype=float)
    factors = []
    for mode, r in zip((1, 2, 3), ranks):
        if not 1 <= r <= T.shape[mode - 1]:
            raise ValueError(f"rank {r} out of range for mode {mode} of size {T.shape[mode - 1]}")
        U, _, _ = truncated_svd(flatten(T, mode), r, cfg)
        factors.append(U)
    core = multi_mode_product(T, [A.T for A in factors])
    return TuckerFactors(core, tuple(factors))


def hosvd_ht(T: np.ndarray, thresholds, cfg: SvdConfig = EXACT, return_ranks: bool = False):
    """HOSVD with hard-thresholded ranks.

    Mode m keeps the left singular vectors whose singular value is strictly
    greater than ``thresholds[m-1]``; ties are dropped.  Raises
    :class:`ThresholdTooHighError` if a mode would keep nothing.
    """
    T = np.asarray(T, dtype=float)
    if any(l < 0 for l in thresholds):
        raise ValueError("thresholds must be nonnegative")
    factors, ranks = [], []
    for mode, l in zip((1, 2, 3), thresholds):
        U, S = _left_singular(T, mode, cfg)
        a = int(np.count_nonzero(S > l))
        if a == 0:
            raise ThresholdTooHighError(mode, float(S[0]) if S.size else 0.0, float(l))
        factors.append(U[:, :a])
        ranks.append(a)
    core = multi_mode_product(T, [A.T for A in factors])
    out = multi_mode_product(core, factors)
    if return_ranks:
        return out, tuple(ranks)
    return out


def hooi(T: np.ndarray, ranks, n_iter: int = 50, tol: float = 1e-12, init: TuckerFactors | None = None) -> TuckerFactors:
    """Higher-order orthogonal iteration started from the HOSVD."""
    T = np.asarray(T, dtype=float)
    tk = init if init is not None else hosvd(T, ranks)
    A = list(tk.factors)
    prev = None
    for _ in range(n_iter):
        for m in range(3):
            others = [A[i].T if i != m else np.eye(T.shape[i]) for i in range(3)]
            Y = multi_mode_product(T, others)
            U, _, _ = truncated_svd(flatten(Y, m + 1), ranks[m])
            A[m] = U
        core = multi_mode_product(T, [a.T for a in A])
        cn = np.linalg.norm(core)
        if prev is not None and abs(cn - prev) <= tol * max(cn, 1.0):
            break
        prev = cn
    return TuckerFactors(core, tuple(A))


def multilinear_rank(T: np.ndarray, rel_tol: float = 1e-10) -> tuple:
    """Numerical multilinear rank: per mode, count of ``sigma_i / sigma_1 > rel_tol``."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    ranks = []
    for mode in (1, 2, 3):
        S = singular_values(T, mode)
        if S.size == 0 or S[0] == 0:
            ranks.append(0)
        else:
            ranks.append(int(np.count_nonzero(S / S[0] > rel_tol)))
    return tuple(ranks)
