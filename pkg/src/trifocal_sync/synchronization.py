"""Scale synchronization and completion of an observed block trifocal tensor.

Each iteration projects the current tensor onto low multilinear rank (hard
thresholded HOSVD or the robust HOrSTE variant), rescales every observed block
towards its projection, and refills the unobserved blocks from the projection.
Cameras are read off the leading mode-2 singular vectors at the end.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .block_tensor import BlockTensor, expand_blockwise, to_blocks
from .robust_subspace import SubspaceConfig, horste
from .tensor_core import EXACT, SvdConfig, ThresholdTooHighError, flatten, hosvd, hosvd_ht, singular_values

log = logging.getLogger(__name__)

THRESHOLD_RULES = ("tertile", "tertile_nonzero", "explicit")
PROJECTORS = ("hosvd_ht", "horste")
SCALE_FORMULAS = ("least_squares", "paper_literal")


class SyncError(RuntimeError):
    pass


class OrphanCameraError(SyncError, ValueError):
    def __init__(self, cameras):
        self.cameras = list(cameras)
        super().__init__(f"camera(s) {self.cameras} appear in no observed off-diagonal block")


class ProjectionError(SyncError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        super().__init__(f"projection failed at iteration {iteration}: {cause}")


@dataclass(frozen=True)
class SyncConfig:
    thresholds: tuple | None = None
    threshold_rule: str = "tertile"
    projector: str = "hosvd_ht"
    scale_formula: str = "least_squares"
    max_iters: int = 50
    variance_jump_factor: float = 10.0
    init_scale: float = 1e-2
    change_tol: float = 1e-10
    renormalize: bool = True
    seed: int = 0
    svd: SvdConfig = EXACT
    subspace: SubspaceConfig = field(default_factory=SubspaceConfig)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.variance_jump_factor > 1:
            raise ValueError("variance_jump_factor must be > 1")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"threshold_rule must be one of {THRESHOLD_RULES}")
        if self.projector not in PROJECTORS:
            raise ValueError(f"projector must be one of {PROJECTORS}")
        if self.scale_formula not in SCALE_FORMULAS:
            raise ValueError(f"scale_formula must be one of {SCALE_FORMULAS}")
        if self.threshold_rule == "explicit":
            if self.thresholds is None or len(self.thresholds) != 3:
                raise ValueError("explicit threshold rule needs three thresholds")
        if self.thresholds is not None and any(l < 0 for l in self.thresholds):
            raise ValueError("thresholds must be nonnegative")


@dataclass
class IterationRecord:
    iteration: int
    ranks: tuple
    scale_variance: float
    tensor_change: float
    gap_mode2: float  # sigma_4 / sigma_5 of the mode-2 flattening

    def row(self) -> dict:
        return {
            "iteration": self.iteration,
            "rank1": self.ranks[0], "rank2": self.ranks[1], "rank3": self.ranks[2],
            "scale_variance": self.scale_variance,
            "tensor_change": self.tensor_change,
            "gap_mode2": self.gap_mode2,
        }


@dataclass
class SyncState:
    tensor: np.ndarray
    mask: np.ndarray
    scales: np.ndarray  # cumulative per-block scale field, zero off the mask
    thresholds: tuple
    iteration: int = 0
    variance_history: list = field(default_factory=list)
    records: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    stop_reason: str | None = None

    def copy(self) -> "SyncState":
        return SyncState(self.tensor.copy(), self.mask.copy(), self.scales.copy(), self.thresholds,
                         self.iteration, list(self.variance_history), list(self.records),
                         list(self.flagged), self.stop_reason)


@dataclass
class SyncResult:
    cameras: np.ndarray
    tensor: np.ndarray
    iterations: int
    stop_reason: str
    scales: np.ndarray
    thresholds: tuple
    diagnostics: list

    def diagnostics_rows(self) -> list:
        return [r.row() for r in self.diagnostics]


def _offdiag_mask(n):
    m = np.ones((n, n, n), dtype=bool)
    d = np.arange(n)
    m[d, d, d] = False
    return m


def _impute(bt: BlockTensor, init_scale: float, seed: int) -> np.ndarray:
    B = bt.blocks()
    obs = bt.mask & _offdiag_mask(bt.n)
    norms = np.linalg.norm(B[obs].reshape(-1, 27), axis=1)
    if norms.size == 0 or not np.any(norms > 0):
        raise SyncError("all observed blocks are zero")
    mag = init_scale * float(np.median(norms)) / math.sqrt(27)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(bt.tensor.shape) * mag
    W = bt.weight
    return bt.tensor * W + noise * (1 - W)


TARGET_RANKS = (6, 4, 4)


def _tertile(S, rule, rank):
    S = np.sort(S)[::-1]
    floor = 1e-12 * S[0]
    # never cut below the target rank: small n puts the tertile inside the signal
    cap = float(S[rank]) if S.size > rank else 0.0
    if rule == "tertile_nonzero":
        S = S[S > floor]
    idx = math.ceil(S.size / 3) - 1
    return max(min(float(S[idx]), cap), floor)


def init_thresholds(bt: BlockTensor, cfg: SyncConfig) -> tuple:
    """Hard thresholds for the three modes, fixed for the whole run.

    Unobserved blocks are first filled with small random entries.  The
    ``tertile`` rule takes the singular value at position ``ceil(k/3)``
    (1-based, descending) among all ``k = 3n`` singular values of each
    flattening, floored at ``1e-12 sigma_1`` and capped at ``sigma_{r+1}`` for
    the target rank ``r`` of the mode (6, 4, 4), so the strict threshold
    always keeps at least ``r`` directions.  ``tertile_nonzero`` restricts
    ``k`` to the singular values above the floor.
    """
    if cfg.threshold_rule == "explicit":
        return tuple(float(l) for l in cfg.thresholds)
    T0 = _impute(bt, cfg.init_scale, cfg.seed)
    return tuple(_tertile(singular_values(T0, m), cfg.threshold_rule, r)
                 for m, r in zip((1, 2, 3), TARGET_RANKS))


def scale_update(est_block, trunc_block, cfg: SyncConfig | None = None):
    """Per-block scale ``mu``; returns ``(mu, ok)``.

    ``least_squares`` minimizes ``||mu est - trunc||``; ``paper_literal``
    divides the same inner product by ``||trunc||^2`` instead.  When the
    denominator vanishes the scale is left at 1 and ``ok`` is False.
    """
    formula = cfg.scale_formula if cfg is not None else "least_squares"
    est = np.asarray(est_block, dtype=float)
    trunc = np.asarray(trunc_block, dtype=float)
    num = float(np.vdot(est, trunc))
    den_src = est if formula == "least_squares" else trunc
    den = float(np.vdot(den_src, den_src))
    ref = max(np.linalg.norm(est), np.linalg.norm(trunc)) ** 2
    if den <= 1e-14 * ref or den == 0:
        return 1.0, False
    return num / den, True


def _project(T, state: SyncState, cfg: SyncConfig):
    if cfg.projector == "horste":
        return horste(T, TARGET_RANKS, cfg.subspace), TARGET_RANKS
    return hosvd_ht(T, state.thresholds, cfg.svd, return_ranks=True)


def _gap(T):
    S = singular_values(T, 2)
    return float(S[3] / S[4]) if S.size > 4 and S[4] > 0 else float("inf")


def sync_iteration(state: SyncState, cfg: SyncConfig) -> SyncState:
    """One projection, scale and imputation step; returns a new state."""
    T = state.tensor
    n = state.mask.shape[0]
    try:
        P, ranks = _project(T, state, cfg)
    except (ThresholdTooHighError, np.linalg.LinAlgError, ValueError) as exc:
        raise ProjectionError(state.iteration + 1, exc) from exc
    Bt, Bp = to_blocks(T), to_blocks(P)
    obs = state.mask & _offdiag_mask(n)
    mu = np.ones((n, n, n))
    flagged = []
    for i, j, k in zip(*np.nonzero(obs)):
        m, ok = scale_update(Bt[i, j, k], Bp[i, j, k], cfg)
        mu[i, j, k] = m
        if not ok:
            flagged.append((int(i), int(j), int(k)))
    W = expand_blockwise(state.mask.astype(float))
    if cfg.renormalize:
        # one global factor keeps the observed region's norm, so the fixed
        # thresholds stay commensurate with the tensor
        scaled = np.linalg.norm(expand_blockwise(mu) * T * W)
        if scaled > 0:
            mu[obs] *= np.linalg.norm(T * W) / scaled
    new = np.where(W > 0, expand_blockwise(mu) * T, P)
    change = float(np.linalg.norm(new - T) / max(np.linalg.norm(T), 1e-300))
    var = float(np.var(mu[obs])) if np.any(obs) else 0.0
    out = state.copy()
    out.tensor = new
    out.scales = np.where(state.mask, state.scales * mu, 0.0)
    out.iteration = state.iteration + 1
    out.variance_history.append(var)
    out.flagged = flagged
    out.records.append(IterationRecord(out.iteration, tuple(ranks), var, change, _gap(new)))
    return out


def extract_cameras(T, mode: int = 2) -> np.ndarray:
    """Leading four left singular vectors of the mode-2 (or mode-3) flattening."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 3 or len(set(T.shape)) != 1 or T.shape[0] % 3:
        raise ValueError("expected a (3n, 3n, 3n) tensor")
    if mode not in (2, 3):
        raise ValueError("cameras live in mode 2 or mode 3")
    U, S, _ = np.linalg.svd(flatten(T, mode), full_matrices=False)
    if S[3] < 1e-12 * S[0]:
        log.warning("degenerate flattening: sigma_4/sigma_1 = %.3g", S[3] / S[0])
    return U[:, :4]


def orphan_cameras(mask) -> list:
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    obs = mask & _offdiag_mask(n)
    seen = obs.any(axis=(1, 2)) | obs.any(axis=(0, 2)) | obs.any(axis=(0, 1))
    return [int(i) for i in np.nonzero(~seen)[0]]


def _jumped(history, factor) -> bool:
    if len(history) < 4:
        return False
    base = float(np.median(history[-4:-1]))
    return history[-1] > factor * max(base, 1e-300)


def initial_state(bt: BlockTensor, cfg: SyncConfig) -> SyncState:
    thresholds = init_thresholds(bt, cfg)
    T0 = _impute(bt, cfg.init_scale, cfg.seed)
    scales = np.where(bt.mask, 1.0, 0.0)
    st = SyncState(T0, bt.mask.copy(), scales, thresholds)
    st.records.append(IterationRecord(0, (0, 0, 0), 0.0, 0.0, _gap(T0)))
    return st


def synchronize(bt: BlockTensor, cfg: SyncConfig = SyncConfig()) -> SyncResult:
    """Run the synchronization loop and extract cameras from the final tensor."""
    orphans = orphan_cameras(bt.mask)
    if orphans:
        raise OrphanCameraError(orphans)
    state = initial_state(bt, cfg)
    while True:
        new = sync_iteration(state, cfg)
        if _jumped(new.variance_history, cfg.variance_jump_factor):
            state.stop_reason = "variance_jump"
            break
        state = new
        if state.records[-1].tensor_change < cfg.change_tol:
            state.stop_reason = "converged"
            break
        if state.iteration >= cfg.max_iters:
            state.stop_reason = "max_iters"
            break
    log.info("synchronization stopped after %d iterations (%s)", state.iteration, state.stop_reason)
    tf = hosvd(state.tensor, TARGET_RANKS, cfg.svd)
    return SyncResult(tf.factors[1][:, :4], state.tensor, state.iteration, state.stop_reason,
                      state.scales, state.thresholds, state.records)
