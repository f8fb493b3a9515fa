"""The (3n)^3 block trifocal tensor, its Tucker factors and structural checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera_geometry import Camera, fundamental_from_cameras, line_projection_matrix, stack_cameras
from .tensor_core import multilinear_rank, singular_values
from .trifocal import _DROP, _SIGN

__all__ = [
    "BlockTensor",
    "PropertyReport",
    "core_tensor",
    "build_block_tensor",
    "tucker_factors",
    "to_blocks",
    "from_blocks",
    "expand_blockwise",
    "apply_block_scaling",
    "check_block_properties",
    "multilinear_rank",
    "rank_gap",
]


def to_blocks(T: np.ndarray) -> np.ndarray:
    """View a (3n)^3 tensor as an ``(n, n, n, 3, 3, 3)`` array of blocks (copy)."""
    n = T.shape[0] // 3
    return T.reshape(n, 3, n, 3, n, 3).transpose(0, 2, 4, 1, 3, 5).copy()


def from_blocks(B: np.ndarray) -> np.ndarray:
    n = B.shape[0]
    return B.transpose(0, 3, 1, 4, 2, 5).reshape(3 * n, 3 * n, 3 * n)


def expand_blockwise(lam: np.ndarray) -> np.ndarray:
    """Repeat each entry of an ``n x n x n`` array over a 3x3x3 block."""
    return np.kron(lam, np.ones((3, 3, 3)))


@dataclass
class BlockTensor:
    """Block tensor plus observation mask.

    ``mask[i, j, k]`` is True when block ``(i, j, k)`` is observed.  Diagonal
    blocks are always observed and always zero.
    """

    tensor: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        n = self.mask.shape[0]
        if self.tensor.shape != (3 * n,) * 3 or self.mask.shape != (n,) * 3:
            raise ValueError(f"inconsistent shapes: tensor {self.tensor.shape}, mask {self.mask.shape}")
        if n < 3:
            raise ValueError("need at least 3 cameras")
        d = np.arange(n)
        self.mask[d, d, d] = True

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    def block(self, i, j, k) -> np.ndarray:
        return self.tensor[3 * i:3 * i + 3, 3 * j:3 * j + 3, 3 * k:3 * k + 3]

    def blocks(self) -> np.ndarray:
        return to_blocks(self.tensor)

    @property
    def weight(self) -> np.ndarray:
        """Entrywise 0/1 tensor of the observed region."""
        return expand_blockwise(self.mask.astype(float))

    def copy(self) -> "BlockTensor":
        return BlockTensor(self.tensor.copy(), self.mask.copy())


def core_tensor() -> np.ndarray:
    """The constant 6x4x4 core; slice ``s`` is antisymmetric with two +-1 entries."""
    G = np.zeros((6, 4, 4))
    entries = [((2, 3), 1), ((1, 3), -1), ((1, 2), 1), ((0, 3), 1), ((0, 2), -1), ((0, 1), 1)]
    for s, ((v, u), val) in enumerate(entries):
        G[s, v, u] = val
        G[s, u, v] = -val
    return G


def _camera_array(cameras) -> np.ndarray:
    return np.stack([c.P if isinstance(c, Camera) else np.asarray(c, dtype=float) for c in cameras])


def build_block_tensor(cameras) -> BlockTensor:
    """Fill every block ``(i, j, k)`` (repeated indices included) by the determinant formula."""
    Ps = _camera_array(cameras)
    n = len(Ps)
    if n < 3:
        raise ValueError("need at least 3 cameras")
    M = np.empty((n, n, n, 3, 3, 3, 4, 4))
    M[..., 0:2, :] = Ps[:, _DROP][:, None, None, :, None, None]
    M[..., 2, :] = Ps[None, :, None, None, :, None, :]
    M[..., 3, :] = Ps[None, None, :, None, None, :, :]
    B = _SIGN[:, None, None] * np.linalg.det(M)
    return BlockTensor(from_blocks(B), np.ones((n, n, n), dtype=bool))


def tucker_factors(cameras):
    """``(G, Pstack, Cstack)`` with ``T = G x1 Pstack x2 Cstack x3 Cstack``."""
    Ps = _camera_array(cameras)
    if len(Ps) < 3:
        raise ValueError("need at least 3 cameras")
    C = stack_cameras(Ps)
    Pl = np.vstack([line_projection_matrix(P) for P in Ps])
    return core_tensor(), Pl, C


def rank_gap(T: np.ndarray, mode: int, r: int) -> float:
    """``sigma_{r+1} / sigma_r`` of the mode flattening."""
    S = singular_values(T, mode)
    return float(S[r] / S[r - 1]) if S.size > r else 0.0


def apply_block_scaling(bt: BlockTensor, lam: np.ndarray) -> BlockTensor:
    """Multiply block ``(i, j, k)`` by ``lam[i, j, k]``."""
    lam = np.asarray(lam, dtype=float)
    n = bt.n
    if lam.shape != (n, n, n):
        raise ValueError(f"scale field must have shape {(n, n, n)}")
    offdiag = ~np.eye(n, dtype=bool)[:, :, None] | ~np.eye(n, dtype=bool)[None, :, :]
    bad = np.argwhere(bt.mask & offdiag & (lam == 0))
    if len(bad):
        raise ValueError(f"zero scale on observed block(s) {[tuple(b) for b in bad[:5]]}")
    lam = np.where(bt.mask, lam, 0.0)
    return BlockTensor(bt.tensor * expand_blockwise(lam), bt.mask.copy())


@dataclass
class PropertyReport:
    checks: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    multilinear_rank: tuple = ()
    top_singular_values: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return all(v for v in self.checks.values() if v is not None)

    def rows(self):
        out = [("check", "result")]
        for name, v in self.checks.items():
            out.append((name, "skipped" if v is None else ("pass" if v else "fail")))
        out.append(("multilinear_rank", "x".join(str(r) for r in self.multilinear_rank)))
        return out


def _three_equal(S, tol) -> bool:
    S = np.sort(S)
    return any((S[i + 2] - S[i]) <= tol * S[i + 2] for i in range(len(S) - 2))


def check_block_properties(bt, calibrated: bool, cameras=None, tol: float = 1e-12,
                           sv_tol: float = 1e-9, rank_tol: float = 1e-10,
                           f_tol: float = 1e-9) -> PropertyReport:
    """Structural checks for a fully observed block trifocal tensor.

    (i) diagonal blocks vanish; (ii) ``(j, i, i)`` blocks have zero ``q == r``
    entries, antisymmetry in ``(q, r)``, and (with ``cameras``) match the
    fundamental matrix ``F_ji`` up to scale with sign ``(-1)^m``; (iii) every
    horizontal slice is skew symmetric; (iv) for calibrated cameras three of
    the six nonzero mode-1 singular values coincide.
    """
    T = bt.tensor if isinstance(bt, BlockTensor) else np.asarray(bt, dtype=float)
    n = T.shape[0] // 3
    B = to_blocks(T)
    scale = np.abs(T).max()
    scale = scale if scale > 0 else 1.0
    rep = PropertyReport()

    diag = [i for i in range(n) if np.abs(B[i, i, i]).max() > tol * scale]
    rep.checks["i_diagonal_zero"] = not diag
    rep.failures += [f"(i) block ({i},{i},{i}) is nonzero" for i in diag]

    bad2 = []
    Fs = None
    if cameras is not None and all(isinstance(c, Camera) and c.has_decomposition for c in cameras):
        Fs = cameras
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            blk = B[j, i, i]
            if np.abs(np.einsum("wqq->wq", blk)).max() > tol * scale:
                bad2.append(f"(ii) block ({j},{i},{i}) has nonzero q==r entries")
            if np.abs(blk + blk.transpose(0, 2, 1)).max() > tol * scale:
                bad2.append(f"(ii) block ({j},{i},{i}) is not antisymmetric in its last two indices")
            if Fs is not None:
                a = np.empty((3, 3))
                for m, (q, r) in enumerate(((1, 2), (0, 2), (0, 1))):
                    a[:, m] = (-1) ** m * blk[:, q, r]
                F = fundamental_from_cameras(Fs[j], Fs[i])
                na, nf = np.linalg.norm(a), np.linalg.norm(F)
                if na == 0 or nf == 0:
                    continue
                # exact sign rule: a = c F_ji with one common scalar c
                if np.linalg.norm(a / na - np.sign(np.vdot(a, F)) * F / nf) > f_tol:
                    bad2.append(f"(ii) block ({j},{i},{i}) does not match F_{j}{i}")
    rep.checks["ii_jii_fundamental"] = not bad2
    rep.failures += bad2

    bad3 = []
    for a in range(3 * n):
        M = T[a]
        if np.abs(M + M.T).max() > tol * scale:
            bad3.append(f"(iii) horizontal slice {a} (block row {a // 3}, row {a % 3}) is not skew symmetric")
    rep.checks["iii_slices_skew"] = not bad3
    rep.failures += bad3

    S = singular_values(T, 1)
    rep.top_singular_values = S[:7].copy()
    if calibrated:
        ok = len(S) >= 6 and _three_equal(S[:6], sv_tol)
        rep.checks["iv_three_equal_sv"] = ok
        if not ok:
            rep.failures.append(f"(iv) no three of the top six mode-1 singular values coincide: {S[:6]}")
    else:
        rep.checks["iv_three_equal_sv"] = None
    rep.multilinear_rank = multilinear_rank(T, rank_tol)
    return rep
