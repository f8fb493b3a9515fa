"""Gauge removal and pose error metrics for recovered camera stacks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera_geometry import rotation_angle


class AlignmentError(ValueError):
    pass


@dataclass
class AlignmentResult:
    """``s_i * Pest_i ~ Pgt_i @ H`` for every camera ``i``."""

    H: np.ndarray
    per_camera_scales: np.ndarray
    residual: float
    failed: bool = False

    def aligned(self, C_est: np.ndarray) -> np.ndarray:
        """Estimated cameras mapped into the ground-truth frame (3n x 4)."""
        n = len(self.per_camera_scales)
        blocks = C_est.reshape(n, 3, 4) * self.per_camera_scales[:, None, None]
        return (blocks @ np.linalg.inv(self.H)).reshape(3 * n, 4)


@dataclass
class ErrorSummary:
    rotation_deg: np.ndarray
    location: np.ndarray

    @property
    def mean_rotation(self) -> float:
        return float(np.mean(self.rotation_deg))

    @property
    def median_rotation(self) -> float:
        return float(np.median(self.rotation_deg))

    @property
    def mean_location(self) -> float:
        return float(np.mean(self.location))

    @property
    def median_location(self) -> float:
        return float(np.median(self.location))

    def summary(self) -> dict:
        return {
            "meanR_deg": self.mean_rotation,
            "medianR_deg": self.median_rotation,
            "meanT": self.mean_location,
            "medianT": self.median_location,
        }


def _normalized_blocks(C):
    n = C.shape[0] // 3
    B = C.reshape(n, 3, 4).astype(float)
    norms = np.linalg.norm(B, axis=(1, 2))
    if np.any(norms == 0):
        raise AlignmentError("zero camera block")
    return B / norms[:, None, None]


def align_projective(C_est, C_gt, failure_residual: float = 0.5) -> AlignmentResult:
    """Projective gauge fit between two 3n x 4 camera stacks.

    Minimizes ``sum_i ||s_i Pest_i - Pgt_i H||_F^2`` over ``H`` and the
    per-camera scales with ``||s|| = sqrt(n)``, after Frobenius-normalizing every
    estimated camera block.  The ground-truth stack enters only through its
    column space, so the residual is unchanged by ``C_gt -> C_gt H``.  For fixed ``s`` the optimal ``H`` is a least-squares solve,
    so the residual is a quadratic form in ``s`` and the joint minimizer is its
    smallest eigenvector.
    """
    C_est = np.asarray(C_est, dtype=float)
    C_gt = np.asarray(C_gt, dtype=float)
    if C_est.shape != C_gt.shape or C_est.shape[1] != 4 or C_est.shape[0] % 3:
        raise ValueError("camera stacks must both be 3n x 4")
    n = C_est.shape[0] // 3
    if n < 4:
        raise ValueError("projective alignment needs n >= 4 cameras")
    E = _normalized_blocks(C_est)
    G = C_gt
    Q, _ = np.linalg.qr(G)
    # column i: camera i's block embedded in the stack, projected off range(G)
    cols = np.zeros((n, 3 * n, 4))
    for i in range(n):
        cols[i, 3 * i:3 * i + 3] = E[i]
    cols = cols - np.einsum("ab,ibc->iac", Q @ Q.T, cols)
    M = np.einsum("iac,jac->ij", cols, cols)
    w, V = np.linalg.eigh(M)
    s = V[:, 0] * np.sqrt(n)
    if s.sum() < 0:
        s = -s
    target = (E * s[:, None, None]).reshape(3 * n, 4)
    H = np.linalg.lstsq(G, target, rcond=None)[0]
    residual = float(np.linalg.norm(G @ H - target) / np.linalg.norm(target))
    if abs(np.linalg.det(H)) <= 1e-12 * np.linalg.norm(H) ** 4:
        raise AlignmentError("alignment produced a singular transformation")
    # express scales against the unnormalized estimates
    scales = s / np.linalg.norm(C_est.reshape(n, 3, 4), axis=(1, 2))
    return AlignmentResult(H, scales, residual, failed=residual > failure_residual)


def round_to_calibrated(P):
    """Nearest calibrated camera ``[R | -R t]`` to ``P`` (up to scale); returns ``(R, t)``."""
    P = np.asarray(P, dtype=float)
    M = P[:, :3]
    d = np.linalg.det(M)
    if abs(d) <= 1e-12 * np.linalg.norm(M) ** 3:
        raise AlignmentError("leading 3x3 block is singular")
    if d < 0:
        P, M = -P, -M
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    c = np.linalg.norm(M) / np.sqrt(3.0)
    t = -R.T @ (P[:, 3] / c)
    return R, t


def rotation_errors(R_est, R_gt) -> np.ndarray:
    """Per-camera geodesic errors (degrees) after the best global rotation."""
    R_est = np.asarray(R_est, dtype=float)
    R_gt = np.asarray(R_gt, dtype=float)
    if R_est.shape != R_gt.shape:
        raise ValueError("rotation lists must have equal length")
    A = np.einsum("iab,icb->ac", R_est, R_gt)
    U, _, Vt = np.linalg.svd(A)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    Q = U @ D @ Vt
    return np.degrees([rotation_angle(Re @ (Q @ Rg).T) for Re, Rg in zip(R_est, R_gt)])


def similarity_fit(src, dst):
    """``(c, Q, b)`` minimizing ``sum ||c Q src_i + b - dst_i||^2`` with ``det Q = +1``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    ms, md = src.mean(0), dst.mean(0)
    xs, xd = src - ms, dst - md
    var = np.sum(xs ** 2)
    if var <= 1e-300:
        raise ValueError("degenerate: all source points coincide")
    U, S, Vt = np.linalg.svd(xd.T @ xs)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    Q = U @ D @ Vt
    c = np.trace(np.diag(S) @ D) / var
    return c, Q, md - c * Q @ ms


def location_errors(t_est, t_gt) -> np.ndarray:
    """Per-camera distances after the best similarity transform of the estimates."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if t_est.shape != t_gt.shape:
        raise ValueError("location lists must have equal length")
    if len(t_est) < 3:
        raise ValueError("need at least 3 locations")
    c, Q, b = similarity_fit(t_est, t_gt)
    return np.linalg.norm(c * t_est @ Q.T + b - t_gt, axis=1)


def evaluate_cameras(C_est, cameras_gt) -> tuple:
    """Align ``C_est`` to ground truth, round to calibrated form and measure errors.

    ``cameras_gt`` is a list of :class:`Camera` with decompositions.  Returns
    ``(ErrorSummary, AlignmentResult)``.
    """
    C_gt = np.vstack([c.P for c in cameras_gt])
    al = align_projective(C_est, C_gt)
    aligned = al.aligned(np.asarray(C_est, dtype=float))
    n = len(cameras_gt)
    Kinv = [np.linalg.inv(c.K) for c in cameras_gt]
    est = [round_to_calibrated(Kinv[i] @ aligned[3 * i:3 * i + 3]) for i in range(n)]
    R_est = np.array([e[0] for e in est])
    t_est = np.array([e[1] for e in est])
    R_gt = np.array([c.R for c in cameras_gt])
    t_gt = np.array([c.t for c in cameras_gt])
    return ErrorSummary(rotation_errors(R_est, R_gt), location_errors(t_est, t_gt)), al
