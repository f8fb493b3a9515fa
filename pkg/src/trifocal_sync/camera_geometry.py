"""Pinhole cameras, Plücker lines, line projection matrices and fundamental matrices."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Plücker coordinate ordering: column pairs of a 2x4 (or 4x2) matrix.
PLUCKER_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class GeometryError(ValueError):
    pass


class DegenerateGeometryWarning(UserWarning):
    pass


@dataclass
class Camera:
    """A 3x4 camera matrix, optionally with its ``K R [I | -t]`` decomposition."""

    P: np.ndarray
    K: np.ndarray | None = None
    R: np.ndarray | None = None
    t: np.ndarray | None = None

    @property
    def has_decomposition(self) -> bool:
        return self.K is not None and self.R is not None and self.t is not None

    @property
    def center(self) -> np.ndarray:
        return camera_center(self.P)


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]_x``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(R, tol: float = 1e-8) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and np.linalg.norm(R.T @ R - np.eye(3), 2) <= tol and abs(np.linalg.det(R) - 1) <= tol


def compose_camera(K, R, t) -> Camera:
    """``P = K R [I | -t]``."""
    K = np.asarray(K, dtype=float)
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float).reshape(3)
    if not is_rotation(R):
        raise GeometryError("R is not a rotation (R^T R = I, det R = 1 to 1e-8)")
    if K.shape != (3, 3) or np.any(np.tril(K, -1) != 0) or np.any(np.diag(K) <= 0):
        raise GeometryError("K must be upper triangular with a positive diagonal")
    P = K @ R @ np.hstack([np.eye(3), -t[:, None]])
    return Camera(P, K.copy(), R.copy(), t.copy())


def camera_center(P) -> np.ndarray:
    """Homogeneous center (right null vector), normalized to last coordinate 1 when finite."""
    _, _, Vt = np.linalg.svd(np.asarray(P, dtype=float))
    c = Vt[-1]
    if abs(c[3]) > 1e-12 * np.linalg.norm(c):
        c = c / c[3]
    return c


def line_projection_matrix(P) -> np.ndarray:
    """3x6 matrix mapping Plücker lines to image lines.

    Entry (w, s) is the 2x2 minor of ``P`` with row ``w`` removed and columns
    ``PLUCKER_PAIRS[s]``; the middle row is negated.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (3, 4):
        raise GeometryError(f"camera must be 3x4, got {P.shape}")
    S = np.empty((3, 6))
    for w in range(3):
        a, b = [r for r in range(3) if r != w]
        for s, (i, j) in enumerate(PLUCKER_PAIRS):
            S[w, s] = P[a, i] * P[b, j] - P[a, j] * P[b, i]
    S[1] *= -1.0
    return S


def plucker_from_points(X, Y) -> np.ndarray:
    """Plücker coordinates of the line joining homogeneous points ``X`` and ``Y``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return np.array([X[i] * Y[j] - X[j] * Y[i] for i, j in PLUCKER_PAIRS])


def plucker_quadric(L) -> float:
    """``L1 L6 - L2 L5 + L3 L4``; zero for every valid line."""
    L = np.asarray(L, dtype=float)
    return float(L[0] * L[5] - L[1] * L[4] + L[2] * L[3])


def project_point(P, X) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    X = np.asarray(X, dtype=float)
    if not np.any(X):
        raise GeometryError("world point must be nonzero")
    x = P @ X
    if np.linalg.norm(x) <= 1e-12 * np.linalg.norm(P) * np.linalg.norm(X):
        raise GeometryError("point coincides with the camera center")
    return x


def project_line(P, L) -> np.ndarray:
    return line_projection_matrix(P) @ np.asarray(L, dtype=float)


def fundamental_from_cameras(ci: Camera, cj: Camera) -> np.ndarray:
    """``F_ij`` with ``x_i^T F_ij x_j = 0``.

    Warns with :class:`DegenerateGeometryWarning` when the centers coincide.
    """
    if not (ci.has_decomposition and cj.has_decomposition):
        raise GeometryError("both cameras need a K R t decomposition")
    Rij = ci.R @ cj.R.T
    tij = ci.R @ (ci.t - cj.t)
    F = np.linalg.inv(ci.K).T @ skew(tij) @ Rij @ np.linalg.inv(cj.K)
    if np.linalg.norm(ci.t - cj.t) <= 1e-12 * max(1.0, np.linalg.norm(ci.t), np.linalg.norm(cj.t)):
        warnings.warn("coincident camera centers: fundamental matrix has rank <= 1",
                      DegenerateGeometryWarning, stacklevel=2)
    return F


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation (QR of a Gaussian matrix with sign fix)."""
    Q, Rr = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(Rr))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation, radians."""
    c = (np.trace(R) - 1.0) / 2.0
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, c))


def stack_cameras(cameras) -> np.ndarray:
    return np.vstack([c.P if isinstance(c, Camera) else np.asarray(c, dtype=float) for c in cameras])
