"""Single 3x3x3 trifocal tensors.

Index convention: ``T[w, q, r]`` with ``w`` the first view.  For cameras
``(Pi, Pj, Pk)``::

    T[w, q, r] = (-1)**w * det([Pi without row w; Pj[q]; Pk[r]])

(0-based ``w``), which is the usual ``T_i^{jk}`` of the first-view-canonical
literature.  Correspondences are homogeneous 3-vectors; point triples as an
array of shape ``(N, 3, 3)`` (``x1, x2, x3`` stacked), line triples likewise.
"""
from __future__ import annotations

import numpy as np

from .camera_geometry import Camera, skew
from .tensor_core import mode_product


class EstimationError(ValueError):
    """Linear estimation could not produce a unique tensor."""

    def __init__(self, message: str, numerical_rank: int | None = None):
        self.numerical_rank = numerical_rank
        super().__init__(message)


class DegenerateConfigurationError(EstimationError):
    pass


class AmbiguousSignError(ValueError):
    pass


def _as_matrix(P) -> np.ndarray:
    return P.P if isinstance(P, Camera) else np.asarray(P, dtype=float)


_DROP = np.array([[1, 2], [0, 2], [0, 1]])
_SIGN = np.array([1.0, -1.0, 1.0])


def trifocal_from_cameras(Pi, Pj, Pk) -> np.ndarray:
    """Trifocal tensor of three cameras by the determinant formula."""
    Pi, Pj, Pk = (_as_matrix(P) for P in (Pi, Pj, Pk))
    M = np.empty((3, 3, 3, 4, 4))
    M[..., 0:2, :] = Pi[_DROP][:, None, None, :, :]
    M[..., 2, :] = Pj[None, :, None, :]
    M[..., 3, :] = Pk[None, None, :, :]
    return _SIGN[:, None, None] * np.linalg.det(M)


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("correspondence vectors must be nonzero")
    return v / n


def point_incidence_residual(T, x1, x2, x3) -> np.ndarray:
    """``[x2]_x (sum_w x1_w T_w) [x3]_x``; zero for an exact point triple."""
    T = np.asarray(T, dtype=float)
    return skew(x2) @ np.tensordot(np.asarray(x1, dtype=float), T, axes=1) @ skew(x3)


def line_incidence_residual(T, l1, l2, l3) -> np.ndarray:
    """``l1 x v`` with ``v_w = l2^T T_w l3``; zero for an exact line triple."""
    v = np.einsum("wqr,q,r->w", np.asarray(T, dtype=float), l2, l3)
    return np.cross(l1, v)


def point_rows(x1, x2, x3) -> np.ndarray:
    """9x27 rows of the linear system ``A vec(T) = 0`` for one point triple."""
    return np.einsum("w,aq,rb->abwqr", x1, skew(x2), skew(x3)).reshape(9, 27)


def line_rows(l1, l2, l3) -> np.ndarray:
    """3x27 rows for one line triple."""
    return np.einsum("aw,q,r->awqr", skew(l1), l2, l3).reshape(3, 27)


def _triples(c):
    if c is None:
        return np.zeros((0, 3, 3))
    c = np.asarray(c, dtype=float)
    if c.ndim != 3 or c.shape[1:] != (3, 3):
        raise ValueError("correspondences must have shape (N, 3, 3)")
    return _unit(c)


def estimate_trifocal_linear(points=None, lines=None, rank_tol: float = 1e-10) -> np.ndarray:
    """Linear (DLT) trifocal tensor from point and/or line triples.

    Every correspondence vector is scaled to unit norm before building rows.
    The result has unit Frobenius norm and arbitrary sign.
    """
    pts, lns = _triples(points), _triples(lines)
    independent = 4 * len(pts) + 2 * len(lns)
    if independent < 26:
        raise EstimationError(
            f"insufficient constraints: {independent} independent equations, need >= 26")
    A = np.vstack([point_rows(*p) for p in pts] + [line_rows(*l) for l in lns])
    _, S, Vt = np.linalg.svd(A, full_matrices=True)
    S = np.concatenate([S, np.zeros(27 - S.size)]) if S.size < 27 else S
    rank = int(np.count_nonzero(S > rank_tol * S[0]))
    if rank < 26:
        raise DegenerateConfigurationError(
            f"degenerate configuration: design matrix has numerical rank {rank} < 26", rank)
    T = Vt[-1].reshape(3, 3, 3)
    return T / np.linalg.norm(T)


def transform_trifocal(T, H1, H2, H3) -> np.ndarray:
    """Tensor of cameras ``(H1 P1, H2 P2, H3 P3)`` given that of ``(P1, P2, P3)``.

    The first view transforms by the cofactor matrix ``det(H1) H1^{-T}``.
    """
    H1 = np.asarray(H1, dtype=float)
    cof = np.linalg.det(H1) * np.linalg.inv(H1).T
    return mode_product(mode_product(mode_product(T, cof, 1), H2, 2), H3, 3)


def epipoles(T) -> tuple:
    """Epipoles ``(e2, e3)`` of the first camera center in views 2 and 3 (unit norm, arbitrary sign)."""
    T = np.asarray(T, dtype=float)
    U = np.array([np.linalg.svd(T[w])[0][:, -1] for w in range(3)])  # left null vectors
    V = np.array([np.linalg.svd(T[w])[2][-1] for w in range(3)])  # right null vectors
    e2 = np.linalg.svd(U)[2][-1]
    e3 = np.linalg.svd(V)[2][-1]
    return e2, e3


def fundamental_21(T) -> np.ndarray:
    """``F21`` with ``x2^T F21 x1 = 0`` extracted from the tensor."""
    e2, e3 = epipoles(T)
    return skew(e2) @ np.stack([T[w] @ e3 for w in range(3)], axis=1)


def triangulate(cameras, xs) -> np.ndarray:
    """Linear triangulation; returns the homogeneous 4-vector (unit norm)."""
    A = np.vstack([skew(x) @ _as_matrix(P) for P, x in zip(cameras, xs)])
    return np.linalg.svd(A)[2][-1]


def _canonical_pair_from_fundamental(F21):
    """``P1 = [I | 0]``, ``P2 = [[e']_x F21 | e']`` with ``F21^T e' = 0``."""
    e = np.linalg.svd(F21.T)[2][-1]
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.hstack([skew(e) @ F21, e[:, None]])
    return P1, P2


def _skew_constraint_rows(F, Pprime):
    """Rows expressing ``sym(P3^T F P')= 0`` as linear equations in ``vec(P3)``."""
    cols = []
    for idx in range(12):
        E = np.zeros(12)
        E[idx] = 1.0
        M = E.reshape(3, 4).T @ F @ Pprime
        S = M + M.T
        cols.append(S[np.triu_indices(4)])
    return np.array(cols).T  # 10 x 12


def trifocal_from_fundamentals(F21, F31, F32, null_tol: float = 1e-8):
    """Third camera and trifocal tensor from three compatible fundamental matrices.

    Convention ``xi^T Fij xj = 0``.  Returns ``(P3, T)`` where ``T`` is the
    tensor of ``(P1', P2', P3)`` with the canonical pair built from ``F21``.
    """
    F21, F31, F32 = (np.asarray(F, dtype=float) for F in (F21, F31, F32))
    s21 = np.linalg.svd(F21, compute_uv=False)
    if s21[1] <= null_tol * s21[0]:
        raise DegenerateConfigurationError("F21 has rank < 2", int(np.count_nonzero(s21 > null_tol * s21[0])))
    P1, P2 = _canonical_pair_from_fundamental(F21)
    A = np.vstack([
        _skew_constraint_rows(F32 / np.linalg.norm(F32), P2 / np.linalg.norm(P2)),
        _skew_constraint_rows(F31 / np.linalg.norm(F31), P1),
    ])
    _, S, Vt = np.linalg.svd(A)
    nullity = int(np.count_nonzero(S <= null_tol * S[0])) + (12 - S.size)
    if nullity > 1 or S[-2] <= null_tol * S[0]:
        raise DegenerateConfigurationError(
            f"solution space for P3 has dimension {max(nullity, 2)} (degenerate fundamental matrices)",
            12 - max(nullity, 2))
    P3 = Vt[-1].reshape(3, 4)
    return P3, trifocal_from_cameras(P1, P2, P3)


def correct_block_sign_reference(T_est, T_ref) -> np.ndarray:
    """``+-T_est`` with the sign of ``<T_est, T_ref>``."""
    ip = float(np.vdot(T_est, T_ref))
    if ip == 0:
        raise AmbiguousSignError("estimate is orthogonal to the reference")
    return np.asarray(T_est) if ip > 0 else -np.asarray(T_est)


def _metric_cameras_from_tensor(T, points):
    """Cheiral ``P1 = [I|0]``, ``P2 = [R|t]`` and a linear ``P3`` reproducing ``T``."""
    E = fundamental_21(T)
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    best, best_count = None, -1
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            P2 = np.hstack([R, t[:, None]])
            count = 0
            for x1, x2, _ in points:
                X = triangulate((P1, P2), (x1, x2))
                X = X / X[3] if X[3] != 0 else X
                count += int(X[2] * x1[2] > 0 and (P2 @ X)[2] * x2[2] > 0)
            if count > best_count:
                best, best_count = P2, count
    P2 = best
    # T[w, q, r] = g_wq . P3[r] with g_wq the cofactor vector of [P1 minus row w; P2[q]]
    G = np.empty((3, 3, 4))
    for w in range(3):
        for q in range(3):
            A = np.vstack([P1[_DROP[w]], P2[q]])
            G[w, q] = _SIGN[w] * np.array(
                [(-1) ** (3 + j) * np.linalg.det(np.delete(A, j, axis=1)) for j in range(4)])
    P3 = np.linalg.lstsq(G.reshape(9, 4), T.reshape(9, 3), rcond=None)[0].T
    return P1, P2, P3


def correct_block_sign(T_est, points, calibrations=None) -> np.ndarray:
    """Sign-correct a trifocal tensor by cheirality of triangulated points.

    ``points`` are point triples (shape ``(N, 3, 3)``, pixel coordinates if
    ``calibrations=(K1, K2, K3)`` is given, otherwise normalized coordinates).
    Cameras are recovered from the tensor in a metric frame and the sign is
    chosen so that a strict majority of points lies in front of the third view.
    """
    T = np.asarray(T_est, dtype=float)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 3 or len(pts) == 0:
        raise ValueError("need at least one point correspondence")
    if calibrations is not None:
        K1, K2, K3 = (np.asarray(K, dtype=float) for K in calibrations)
        T = transform_trifocal(T, np.linalg.inv(K1), np.linalg.inv(K2), np.linalg.inv(K3))
        pts = np.stack([pts[:, v] @ np.linalg.inv(K).T for v, K in enumerate((K1, K2, K3))], axis=1)
    P1, P2, P3 = _metric_cameras_from_tensor(T / np.linalg.norm(T), pts)
    votes = 0
    for x1, x2, x3 in pts:
        X = triangulate((P1, P2, P3), (x1, x2, x3))
        if X[3] == 0:
            continue
        X = X / X[3]
        votes += int(np.sign((P3 @ X) @ x3 * x3[2]))
    if votes == 0:
        raise AmbiguousSignError("cheirality vote is tied")
    return np.asarray(T_est) if votes > 0 else -np.asarray(T_est)
