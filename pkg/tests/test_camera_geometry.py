from __future__ import annotations


import numpy as np
import pytest

from trifocal_sync.camera_geometry import (PLUCKER_PAIRS, DegenerateGeometryWarning, GeometryError, compose_camera,
                                           camera_center, fundamental_from_cameras, is_rotation,
                                           line_projection_matrix, plucker_from_points, plucker_quadric,
                                           project_line, project_point, random_rotation, rotation_angle, skew)

from conftest import proj_distance, random_cameras


def test_compose_camera_trivial_cases():
    assert np.array_equal(compose_camera(np.eye(3), np.eye(3), np.zeros(3)).P, np.hstack([np.eye(3), np.zeros((3, 1))]))
    P = compose_camera(np.eye(3), np.eye(3), [1, 0, 0]).P
    assert np.array_equal(P, np.hstack([np.eye(3), [[-1], [0], [0]]]))


def test_compose_camera_center_and_validation(rng):
    cam = random_cameras(rng, 1)[0]
    assert np.allclose(camera_center(cam.P), np.append(cam.t, 1.0), atol=1e-12)
    assert np.linalg.matrix_rank(cam.P, tol=1e-10 * np.linalg.norm(cam.P)) == 3
    with pytest.raises(GeometryError):
        compose_camera(np.eye(3), np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        compose_camera(np.array([[1.0, 0, 0], [1.0, 1, 0], [0, 0, 1]]), np.eye(3), np.zeros(3))


def _minor_oracle(P):
    # brute-force: for each dropped row w and column pair, a 2x2 determinant, middle row negated
    S = np.zeros((3, 6))
    for w in range(3):
        rows = [r for r in range(3) if r != w]
        for s, (i, j) in enumerate(PLUCKER_PAIRS):
            S[w, s] = np.linalg.det(P[np.ix_(rows, [i, j])]) * (-1 if w == 1 else 1)
    return S


def test_line_projection_matrix_determinant_oracle(rng):
    P0 = np.hstack([np.eye(3), np.zeros((3, 1))])
    assert np.allclose(line_projection_matrix(P0), _minor_oracle(P0), atol=1e-15)
    P = rng.standard_normal((3, 4))
    assert np.allclose(line_projection_matrix(P), _minor_oracle(P), atol=1e-13)


def test_projected_line_is_join_of_projected_points(rng):
    for _ in range(20):
        P = rng.standard_normal((3, 4))
        X, Y = rng.standard_normal(4), rng.standard_normal(4)
        L = plucker_from_points(X, Y)
        assert abs(plucker_quadric(L)) <= 1e-12 * np.linalg.norm(L) ** 2
        l = project_line(P, L)
        join = np.cross(project_point(P, X), project_point(P, Y))
        assert proj_distance(l, join) <= 1e-8


def test_line_through_center_projects_to_zero(rng):
    cam = random_cameras(rng, 1)[0]
    L = plucker_from_points(camera_center(cam.P), rng.standard_normal(4))
    assert np.linalg.norm(line_projection_matrix(cam.P) @ L) <= 1e-12 * np.linalg.norm(L)


def test_project_point_cases(rng):
    P0 = np.hstack([np.eye(3), np.zeros((3, 1))])
    assert np.allclose(project_point(P0, [0, 0, 1, 1]), [0, 0, 1])
    cam = random_cameras(rng, 1)[0]
    with pytest.raises(GeometryError):
        project_point(cam.P, camera_center(cam.P))
    # a plane through X and the center images to a line l with P^T l = plane; x lies on it
    X = rng.standard_normal(4)
    C = camera_center(cam.P)
    null = np.linalg.svd(np.vstack([X, C]))[2][2:]
    for plane in null:
        l = np.linalg.lstsq(cam.P.T, plane, rcond=None)[0]
        assert np.linalg.norm(cam.P.T @ l - plane) <= 1e-10
        x = project_point(cam.P, X)
        assert abs(l @ x) <= 1e-10 * np.linalg.norm(l) * np.linalg.norm(x)


@pytest.mark.parametrize("calibrated", [True, False])
def test_fundamental_epipolar_constraint(rng, calibrated):
    ci, cj = random_cameras(rng, 2, calibrated)
    F = fundamental_from_cameras(ci, cj)
    X = np.hstack([rng.uniform(-1, 1, (50, 3)), np.ones((50, 1))])
    xi = X @ ci.P.T
    xj = X @ cj.P.T
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    xj /= np.linalg.norm(xj, axis=1, keepdims=True)
    Fn = F / np.linalg.norm(F)
    assert np.max(np.abs(np.einsum("na,ab,nb->n", xi, Fn, xj))) <= 1e-10
    s = np.linalg.svd(F, compute_uv=False)
    assert s[2] <= 1e-10 * s[0]


def test_fundamental_gauge_invariance(rng):
    ci, cj = random_cameras(rng, 2)
    Q, b = random_rotation(rng), rng.standard_normal(3)
    # world change X' = Q X + b: R -> R Q^T, t -> Q t + b
    moved = [compose_camera(c.K, c.R @ Q.T, Q @ c.t + b) for c in (ci, cj)]
    assert proj_distance(fundamental_from_cameras(ci, cj), fundamental_from_cameras(*moved)) <= 1e-10


def test_fundamental_coincident_centers_warns(rng):
    ci = random_cameras(rng, 1)[0]
    cj = compose_camera(np.eye(3), random_rotation(rng), ci.t)
    with pytest.warns(DegenerateGeometryWarning):
        F = fundamental_from_cameras(ci, cj)
    assert np.linalg.norm(F) <= 1e-12


def test_rotation_helpers(rng):
    R = random_rotation(rng)
    assert is_rotation(R)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    for angle in (1e-9, 0.3, np.pi / 2, 3.0):
        K = skew(axis)
        Rot = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
        assert abs(rotation_angle(Rot) - angle) <= 1e-12
