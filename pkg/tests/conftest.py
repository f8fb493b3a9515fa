from __future__ import annotations

import numpy as np
import pytest

from trifocal_sync.camera_geometry import compose_camera, random_rotation

# acceptance criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE: dict = {}


def random_cameras(rng, n, calibrated=True):
    cams = []
    for _ in range(n):
        K = np.eye(3)
        if not calibrated:
            K = np.array([[rng.uniform(0.8, 1.5), rng.uniform(-0.02, 0.02), rng.uniform(-0.1, 0.1)],
                          [0.0, rng.uniform(0.8, 1.5), rng.uniform(-0.1, 0.1)],
                          [0.0, 0.0, 1.0]])
        cams.append(compose_camera(K, random_rotation(rng), rng.uniform(-0.5, 0.5, 3)))
    return cams


def principal_angle(A, B) -> float:
    """Largest principal angle (radians) between the column spaces of A and B."""
    Qa = np.linalg.qr(A)[0]
    Qb = np.linalg.qr(B)[0]
    # sine form stays accurate for tiny angles
    s = np.linalg.norm(Qb - Qa @ (Qa.T @ Qb), 2)
    return float(np.arcsin(min(s, 1.0)))


def proj_distance(a, b) -> float:
    """Distance between two arrays as projective objects (unit norm, sign free)."""
    a = np.ravel(a) / np.linalg.norm(a)
    b = np.ravel(b) / np.linalg.norm(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
