"""Seeded synthetic scenes, block corruption and the line-only experiment."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .block_tensor import BlockTensor, expand_blockwise, from_blocks, to_blocks
from .camera_geometry import (compose_camera, line_projection_matrix, plucker_from_points,
                              random_rotation)
from .trifocal import correct_block_sign_reference, estimate_trifocal_linear, trifocal_from_cameras

NOISE_PRESETS = {"paper-low": 0.0002, "paper-high": 0.02}
LAYOUTS = ("generic", "collinear", "coincident")
ORIENTATIONS = ("uniform", "look_at")
SCALE_LAWS = ("unit", "log_uniform", "rank1")
MASK_LAWS = ("full", "bernoulli", "per_slice_min")


class SceneError(RuntimeError):
    pass


def resolve_noise(noise) -> float:
    if isinstance(noise, str):
        try:
            return float(noise)
        except ValueError:
            pass
        if noise not in NOISE_PRESETS:
            raise ValueError(f"unknown noise preset {noise!r}; known: {sorted(NOISE_PRESETS)}")
        return NOISE_PRESETS[noise]
    return float(noise)


@dataclass(frozen=True)
class SceneConfig:
    """Scene parameters.

    ``orientation='look_at'`` aims every camera at the origin from a distance
    of about 3, which keeps generated points in front of all cameras;
    ``uniform`` draws Haar-random rotations with centers in the unit box.
    """

    n_cameras: int = 8
    layout: str = "generic"
    calibrated: bool = True
    n_points: int = 0
    n_lines: int = 0
    noise_rel: float = 0.0
    seed: int = 0
    orientation: str = "uniform"
    max_retries: int = 1000

    def __post_init__(self):
        if self.n_cameras < 3:
            raise ValueError("n_cameras must be >= 3")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        if self.n_points < 0 or self.n_lines < 0:
            raise ValueError("n_points and n_lines must be >= 0")
        if resolve_noise(self.noise_rel) < 0:
            raise ValueError("noise_rel must be >= 0")


@dataclass(frozen=True)
class CorruptionConfig:
    scale_law: str = "unit"
    scale_lo: float = 0.1
    scale_hi: float = 10.0
    sign_flip_prob: float = 0.0
    mask_law: str = "full"
    mask_p: float = 1.0
    outlier_block_prob: float = 0.0
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if self.scale_law not in SCALE_LAWS:
            raise ValueError(f"scale_law must be one of {SCALE_LAWS}")
        if self.mask_law not in MASK_LAWS:
            raise ValueError(f"mask_law must be one of {MASK_LAWS}")
        for name in ("sign_flip_prob", "mask_p", "outlier_block_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not (0 < self.scale_lo <= self.scale_hi):
            raise ValueError("need 0 < scale_lo <= scale_hi")


@dataclass
class Scene:
    cameras: list
    points: np.ndarray  # (N, 4) homogeneous
    lines: np.ndarray  # (M, 6) Plücker
    point_obs: np.ndarray  # (n_cameras, N, 3)
    line_obs: np.ndarray  # (n_cameras, M, 3)
    config: SceneConfig = field(default_factory=SceneConfig)

    @property
    def camera_stack(self) -> np.ndarray:
        return np.vstack([c.P for c in self.cameras])


def _perturb(v, noise_rel, rng):
    """Add Gaussian noise of relative Frobenius size ``noise_rel`` to each row."""
    if noise_rel == 0 or v.size == 0:
        return v
    g = rng.standard_normal(v.shape)
    g *= (noise_rel * np.linalg.norm(v, axis=-1) / np.linalg.norm(g, axis=-1))[..., None]
    return v + g


def _look_at(center, rng):
    z = -center / np.linalg.norm(center)
    a = rng.standard_normal(3)
    x = a - (a @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def _intrinsics(calibrated, rng):
    if calibrated:
        return np.eye(3)
    f = rng.uniform(0.8, 1.5)
    return np.array([[f * rng.uniform(0.9, 1.1), rng.uniform(-0.02, 0.02), rng.uniform(-0.1, 0.1)],
                     [0.0, f, rng.uniform(-0.1, 0.1)],
                     [0.0, 0.0, 1.0]])


def _centers(cfg, rng):
    n = cfg.n_cameras
    if cfg.layout == "coincident":
        c = rng.uniform(-0.5, 0.5, 3)
        C = np.tile(c, (n, 1))
    elif cfg.layout == "collinear":
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        C = rng.uniform(-0.5, 0.5, 3) + rng.uniform(-1, 1, n)[:, None] * d
    else:
        C = rng.uniform(-0.5, 0.5, (n, 3))
    if cfg.orientation == "look_at":
        if cfg.layout == "coincident":
            C = C + 3.0 * np.array([0.0, 0.0, -1.0])
        else:
            dirs = rng.standard_normal((n, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            C = C + 3.0 * dirs
    return C


def _in_front(cameras, X):
    return all((c.P @ X)[2] * np.linalg.det(c.P[:, :3]) > 0 for c in cameras)


def generate_scene(cfg: SceneConfig) -> Scene:
    """Cameras ``K R [I | -t]``, world points and lines, and their noisy images."""
    rng = np.random.default_rng(cfg.seed)
    centers = _centers(cfg, rng)
    cams = []
    for c in centers:
        R = _look_at(c, rng) if cfg.orientation == "look_at" else random_rotation(rng)
        cams.append(compose_camera(_intrinsics(cfg.calibrated, rng), R, c))
    pts = []
    tries = 0
    while len(pts) < cfg.n_points:
        tries += 1
        if tries > cfg.max_retries * max(cfg.n_points, 1):
            raise SceneError("could not place points in front of every camera; try orientation='look_at'")
        X = np.append(rng.uniform(-0.5, 0.5, 3), 1.0)
        if _in_front(cams, X):
            pts.append(X)
    points = np.array(pts).reshape(-1, 4)
    ends = rng.uniform(-0.5, 0.5, (cfg.n_lines, 2, 3))
    lines = np.array([plucker_from_points(np.append(a, 1.0), np.append(b, 1.0)) for a, b in ends]).reshape(-1, 6)
    noise = resolve_noise(cfg.noise_rel)
    pobs = np.array([points @ c.P.T for c in cams]).reshape(cfg.n_cameras, -1, 3)
    lobs = np.array([lines @ line_projection_matrix(c.P).T for c in cams]).reshape(cfg.n_cameras, -1, 3)
    pobs = _perturb(pobs, noise, rng)
    lobs = _perturb(lobs, noise, rng)
    return Scene(cams, points, lines, pobs, lobs, cfg)


def _draw_mask(n, cfg, rng):
    d = np.arange(n)
    for _ in range(cfg.max_retries):
        if cfg.mask_law == "full":
            m = np.ones((n, n, n), dtype=bool)
        elif cfg.mask_law == "bernoulli":
            m = rng.random((n, n, n)) < cfg.mask_p
        else:
            m = np.zeros((n, n, n), dtype=bool)
            need = math.ceil(cfg.mask_p * n * n)
            for k in range(n):
                idx = rng.choice(n * n, size=need, replace=False)
                m[:, :, k].flat[idx] = True
        m[d, d, d] = True
        off = m.copy()
        off[d, d, d] = False
        covered = off.any(axis=(1, 2)) | off.any(axis=(0, 2)) | off.any(axis=(0, 1))
        if covered.all():
            return m
    raise SceneError("mask law could not cover every camera")


def _draw_scales(n, cfg, rng):
    lo, hi = math.log(cfg.scale_lo), math.log(cfg.scale_hi)
    if cfg.scale_law == "unit":
        lam = np.ones((n, n, n))
    elif cfg.scale_law == "log_uniform":
        lam = np.exp(rng.uniform(lo, hi, (n, n, n)))
    else:
        a, b, c = np.exp(rng.uniform(lo, hi, (3, n)))
        lam = np.einsum("i,j,k->ijk", a, b, c)
    if cfg.sign_flip_prob > 0:
        lam = lam * np.where(rng.random((n, n, n)) < cfg.sign_flip_prob, -1.0, 1.0)
    return lam


def corrupt_blocks(bt: BlockTensor, cfg: CorruptionConfig):
    """Apply block scales, sign flips, a mask and gross outliers.

    Returns ``(corrupted, lam, mask)`` where observed block ``(i, j, k)`` of
    ``corrupted`` equals ``lam[i, j, k]`` times the input block, unless it was
    replaced by an outlier (``corrupted.outliers`` lists those triples).
    """
    rng = np.random.default_rng(cfg.seed)
    n = bt.n
    lam = _draw_scales(n, cfg, rng)
    mask = _draw_mask(n, cfg, rng) & bt.mask
    B = to_blocks(bt.tensor) * lam[..., None, None, None]
    outliers = []
    if cfg.outlier_block_prob > 0:
        d = np.arange(n)
        hit = rng.random((n, n, n)) < cfg.outlier_block_prob
        hit[d, d, d] = False
        hit &= mask
        for i, j, k in zip(*np.nonzero(hit)):
            g = rng.standard_normal((3, 3, 3))
            nb = np.linalg.norm(B[i, j, k])
            B[i, j, k] = g / np.linalg.norm(g) * (nb if nb > 0 else 1.0)
            outliers.append((int(i), int(j), int(k)))
    T = from_blocks(B) * expand_blockwise(mask.astype(float))
    out = BlockTensor(T, mask)
    out.outliers = outliers
    return out, lam, mask


def generate_line_experiment(cfg: SceneConfig, sign: str = "reference"):
    """Block tensor estimated from line correspondences only.

    Every ordered triple of distinct cameras gets a linear estimate from the
    noisy images of the shared lines, sign-corrected against the true tensor.
    Blocks with repeated camera indices cannot be estimated from lines and are
    left unobserved (diagonal blocks stay observed as zeros).  Returns
    ``(BlockTensor, cameras)``.
    """
    if cfg.n_lines < 13:
        raise ValueError("need at least 13 lines (26 independent equations)")
    if sign not in ("reference", "none"):
        raise ValueError("sign must be 'reference' or 'none'")
    scene = generate_scene(cfg)
    n = cfg.n_cameras
    unit = scene.line_obs / np.linalg.norm(scene.line_obs, axis=-1, keepdims=True)
    B = np.zeros((n, n, n, 3, 3, 3))
    mask = np.zeros((n, n, n), dtype=bool)
    for i, j, k in itertools.permutations(range(n), 3):
        T = estimate_trifocal_linear(lines=np.stack([unit[i], unit[j], unit[k]], axis=1))
        if sign == "reference":
            T = correct_block_sign_reference(
                T, trifocal_from_cameras(scene.cameras[i], scene.cameras[j], scene.cameras[k]))
        B[i, j, k] = T
        mask[i, j, k] = True
    return BlockTensor(from_blocks(B), mask), scene.cameras
