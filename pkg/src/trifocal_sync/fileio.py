"""Plain-text file formats for cameras, block tensors, scale fields and reports.

All floats are written with 17 significant digits, so a write/read/write
cycle is byte-identical.

Cameras::

    CAMERAS n
    <3n lines of 4 floats: camera 0 rows 0..2, camera 1 rows 0..2, ...>
    DECOMPOSITION            (optional)
    <per camera: 3 lines of K, 3 lines of R, 1 line of t>

Block tensor::

    BLOCKTENSOR n
    <one line per observed block: i j k then 27 floats, block[w, q, r] in C order>
    MASK m
    <one line per unobserved triple: i j k>

Scale field::

    SCALES n
    <n^3 lines: i j k value, C order over (i, j, k)>
"""
from __future__ import annotations

import csv
import itertools
from pathlib import Path

import numpy as np

from .block_tensor import BlockTensor, from_blocks
from .camera_geometry import Camera


class FormatError(ValueError):
    pass


def fmt(x: float) -> str:
    return "%.17g" % x


def _row(values) -> str:
    return " ".join(fmt(v) for v in values)


def _lines(path):
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]


def _header(line, keyword, minimum=1):
    parts = line.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise FormatError(f"expected header '{keyword} n', got {line!r}")
    try:
        n = int(parts[1])
    except ValueError as exc:
        raise FormatError(f"bad count in header {line!r}") from exc
    if n < minimum:
        raise FormatError(f"count must be >= {minimum} in {line!r}")
    return n


def _floats(line, count):
    try:
        vals = [float(v) for v in line.split()]
    except ValueError as exc:
        raise FormatError(f"non-numeric value in line {line!r}") from exc
    if len(vals) != count:
        raise FormatError(f"expected {count} values, got {len(vals)} in line {line!r}")
    return vals


def write_cameras(path, cameras) -> None:
    """``cameras`` is a list of :class:`Camera` or a 3n x 4 array."""
    if isinstance(cameras, np.ndarray):
        cams = [Camera(cameras[3 * i:3 * i + 3]) for i in range(cameras.shape[0] // 3)]
    else:
        cams = list(cameras)
    out = [f"CAMERAS {len(cams)}"]
    for c in cams:
        out += [_row(r) for r in np.asarray(c.P, dtype=float)]
    if cams and all(c.has_decomposition for c in cams):
        out.append("DECOMPOSITION")
        for c in cams:
            out += [_row(r) for r in c.K] + [_row(r) for r in c.R] + [_row(c.t)]
    Path(path).write_text("\n".join(out) + "\n")


def read_cameras(path) -> list:
    lines = _lines(path)
    if not lines:
        raise FormatError(f"{path}: empty camera file")
    n = _header(lines[0], "CAMERAS")
    if len(lines) < 1 + 3 * n:
        raise FormatError(f"{path}: expected {3 * n} camera rows")
    Ps = np.array([_floats(l, 4) for l in lines[1:1 + 3 * n]]).reshape(n, 3, 4)
    rest = lines[1 + 3 * n:]
    if not rest:
        return [Camera(P) for P in Ps]
    if rest[0] != "DECOMPOSITION" or len(rest) != 1 + 7 * n:
        raise FormatError(f"{path}: malformed DECOMPOSITION section")
    cams = []
    for i in range(n):
        blk = rest[1 + 7 * i:8 + 7 * i]
        K = np.array([_floats(l, 3) for l in blk[0:3]])
        R = np.array([_floats(l, 3) for l in blk[3:6]])
        t = np.array(_floats(blk[6], 3))
        cams.append(Camera(Ps[i], K, R, t))
    return cams


def write_block_tensor(path, bt: BlockTensor) -> None:
    B = bt.blocks()
    out = [f"BLOCKTENSOR {bt.n}"]
    unobserved = []
    for i, j, k in itertools.product(range(bt.n), repeat=3):
        if bt.mask[i, j, k]:
            out.append(f"{i} {j} {k} " + _row(B[i, j, k].ravel()))
        else:
            unobserved.append(f"{i} {j} {k}")
    out.append(f"MASK {len(unobserved)}")
    out += unobserved
    Path(path).write_text("\n".join(out) + "\n")


def _triple(parts, n, line):
    try:
        i, j, k = (int(p) for p in parts)
    except ValueError as exc:
        raise FormatError(f"bad block index in line {line!r}") from exc
    if not all(0 <= v < n for v in (i, j, k)):
        raise FormatError(f"block index out of range in line {line!r}")
    return i, j, k


def read_block_tensor(path) -> BlockTensor:
    lines = _lines(path)
    if not lines:
        raise FormatError(f"{path}: empty tensor file")
    n = _header(lines[0], "BLOCKTENSOR")
    B = np.zeros((n, n, n, 3, 3, 3))
    mask = np.zeros((n, n, n), dtype=bool)
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("MASK"):
        parts = lines[pos].split()
        if len(parts) != 30:
            raise FormatError(f"{path}: block line needs 3 indices and 27 values: {lines[pos]!r}")
        i, j, k = _triple(parts[:3], n, lines[pos])
        if mask[i, j, k]:
            raise FormatError(f"{path}: block ({i},{j},{k}) listed twice")
        B[i, j, k] = np.array(_floats(" ".join(parts[3:]), 27)).reshape(3, 3, 3)
        mask[i, j, k] = True
        pos += 1
    if pos == len(lines):
        raise FormatError(f"{path}: missing MASK section")
    m = _header(lines[pos], "MASK", minimum=0)
    listed = lines[pos + 1:]
    if len(listed) != m:
        raise FormatError(f"{path}: MASK section announces {m} triples, found {len(listed)}")
    for line in listed:
        i, j, k = _triple(line.split(), n, line)
        if mask[i, j, k]:
            raise FormatError(f"{path}: block ({i},{j},{k}) is both observed and unobserved")
    if int(np.count_nonzero(~mask)) != m:
        raise FormatError(f"{path}: MASK section does not cover every unlisted block")
    return BlockTensor(from_blocks(B), mask)


def write_scales(path, lam) -> None:
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[0]
    out = [f"SCALES {n}"]
    out += [f"{i} {j} {k} {fmt(lam[i, j, k])}" for i, j, k in itertools.product(range(n), repeat=3)]
    Path(path).write_text("\n".join(out) + "\n")


def read_scales(path) -> np.ndarray:
    lines = _lines(path)
    if not lines:
        raise FormatError(f"{path}: empty scales file")
    n = _header(lines[0], "SCALES")
    if len(lines) != 1 + n ** 3:
        raise FormatError(f"{path}: expected {n ** 3} scale lines")
    lam = np.empty((n, n, n))
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}: malformed scale line {line!r}")
        lam[_triple(parts[:3], n, line)] = _floats(parts[3], 1)[0]
    return lam


def write_key_values(path, data: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in data.items()))


def read_key_values(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: fmt(v) if isinstance(v, float) else v for c, v in r.items()})


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
