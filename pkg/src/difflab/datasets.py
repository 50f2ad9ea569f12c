"""Built-in toy datasets and grayscale image ingestion.

Generators are deterministic given their RNG and attach class labels so
every dataset supports conditional training. Images use binary PGM (P5)
on disk and live in [-1, 1] as float32 in memory.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError
from .oracles import FiniteDataset

__all__ = ["generate_dataset", "ingest_images", "read_pgm", "write_pgm",
           "to_pixels", "DATASET_NAMES"]

DATASET_NAMES = ("gauss_mixture_8", "two_moons", "checkerboard", "shapes16")


def generate_dataset(name: str, params: dict | None, rng: np.random.Generator) -> FiniteDataset:
    params = dict(params or {})
    n = int(params.pop("n", 4096))
    if name == "gauss_mixture_8":
        return _gauss_mixture_8(n, rng, **params)
    if name == "two_moons":
        return _two_moons(n, rng, **params)
    if name == "checkerboard":
        return _checkerboard(n, rng, **params)
    if name == "shapes16":
        return _shapes16(n, rng, **params)
    raise ConfigError(f"unknown dataset '{name}' (choose from {DATASET_NAMES})")


def _gauss_mixture_8(n: int, rng: np.random.Generator, radius: float = 1.0,
                     sigma: float = 0.08) -> FiniteDataset:
    """Eight isotropic blobs on a circle, 45 degrees apart; class = blob index."""
    labels = rng.integers(0, 8, size=n)
    angles = labels * (np.pi / 4.0)
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = means + sigma * rng.standard_normal((n, 2))
    return FiniteDataset(pts.astype(np.float32), labels, num_classes=8)


def _two_moons(n: int, rng: np.random.Generator, noise: float = 0.05) -> FiniteDataset:
    labels = rng.integers(0, 2, size=n)
    theta = rng.uniform(0.0, np.pi, size=n)
    x = np.where(labels == 0, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(labels == 0, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x, y], axis=1) + noise * rng.standard_normal((n, 2))
    return FiniteDataset(pts.astype(np.float32), labels, num_classes=2)


def _checkerboard(n: int, rng: np.random.Generator, extent: float = 2.0) -> FiniteDataset:
    """Uniform over the dark squares of a checkerboard; class = row parity."""
    pts = np.empty((n, 2))
    labels = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        cand = rng.uniform(-extent, extent, size=(2 * (n - filled) + 8, 2))
        cells = np.floor(cand).astype(int)
        keep = (cells.sum(axis=1) % 2) == 0
        cand, cells = cand[keep], cells[keep]
        take = min(len(cand), n - filled)
        pts[filled : filled + take] = cand[:take]
        labels[filled : filled + take] = cells[:take, 1] % 2
        filled += take
    return FiniteDataset(pts.astype(np.float32), labels, num_classes=2)


def _shapes16(n: int, rng: np.random.Generator, size: int = 16) -> FiniteDataset:
    """Procedural 16x16 grayscale shapes in [-1, 1]; four shape classes."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    imgs = np.empty((n, 1, size, size), dtype=np.float32)
    labels = rng.integers(0, 4, size=n)
    for i in range(n):
        cx = size / 2 + rng.uniform(-1.5, 1.5)
        cy = size / 2 + rng.uniform(-1.5, 1.5)
        fg = rng.uniform(0.7, 1.0)
        cls = labels[i]
        if cls == 0:  # filled disk, soft edge
            r = rng.uniform(3.5, 4.5)
            dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            img = np.clip(r - dist + 0.5, 0.0, 1.0)
        elif cls == 1:  # hollow square outline
            half = rng.uniform(3.5, 5.0)
            dx, dy = np.abs(xx - cx), np.abs(yy - cy)
            outer = np.maximum(dx, dy) <= half
            inner = np.maximum(dx, dy) <= half - 1.8
            img = (outer & ~inner).astype(np.float64)
        elif cls == 2:  # plus sign
            arm = rng.uniform(4.0, 5.5)
            thick = 1.2
            horiz = (np.abs(yy - cy) <= thick) & (np.abs(xx - cx) <= arm)
            vert = (np.abs(xx - cx) <= thick) & (np.abs(yy - cy) <= arm)
            img = (horiz | vert).astype(np.float64)
        else:  # diagonal stripes
            phase = rng.uniform(0.0, 4.0)
            direction = 1.0 if rng.random() < 0.5 else -1.0
            img = ((np.floor((xx + direction * yy + phase) / 2.0) % 2) == 0).astype(np.float64)
        imgs[i, 0] = (2.0 * fg * img - 1.0).astype(np.float32)
    return FiniteDataset(imgs, labels, num_classes=4)


# ---------------------------------------------------------------------------
# PGM (P5) input/output


def read_pgm(path: str) -> np.ndarray:
    """Binary PGM -> uint8 (h, w)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ConfigError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ConfigError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).copy()


def write_pgm(path: str, img: np.ndarray, comment: str | None = None) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ConfigError("write_pgm expects a uint8 (h, w) array")
    h, w = img.shape
    header = f"P5\n{'# ' + comment + chr(10) if comment else ''}{w} {h}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(img.tobytes())


def to_pixels(img: np.ndarray) -> np.ndarray:
    """[-1, 1] float image (possibly with channel dim) -> uint8 (h, w)."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[0]
    return np.clip((arr + 1.0) * 127.5, 0.0, 255.0).astype(np.uint8)


def ingest_images(directory: str) -> FiniteDataset:
    """Read PGM files from class-named subdirectories, normalized to [-1, 1]."""
    if not os.path.isdir(directory):
        raise ConfigError(f"image directory '{directory}' does not exist")
    class_names = sorted(
        d for d in os.listdir(directory) if os.path.isdir(os.path.join(directory, d))
    )
    if not class_names:
        raise ConfigError(f"'{directory}' has no class subdirectories")
    imgs, labels = [], []
    for cls_idx, cls in enumerate(class_names):
        for fname in sorted(os.listdir(os.path.join(directory, cls))):
            if not fname.endswith(".pgm"):
                continue
            raw = read_pgm(os.path.join(directory, cls, fname))
            imgs.append(raw.astype(np.float32) / 127.5 - 1.0)
            labels.append(cls_idx)
    if not imgs:
        raise ConfigError(f"'{directory}' contains no .pgm files")
    stack = np.stack(imgs)[:, None, :, :]
    return FiniteDataset(stack, np.asarray(labels), num_classes=len(class_names))
