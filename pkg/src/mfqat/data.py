"""Segmentation data: a seeded synthetic generator and a PPM/PGM directory
loader.

The generator draws bright axis-aligned rectangles and ellipses on a noisy
dark background, together with their exact rasterised masks. Every sample is
a pure function of (config, index): sample i is drawn from a fresh generator
seeded with [seed, i], so datasets are reproducible element by element and
independent of generation order. Augmentation works the same way, keyed by
(seed, index, epoch).

The loader pairs ``<name>.ppm`` (P6, 8-bit) images with ``<name>.mask.pgm``
(P5, 8-bit) masks and streams them in lexicographic basename order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationSample:
    image: np.ndarray  # (C, H, W), floats in [0, 1]
    mask: np.ndarray   # (1, H, W), strictly {0, 1}

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape[1:] or self.mask.shape[0] != 1:
            raise DataError(
                f"image {self.image.shape} / mask {self.mask.shape} shape mismatch"
            )
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise DataError("mask is not binary")


@dataclass(frozen=True)
class SyntheticShipConfig:
    image_size: int = 64
    min_objects: int = 1
    max_objects: int = 3
    min_object_size: int = 6
    max_object_size: int = 16
    noise_level: float = 0.08
    brightness_jitter: float = 0.1   # augmentation delta range [-b, +b]
    contrast_jitter: float = 0.2     # augmentation scale range [1-c, 1+c]
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise DataError(f"image_size too small: {self.image_size}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise DataError("empty object count range")
        if not 2 <= self.min_object_size <= self.max_object_size <= self.image_size:
            raise DataError("empty object size range")
        if self.noise_level < 0 or self.brightness_jitter < 0 or not 0 <= self.contrast_jitter < 1:
            raise DataError("jitter/noise parameters out of range")


def _rasterize(kind: str, cy: float, cx: float, h: float, w: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "rect":
        return (np.abs(yy - cy) <= h / 2) & (np.abs(xx - cx) <= w / 2)
    return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0


def make_sample(cfg: SyntheticShipConfig, index: int) -> SegmentationSample:
    """Deterministically generate sample ``index``."""
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.image_size
    image = 0.12 + rng.normal(0.0, cfg.noise_level, size=(size, size))
    mask = np.zeros((size, size), dtype=bool)
    n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    for _ in range(n_objects):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        # elongated objects: full length plus a thinner cross-section
        length = float(rng.integers(cfg.min_object_size, cfg.max_object_size + 1))
        width = max(2.0, length * rng.uniform(0.3, 0.6))
        if rng.random() < 0.5:
            length, width = width, length
        margin_y, margin_x = length / 2 + 1, width / 2 + 1
        cy = rng.uniform(margin_y, size - margin_y)
        cx = rng.uniform(margin_x, size - margin_x)
        obj = _rasterize(kind, cy, cx, length, width, size)
        brightness = rng.uniform(0.6, 0.95)
        image[obj] = brightness
        mask |= obj
    image = np.clip(image, 0.0, 1.0)
    return SegmentationSample(image[None], mask[None].astype(np.float64))


def gen_synthetic_segmentation(cfg: SyntheticShipConfig, n: int) -> list[SegmentationSample]:
    if n <= 0:
        raise DataError(f"sample count must be positive, got {n}")
    return [make_sample(cfg, i) for i in range(n)]


def augment_sample(sample: SegmentationSample, cfg: SyntheticShipConfig,
                   index: int, epoch: int) -> SegmentationSample:
    """Deterministic per-(seed, index, epoch) flip / crop / photometric jitter."""
    rng = np.random.default_rng([cfg.seed, index, epoch, 0xA6])
    img = sample.image.copy()
    msk = sample.mask.copy()
    if rng.random() < 0.5:
        img = img[:, :, ::-1].copy()
        msk = msk[:, :, ::-1].copy()
    if rng.random() < 0.5:
        img = img[:, ::-1, :].copy()
        msk = msk[:, ::-1, :].copy()
    # translation-style random crop out of a reflect-padded canvas
    pad = 4
    dy, dx = int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1))
    h, w = img.shape[1:]
    img = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    msk = np.pad(msk, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    img = img[:, dy : dy + h, dx : dx + w]
    msk = msk[:, dy : dy + h, dx : dx + w]
    delta = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
    scale = rng.uniform(1.0 - cfg.contrast_jitter, 1.0 + cfg.contrast_jitter)
    img = np.clip((img - 0.5) * scale + 0.5 + delta, 0.0, 1.0)
    return SegmentationSample(img, msk)


def make_classification_sample(seed: int, index: int, n_classes: int = 10,
                               image_size: int = 16) -> tuple[np.ndarray, int]:
    """Sanity classification task: the class selects which cell of a fixed
    grid holds a bright square; everything else is background noise."""
    rng = np.random.default_rng([seed, index, 0xC1])
    label = int(rng.integers(0, n_classes))
    image = 0.1 + rng.normal(0.0, 0.05, size=(image_size, image_size))
    cols = 5
    cell = image_size // 4
    cy = (label // cols) * 2 * cell + cell // 2
    cx = (label % cols) * (image_size // cols) + 1
    image[cy : cy + cell, cx : cx + cell - 1] = rng.uniform(0.7, 0.95)
    return np.clip(image, 0.0, 1.0)[None], label


def gen_classification(seed: int, n: int, n_classes: int = 10,
                       image_size: int = 16) -> list[tuple[np.ndarray, int]]:
    if n <= 0:
        raise DataError(f"sample count must be positive, got {n}")
    return [make_classification_sample(seed, i, n_classes, image_size) for i in range(n)]


# -- netpbm ingestion ---------------------------------------------------------


def _read_netpbm(path: str, magic: bytes) -> tuple[int, int, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} file")
    pos = len(magic)
    tokens: list[int] = []
    while len(tokens) < 3:
        if pos >= len(blob):
            raise DataError(f"{path}: truncated header")
        ch = blob[pos : pos + 1]
        if ch == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(blob) and blob[pos : pos + 1].isdigit():
                pos += 1
            tokens.append(int(blob[start:pos]))
        else:
            raise DataError(f"{path}: malformed header byte {ch!r}")
    width, height, maxval = tokens
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit files supported, maxval={maxval}")
    pos += 1  # single whitespace byte between header and raster
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = blob[pos : pos + expected]
    if len(raster) != expected:
        raise DataError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return width, height, data


def read_ppm(path: str) -> np.ndarray:
    """P6 image as (3, H, W) floats in [0, 1]."""
    _, _, data = _read_netpbm(path, b"P6")
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm_mask(path: str) -> np.ndarray:
    """P5 mask as (1, H, W) binarised at > 127."""
    _, _, data = _read_netpbm(path, b"P5")
    return (data.transpose(2, 0, 1) > 127).astype(np.float64)


def write_ppm(path: str, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary P6."""
    arr = np.clip(np.asarray(image) * 255.0, 0, 255).astype(np.uint8)
    c, h, w = arr.shape
    if c != 3:
        raise DataError(f"P6 needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.transpose(1, 2, 0).tobytes())


def write_pgm(path: str, mask: np.ndarray) -> None:
    """Write a (1, H, W) binary mask as binary P5 (0 / 255)."""
    arr = (np.asarray(mask)[0] > 0.5).astype(np.uint8) * 255
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def load_image_mask_dir(path: str):
    """Yield (basename, SegmentationSample) pairs in lexicographic order."""
    names = sorted(os.listdir(path))
    images = [n[:-4] for n in names if n.endswith(".ppm")]
    masks = {n[: -len(".mask.pgm")] for n in names if n.endswith(".mask.pgm")}
    unpaired = sorted(set(images) ^ masks)
    if unpaired:
        raise DataError(f"unpaired files in {path}: {', '.join(unpaired)}")
    for base in images:
        image = read_ppm(os.path.join(path, base + ".ppm"))
        mask = read_pgm_mask(os.path.join(path, base + ".mask.pgm"))
        if image.shape[1:] != mask.shape[1:]:
            raise DataError(
                f"{base}: image {image.shape[1:]} and mask {mask.shape[1:]} disagree"
            )
        yield base, SegmentationSample(image, mask)
