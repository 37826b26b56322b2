"""Image / parsing-map I/O, LR generation and a synthetic face corpus.

Images live as float arrays in [0, 1] with layout (3, H, W); parsing maps are
one-hot (n_classes, H, W).  On disk a paired corpus looks like::

    root/hr/<stem>.png        8-bit RGB
    root/parsing/<stem>.png   8-bit single-channel class labels
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image

from .resample import bicubic_downsample
from .tensor import ShapeError

log = logging.getLogger(__name__)

BACKGROUND, SKIN, EYE, MOUTH = range(4)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    lr: np.ndarray       # (3, H/s, W/s)
    hr: np.ndarray       # (3, H, W)
    parsing: np.ndarray  # (n_classes, H, W) one-hot
    stem: str = ""


class Batch(NamedTuple):
    lr: np.ndarray
    hr: np.ndarray
    parsing: np.ndarray


@dataclass(frozen=True)
class SyntheticSpec:
    count: int
    size: int = 32
    seed: int = 0
    n_classes: int = 4


# ------------------------------------------------------------------------ labels


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    bad = np.argwhere((labels < 0) | (labels >= n_classes))
    if len(bad):
        y, x = bad[0]
        raise DataError(f"label {labels[y, x]} at pixel (row={y}, col={x}) is outside [0, {n_classes})")
    return (np.arange(n_classes)[:, None, None] == labels[None]).astype(np.float64)


# --------------------------------------------------------------------------- I/O


def load_image(path) -> np.ndarray:
    """8-bit RGB file -> (3, H, W) float64 in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise DataError(f"{path}: expected an 8-bit RGB image, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    """(3, H, W) in [0, 1] -> (H, W, 3) uint8 via clamp then round(v * 255)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got {img.shape}")
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(img: np.ndarray, path) -> None:
    Image.fromarray(to_bytes(img)).save(Path(path))


def load_labels(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise DataError(f"{path}: expected a single-channel label image, got mode {im.mode}")
            return np.asarray(im, dtype=np.uint8).astype(np.int64)
    except OSError as exc:
        raise DataError(f"{path}: cannot read label map ({exc})") from exc


def load_parsing(path, n_classes: int) -> np.ndarray:
    """Label image -> one-hot (n_classes, H, W)."""
    labels = load_labels(path)
    try:
        return one_hot(labels, n_classes)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise DataError("labels must fit in 8 bits")
    Image.fromarray(labels.astype(np.uint8)).save(Path(path))


# --------------------------------------------------------------------- synthesis


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def synth_labels_and_image(seed, size: int):
    """Render one face-like image; returns (labels (H, W) int, image (3, H, W))."""
    if size < 32:
        raise ValueError(f"synthetic faces need size >= 32, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5  # pixel centers, pixel units
    u, v = xx / size, yy / size

    # background: tilted two-colour gradient
    bg_a, bg_b = rng.uniform(0.05, 0.95, 3), rng.uniform(0.05, 0.95, 3)
    tilt = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + 0.5 * (np.cos(tilt) * (u - 0.5) + np.sin(tilt) * (v - 0.5)) * 1.4, 0, 1)
    img = bg_a[:, None, None] * (1 - t) + bg_b[:, None, None] * t
    labels = np.zeros((size, size), dtype=np.int64)

    # face: centers snapped to pixel centers so every part covers >= 1 pixel
    cy = np.floor(size * rng.uniform(0.46, 0.54)) + 0.5
    cx = np.floor(size * rng.uniform(0.46, 0.54)) + 0.5
    ry = size * rng.uniform(0.34, 0.42)
    rx = size * rng.uniform(0.26, 0.33)
    face = _ellipse(yy, xx, cy, cx, ry, rx)
    skin = np.array([rng.uniform(0.65, 0.95), rng.uniform(0.45, 0.75), rng.uniform(0.3, 0.6)])
    light = rng.uniform(-1, 1, 2)
    shade = 0.8 + 0.2 * np.tanh(light[0] * (xx - cx) / rx + light[1] * (yy - cy) / ry)
    shade = shade * (1.0 - 0.15 * (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2))
    img = np.where(face, skin[:, None, None] * shade, img)
    labels[face] = SKIN

    eye_dy = ry * rng.uniform(0.18, 0.3)
    eye_dx = rx * rng.uniform(0.35, 0.5)
    eye_ry = max(ry * rng.uniform(0.08, 0.13), 1.0)
    eye_rx = max(rx * rng.uniform(0.15, 0.22), 1.0)
    eye_col = rng.uniform(0.0, 0.3, 3)
    for side in (-1, 1):
        ey = np.floor(cy - eye_dy) + 0.5
        ex = np.floor(cx + side * eye_dx) + 0.5
        eye = _ellipse(yy, xx, ey, ex, eye_ry, eye_rx)
        radial = np.sqrt(((yy - ey) / eye_ry) ** 2 + ((xx - ex) / eye_rx) ** 2)
        img = np.where(eye, eye_col[:, None, None] + 0.2 * radial, img)
        labels[eye] = EYE

    my = np.floor(cy + ry * rng.uniform(0.4, 0.55)) + 0.5
    m_ry = max(ry * rng.uniform(0.07, 0.12), 1.0)
    m_rx = max(rx * rng.uniform(0.3, 0.45), 1.0)
    mouth = _ellipse(yy, xx, my, cx, m_ry, m_rx)
    lip = np.array([rng.uniform(0.55, 0.85), rng.uniform(0.1, 0.3), rng.uniform(0.15, 0.35)])
    img = np.where(mouth, lip[:, None, None] * (0.85 + 0.15 * np.cos(np.pi * (xx - cx) / m_rx)), img)
    labels[mouth] = MOUTH

    return labels, np.clip(img, 0.0, 1.0)


def synth_face(seed, size: int = 32, n_classes: int = 4):
    """Deterministic synthetic face: returns (hr (3, H, W), parsing (n_classes, H, W))."""
    if n_classes < 4:
        raise ValueError("synthetic faces use 4 classes (background, skin, eyes, mouth)")
    labels, img = synth_labels_and_image(seed, size)
    return img, one_hot(labels, n_classes)


def make_sample(hr: np.ndarray, parsing: np.ndarray, scale: int, stem: str = "") -> Sample:
    if hr.shape[1:] != parsing.shape[1:]:
        raise ShapeError(f"{stem or 'sample'}: hr {hr.shape} and parsing {parsing.shape} disagree spatially")
    return Sample(bicubic_downsample(hr, scale), hr, parsing, stem)


def synthetic_samples(spec: SyntheticSpec, scale: int) -> list[Sample]:
    out = []
    for i in range(spec.count):
        hr, parsing = synth_face((spec.seed, i), spec.size, spec.n_classes)
        out.append(make_sample(hr, parsing, scale, f"synth_{spec.seed}_{i:05d}"))
    return out


def write_synthetic(spec: SyntheticSpec, out_dir) -> list[str]:
    """Render a synthetic corpus into the paired hr/ + parsing/ layout."""
    root = Path(out_dir)
    (root / "hr").mkdir(parents=True, exist_ok=True)
    (root / "parsing").mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(spec.count):
        labels, img = synth_labels_and_image((spec.seed, i), spec.size)
        stem = f"face_{i:05d}"
        save_image(img, root / "hr" / f"{stem}.png")
        save_labels(labels, root / "parsing" / f"{stem}.png")
        stems.append(stem)
    return stems


def paired_stems(root) -> list[str]:
    root = Path(root)
    hr_dir, p_dir = root / "hr", root / "parsing"
    if not hr_dir.is_dir() or not p_dir.is_dir():
        raise DataError(f"{root}: expected hr/ and parsing/ subdirectories")
    hr = {p.stem for p in hr_dir.glob("*.png")}
    parsing = {p.stem for p in p_dir.glob("*.png")}
    for stem in sorted(hr ^ parsing):
        side = "parsing" if stem in hr else "hr"
        raise DataError(f"stem {stem!r} has no matching {side}/{stem}.png")
    return sorted(hr)


def load_directory(root, scale: int, n_classes: int) -> list[Sample]:
    root = Path(root)
    samples = []
    for stem in paired_stems(root):
        hr = load_image(root / "hr" / f"{stem}.png")
        parsing = load_parsing(root / "parsing" / f"{stem}.png", n_classes)
        samples.append(make_sample(hr, parsing, scale, stem))
    return samples


def load_samples(source, scale: int, n_classes: int = 19) -> list[Sample]:
    """Materialize a source: a directory path, a SyntheticSpec or a list of Samples."""
    if isinstance(source, SyntheticSpec):
        return synthetic_samples(source, scale)
    if isinstance(source, (str, Path)):
        return load_directory(source, scale, n_classes)
    return list(source)


def dataset_iter(
    source,
    batch: int,
    seed: int,
    scale: int = 4,
    n_classes: int = 19,
    epochs: int | None = 1,
    dtype=np.float32,
) -> Iterator[Batch]:
    """Yield shuffled batches; the permutation of epoch e depends only on (seed, e).

    ``epochs=None`` streams forever.
    """
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    samples = load_samples(source, scale, n_classes)
    if not samples:
        raise DataError("dataset is empty")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = np.random.default_rng([seed, epoch]).permutation(len(samples))
        for start in range(0, len(order), batch):
            chunk = [samples[i] for i in order[start:start + batch]]
            yield stack(chunk, dtype)
        epoch += 1


def stack(samples: Sequence[Sample], dtype=np.float32) -> Batch:
    return Batch(
        np.stack([s.lr for s in samples]).astype(dtype),
        np.stack([s.hr for s in samples]).astype(dtype),
        np.stack([s.parsing for s in samples]).astype(dtype),
    )
