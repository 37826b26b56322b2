"""PSNR / SSIM on luma (BT.601) and RGB, with report writers.

Images are (3, H, W) arrays in [0, 1]; metrics work on the [0, 255] scale.
Identical images have infinite PSNR; such values are kept per image but left
out of the means, and the number left out is reported.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

PEAK = 255.0
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
METRICS = ("psnr_y", "ssim_y", "psnr_rgb", "ssim_rgb")


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma in [16/255, 235/255] from RGB in [0, 1]; returns (H, W)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"rgb_to_y needs a (3, H, W) image, got {img.shape}")
    r, g, b = img
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    mse = np.mean((a * PEAK - b * PEAK) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(PEAK ** 2 / mse))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g  # (H-k+1, W)
    return sliding_window_view(rows, k, axis=1) @ g


def _ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    g = gaussian_window()
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5), valid region, L = 255.

    Accepts (H, W) planes or (C, H, W) stacks; stacks are averaged per channel.
    """
    a = np.asarray(a, dtype=np.float64) * PEAK
    b = np.asarray(b, dtype=np.float64) * PEAK
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ShapeError(f"ssim: expected (H, W) or (C, H, W), got {a.shape}")
    if min(a.shape[-2:]) < WINDOW:
        raise ShapeError(f"ssim: image {a.shape[-2]}x{a.shape[-1]} smaller than the {WINDOW}x{WINDOW} window")
    if a.ndim == 2:
        return _ssim_plane(a, b)
    return float(np.mean([_ssim_plane(x, y) for x, y in zip(a, b)]))


@dataclass
class MetricReport:
    images: list = field(default_factory=list)  # dicts: stem + METRICS
    mean: dict = field(default_factory=dict)
    infinite: dict = field(default_factory=dict)  # per metric: count excluded from the mean

    @classmethod
    def from_images(cls, images: list) -> "MetricReport":
        if not images:
            raise ValueError("cannot summarize an empty evaluation")
        mean, infinite = {}, {}
        for key in METRICS:
            vals = [r[key] for r in images]
            finite = [v for v in vals if math.isfinite(v)]
            infinite[key] = len(vals) - len(finite)
            mean[key] = float(np.mean(finite)) if finite else math.inf
        return cls(images, mean, infinite)

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v

        return {
            "count": len(self.images),
            "images": [{k: enc(v) for k, v in r.items()} for r in self.images],
            "mean": {k: enc(v) for k, v in self.mean.items()},
            "infinite_excluded": dict(self.infinite),
        }

    def to_tsv(self) -> str:
        lines = ["\t".join(("stem",) + METRICS)]
        for r in self.images:
            lines.append("\t".join([r["stem"]] + [_fmt(r[k]) for k in METRICS]))
        lines.append("\t".join(["mean"] + [_fmt(self.mean[k]) for k in METRICS]))
        lines.append("\t".join(["infinite_excluded"] + [str(self.infinite[k]) for k in METRICS]))
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tsv, js = out_dir / f"{stem}.tsv", out_dir / f"{stem}.json"
        tsv.write_text(self.to_tsv())
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return tsv, js


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def image_metrics(sr: np.ndarray, hr: np.ndarray) -> dict:
    sr = np.clip(np.asarray(sr, dtype=np.float64), 0.0, 1.0)
    hr = np.asarray(hr, dtype=np.float64)
    ys, yh = rgb_to_y(sr), rgb_to_y(hr)
    return {"psnr_y": psnr(ys, yh), "ssim_y": ssim(ys, yh), "psnr_rgb": psnr(sr, hr), "ssim_rgb": ssim(sr, hr)}


def evaluate(model: Callable, samples: Sequence) -> MetricReport:
    """Score ``model(sample) -> (3, H, W)`` over ``samples`` in order.

    ``model`` may also be a network; use :func:`predictor` to wrap one.
    SR outputs are clamped to [0, 1] before scoring.
    """
    if not samples:
        raise ValueError("evaluation dataset is empty")
    if hasattr(model, "role"):
        model = predictor(model)
    rows = []
    for i, s in enumerate(samples):
        row = {"stem": s.stem or f"{i:05d}"}
        row.update(image_metrics(model(s), s.hr))
        rows.append(row)
    return MetricReport.from_images(rows)


def predictor(net) -> Callable:
    from .tensor import no_grad

    def run(sample):
        with no_grad():
            if net.role == "teacher":
                return net(sample.lr[None], sample.parsing[None]).sr.data[0]
            return net(sample.lr[None]).sr.data[0]

    return run


def bicubic_baseline(scale: int) -> Callable:
    from .resample import bicubic_upsample
    return lambda s: bicubic_upsample(s.lr, scale)


def identity_model(sample) -> np.ndarray:
    return sample.hr
