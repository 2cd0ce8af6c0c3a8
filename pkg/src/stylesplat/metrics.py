"""Image-quality metrics (PSNR, SSIM), a feature-space set distance and report tables.

``feature_distance`` is a self-contained squared MMD over pooled features of
the in-package extractor.  Its values are only comparable with each other,
not with FID/KID numbers computed from pretrained networks.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nets import ConvNet, build_extractor, to_nchw

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
KERNEL_DEGREE = 3
KERNEL_COEF = 1.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; ``inf`` when identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img, g):
    # separable weighted window over every full 11x11 patch
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(a, b):
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_window()
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        vx = _filter_valid(x * x, g) - mx * mx
        vy = _filter_valid(y * y, g) - my * my
        cxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def pooled_features(images, extractor: ConvNet):
    """Spatial mean of the deepest extractor stage, one row per image."""
    return np.stack([extractor.forward(to_nchw(img)).taps[-1][0].mean(axis=(1, 2)) for img in images])


def poly_kernel(x, y, degree=KERNEL_DEGREE, coef=KERNEL_COEF):
    return (x @ y.T / x.shape[1] + coef) ** degree


def mmd2(fa, fb):
    """Biased squared MMD between two feature matrices (rows are samples)."""
    value = poly_kernel(fa, fa).mean() + poly_kernel(fb, fb).mean() - 2.0 * poly_kernel(fa, fb).mean()
    return max(float(value), 0.0)


def feature_distance(set_a, set_b, extractor: ConvNet | None = None):
    """Squared MMD (cubic polynomial kernel) between two image sets in pooled feature space."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("feature_distance needs two nonempty image sets")
    extractor = extractor or build_extractor(seed=0)
    return mmd2(pooled_features(set_a, extractor), pooled_features(set_b, extractor))


def measure_fps(cloud, camera, frames=100, backend=None):
    """Renders per second for ``frames`` consecutive renders of one view."""
    from .rasterizer import render
    render(cloud, camera, backend)  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(frames):
        render(cloud, camera, backend)
    return frames / (time.perf_counter() - t0)


@dataclass
class MetricReport:
    names: list
    psnr: list
    ssim: list
    feature_distance: float | None = None
    runtime: dict = field(default_factory=dict)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_dict(self):
        out = asdict(self)
        out["mean_psnr"] = self.mean_psnr
        out["mean_ssim"] = self.mean_ssim
        # JSON has no infinity; identical pairs are flagged by name
        out["psnr"] = [p if math.isfinite(p) else "inf" for p in self.psnr]
        if not math.isfinite(out["mean_psnr"]):
            out["mean_psnr"] = "inf"
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        lines = [f"{'image':<24} {'PSNR':>9} {'SSIM':>7}"]
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            lines.append(f"{n:<24} {p:>9.3f} {s:>7.4f}")
        lines.append(f"{'mean':<24} {self.mean_psnr:>9.3f} {self.mean_ssim:>7.4f}")
        if self.feature_distance is not None:
            lines.append(f"feature distance: {self.feature_distance:.6g}")
        for k, v in self.runtime.items():
            lines.append(f"{k}: {v:.4g}")
        return "\n".join(lines)


def evaluate(predictions, targets, names=None, extractor=None, with_features=False):
    """Per-pair PSNR/SSIM plus an optional set-level feature distance."""
    if len(predictions) != len(targets):
        raise ValueError("prediction and target counts differ")
    names = names or [str(i) for i in range(len(predictions))]
    report = MetricReport(list(names), [psnr(p, t) for p, t in zip(predictions, targets)],
                          [ssim(p, t) for p, t in zip(predictions, targets)])
    if with_features:
        report.feature_distance = feature_distance(predictions, targets, extractor)
    return report
