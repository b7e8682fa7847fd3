"""PSNR, SSIM, and gradient-sharpness metrics plus the evaluation harness.

Color metrics run on the luma plane, depth metrics on the depth plane.
PSNR and sharpness report +inf when the compared images are identical
(the "identical" flag in reports).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataio import (load_sample, read_manifest, rgb_to_ycbcr, sample_planes,
                     to_uint8, write_png, ycbcr_to_rgb)
from .network import generator_forward
from .tensor import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _flat_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs disagree in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    a, b = _flat_pair(a, b)
    mse = np.mean(np.square(a - b))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def _window_filter(img, window):
    """Separable valid-mode correlation with a 1-D window along both axes."""
    k = window.size
    h, w = img.shape
    rows = np.zeros((h, w - k + 1))
    for i, wi in enumerate(window):
        rows += wi * img[:, i:i + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1))
    for i, wi in enumerate(window):
        out += wi * rows[i:i + h - k + 1, :]
    return out


def _as_plane(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 4 and a.shape[0] == 1 and a.shape[3] == 1:
        a = a[0, :, :, 0]
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a single-channel plane, got shape {a.shape}")
    return a


def ssim(a, b, peak=1.0):
    """Mean local structural similarity, 11x11 Gaussian window, sigma 1.5."""
    a, b = _flat_pair(_as_plane(a), _as_plane(b))
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _window_filter(a, win)
    mu_b = _window_filter(b, win)
    var_a = _window_filter(a * a, win) - mu_a * mu_a
    var_b = _window_filter(b * b, win) - mu_b * mu_b
    cov = _window_filter(a * b, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _gradient_magnitude(img):
    """|forward diff x| + |forward diff y|, zero past the last row/column."""
    g = np.zeros_like(img)
    g[:, :-1] += np.abs(img[:, 1:] - img[:, :-1])
    g[:-1, :] += np.abs(img[1:, :] - img[:-1, :])
    return g


def sharpness(x, ref, peak=1.0):
    """Gradient-agreement score in dB; +inf when gradients match exactly."""
    x, ref = _flat_pair(_as_plane(x), _as_plane(ref))
    diff = _gradient_magnitude(x) - _gradient_magnitude(ref)
    mse = np.mean(np.square(diff))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(peak * peak / mse)


# --------------------------------------------------------------------------
# Evaluation harness
# --------------------------------------------------------------------------

METRICS = {"psnr": psnr, "ssim": ssim, "sharpness": sharpness}


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)      # (image, method, metric, plane, value)
    averages: dict = field(default_factory=dict)  # (method, metric, plane) -> value

    def table(self):
        lines = ["image                method    plane  psnr      ssim     sharpness"]
        seen = {}
        for image, method, metric, plane, value in self.rows:
            seen.setdefault((image, method, plane), {})[metric] = value
        for (image, method, plane), vals in seen.items():
            lines.append(f"{image:<20} {method:<9} {plane:<6} "
                         f"{vals['psnr']:<9.4g} {vals['ssim']:<8.4f} {vals['sharpness']:<9.4g}")
        for (method, metric, plane), value in sorted(self.averages.items()):
            lines.append(f"{'average':<20} {method:<9} {plane:<6} {metric}: {value:.4f}")
        return "\n".join(lines)


def _predictions(planes, gen, methods):
    out = {}
    if "bicubic" in methods:
        out["bicubic"] = (planes["luma_in"], planes["depth_in"])
    if "cdcgan" in methods:
        g = generator_forward(gen, planes["luma_in"], planes["depth_in"])
        out["cdcgan"] = (g.color, g.depth)
    return out


def _eval_one(pair, gen, scale, methods, dump_dir):
    color_path, depth_path = pair
    name = os.path.splitext(os.path.basename(color_path))[0]
    sample = load_sample(color_path, depth_path, scale)
    planes = sample_planes(sample)
    rows = []
    if dump_dir:
        write_png(os.path.join(dump_dir, f"{name}_truth_color.png"),
                  to_uint8(sample.color_hr))
        write_png(os.path.join(dump_dir, f"{name}_truth_depth.png"),
                  to_uint8(sample.depth_hr))
    for method, (luma, depth) in _predictions(planes, gen, methods).items():
        for metric, fn in METRICS.items():
            rows.append((name, method, metric, "color", float(fn(luma, planes["luma_ref"]))))
            rows.append((name, method, metric, "depth", float(fn(depth, planes["depth_ref"]))))
        if dump_dir:
            ycc = np.concatenate([np.clip(luma, 0, 1), planes["cb_up"], planes["cr_up"]], axis=3)
            write_png(os.path.join(dump_dir, f"{name}_{method}_color.png"),
                      to_uint8(np.clip(ycbcr_to_rgb(ycc), 0.0, 1.0)))
            write_png(os.path.join(dump_dir, f"{name}_{method}_depth.png"), to_uint8(depth))
    return rows


def evaluate(gen, manifest_path, scale, methods=("cdcgan", "bicubic"),
             csv_path=None, dump_dir=None, workers=1):
    """Score each manifest pair with every method; ordered by manifest.

    Returns an EvalReport; optionally writes the row CSV and PNG dumps
    of the reconstructed images.
    """
    pairs = read_manifest(manifest_path)
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_image = list(pool.map(
                lambda p: _eval_one(p, gen, scale, methods, dump_dir), pairs))
    else:
        per_image = [_eval_one(p, gen, scale, methods, dump_dir) for p in pairs]

    report = EvalReport()
    for rows in per_image:
        report.rows.extend(rows)
    for method in methods:
        for metric in METRICS:
            for plane in ("color", "depth"):
                vals = [v for (_, m, met, pl, v) in report.rows
                        if m == method and met == metric and pl == plane]
                report.averages[(method, metric, plane)] = float(np.mean(vals))
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "method", "metric", "plane", "value"])
            for row in report.rows:
                w.writerow([row[0], row[1], row[2], row[3], f"{row[4]:.17g}"])
    return report
