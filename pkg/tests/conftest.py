"""Shared synthetic data for trainer, CLI, and acceptance tests.

The images are piecewise-smooth (soft step edges plus a disc on a
gentle ramp), the kind of content depth-video sequences contain.
"""

import numpy as np
import pytest

from cdcgan.dataio import Sample, degrade, write_manifest, write_png


def blocky_image(h, w, seed, levels=(0.15, 0.3, 0.42), soft=5.0, disc_amp=0.1):
    """Piecewise-flat test image with soft boundaries, values in [0.02, 0.98]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    rng = np.random.default_rng(seed)
    img = np.full((h, w), levels[0])
    for lv in levels[1:]:
        a, b = rng.uniform(-1, 1, 2)
        c = rng.uniform(0.3, 0.7) * (a * h + b * w) / 2
        t = (a * yy + b * xx - c) / soft
        img += (lv - levels[0]) * 0.5 * (np.tanh(t) + 1) * rng.choice([-1.0, 1.0])
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    r = rng.uniform(0.15, 0.3) * min(h, w)
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    img += disc_amp * 0.5 * (np.tanh((r - d) / soft) + 1)
    return np.clip(img, 0.02, 0.98)


def ramp_depth(h, w):
    """Smooth receding-plane depth map."""
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return (0.35 + 0.08 * (xx / w) + 0.04 * (yy / h))[None, :, :, None]


def synthetic_sample(h=64, w=64, scale=2, seed_base=0, depth="block"):
    color_hr = np.stack([blocky_image(h, w, seed_base + i) for i in (1, 2, 3)],
                        axis=-1)[None]
    if depth == "ramp":
        depth_hr = ramp_depth(h, w)
    else:
        depth_hr = blocky_image(h, w, seed_base + 9, levels=(0.35, 0.55))[None, :, :, None]
    return Sample(color_hr=color_hr, depth_hr=depth_hr,
                  color_lr_up=degrade(color_hr, scale),
                  depth_lr_up=degrade(depth_hr, scale), scale=scale)


def write_synthetic_dataset(root, n_pairs=2, h=64, w=64, seed_base=0):
    """Write PNG pairs plus a manifest under root; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_pairs):
        color = np.stack([blocky_image(h, w, seed_base + 10 * i + j) for j in (1, 2, 3)],
                         axis=-1)
        depth = blocky_image(h, w, seed_base + 10 * i + 9, levels=(0.35, 0.55))
        cp, dp = f"color_{i}.png", f"depth_{i}.png"
        write_png(root / cp, np.rint(color * 255).astype(np.uint8))
        write_png(root / dp, np.rint(depth * 255).astype(np.uint8))
        entries.append((cp, dp))
    manifest = root / "manifest.txt"
    write_manifest(manifest, entries)
    return manifest


@pytest.fixture
def synthetic_manifest(tmp_path):
    return write_synthetic_dataset(tmp_path / "data")
