"""Image files, color conversion, degradation, and patch sampling.

Images live on disk as 8-bit PNG (color or grayscale) or binary PGM
(P5, depth maps) and in memory as float64 NHWC tensors in [0, 1].
The degradation pipeline produces the network inputs: bicubic
downsample by 1/scale, bicubic upsample back to full size, clamp.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .tensor import bicubic_resize


class DataError(ValueError):
    """Unreadable or mutually inconsistent input data."""


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

def read_png(path, mode):
    """Decode an 8-bit PNG. mode 'rgb' -> (H, W, 3) uint8, 'gray' -> (H, W)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if mode == "rgb" else "L")
            return np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc


def write_png(path, pixels):
    """Encode uint8 pixels, (H, W) grayscale or (H, W, 3) RGB."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def read_pgm(path):
    """Binary PGM (P5), 8-bit, -> (H, W) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment runs to end of line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    if len(data) - pos < width * height:
        raise DataError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).copy()


def write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_depth(path):
    """Depth plane from PGM or grayscale PNG, by extension."""
    if str(path).lower().endswith(".pgm"):
        return read_pgm(path)
    return read_png(path, "gray")


def write_depth(path, pixels):
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, pixels)
    else:
        write_png(path, pixels)


def to_unit(pixels):
    """uint8 -> float64 in [0, 1], shaped (1, H, W, C)."""
    a = np.asarray(pixels, dtype=np.float64) / 255.0
    if a.ndim == 2:
        a = a[:, :, None]
    return a[None, :, :, :]


def to_uint8(tensor):
    """(1, H, W, C) float in [0, 1] -> (H, W[, C]) uint8 with rounding."""
    a = np.clip(np.asarray(tensor)[0], 0.0, 1.0)
    out = np.rint(a * 255.0).astype(np.uint8)
    return out[:, :, 0] if out.shape[2] == 1 else out


# --------------------------------------------------------------------------
# Color space (BT.601 full range)
# --------------------------------------------------------------------------

_KR, _KB = 0.299, 0.114
_KG = 1.0 - _KR - _KB


def rgb_to_ycbcr(rgb):
    """(..., 3) RGB in [0, 1] -> YCbCr; white maps to (1, 0.5, 0.5)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = _KR * r + _KG * g + _KB * b
    cb = 0.5 + 0.5 * (b - y) / (1.0 - _KB)
    cr = 0.5 + 0.5 * (r - y) / (1.0 - _KR)
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycbcr):
    """Exact inverse of rgb_to_ycbcr (green recovered from the luma sum)."""
    ycbcr = np.asarray(ycbcr, dtype=np.float64)
    y, cb, cr = ycbcr[..., 0], ycbcr[..., 1], ycbcr[..., 2]
    r = y + 2.0 * (1.0 - _KR) * (cr - 0.5)
    b = y + 2.0 * (1.0 - _KB) * (cb - 0.5)
    g = (y - _KR * r - _KB * b) / _KG
    return np.stack([r, g, b], axis=-1)


# --------------------------------------------------------------------------
# Samples and degradation
# --------------------------------------------------------------------------

@dataclass
class Sample:
    color_hr: np.ndarray     # (1, H, W, 3) in [0, 1]
    depth_hr: np.ndarray     # (1, H, W, 1) in [0, 1]
    color_lr_up: np.ndarray  # degraded then re-upsampled, HR dims
    depth_lr_up: np.ndarray
    scale: int


def degrade(hr, scale):
    """Bicubic down by 1/scale then back up, clamped to [0, 1]."""
    lr = bicubic_resize(hr, 1.0 / scale)
    up = bicubic_resize(lr, float(scale))
    return np.clip(up, 0.0, 1.0)


def _center_crop_divisible(pixels, scale):
    h, w = pixels.shape[:2]
    ch, cw = (h // scale) * scale, (w // scale) * scale
    if ch < scale or cw < scale:
        raise DataError(f"image {h}x{w} too small for scale {scale}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return pixels[top:top + ch, left:left + cw]


def load_sample(color_path, depth_path, scale):
    """Aligned HR pair plus its degraded network inputs.

    Dimensions not divisible by scale are center-cropped first; color
    and depth must agree on size.
    """
    if scale not in (2, 4):
        raise DataError(f"scale must be 2 or 4, got {scale}")
    color_px = read_png(color_path, "rgb")
    depth_px = read_depth(depth_path)
    if color_px.shape[:2] != depth_px.shape[:2]:
        raise DataError(f"{color_path} is {color_px.shape[:2]} but {depth_path} "
                        f"is {depth_px.shape[:2]}")
    color_px = _center_crop_divisible(color_px, scale)
    depth_px = _center_crop_divisible(depth_px, scale)
    color_hr = to_unit(color_px)
    depth_hr = to_unit(depth_px)
    return Sample(color_hr=color_hr, depth_hr=depth_hr,
                  color_lr_up=degrade(color_hr, scale),
                  depth_lr_up=degrade(depth_hr, scale), scale=scale)


def sample_planes(sample):
    """The six single-channel planes training consumes.

    luma_ref/depth_ref are ground truth; luma_in/depth_in the degraded
    inputs; cb_up/cr_up the bicubic chroma used to rebuild a 3-channel
    image for the discriminator.
    """
    ycc_hr = rgb_to_ycbcr(sample.color_hr)
    ycc_up = rgb_to_ycbcr(sample.color_lr_up)
    return {
        "luma_ref": ycc_hr[..., 0:1],
        "depth_ref": sample.depth_hr,
        "luma_in": ycc_up[..., 0:1],
        "depth_in": sample.depth_lr_up,
        "cb_up": ycc_up[..., 1:2],
        "cr_up": ycc_up[..., 2:3],
    }

PLANE_NAMES = ("luma_in", "depth_in", "luma_ref", "depth_ref", "cb_up", "cr_up")


@dataclass
class PatchBatch:
    luma_in: np.ndarray    # (B, p, p, 1) degraded luma
    depth_in: np.ndarray
    luma_ref: np.ndarray   # ground truth
    depth_ref: np.ndarray
    cb_up: np.ndarray      # bicubic chroma for the discriminator image
    cr_up: np.ndarray


class PatchPool:
    """A fixed pool of aligned patch locations drawn once per run.

    Crops are congruent across all six planes.  The pool order is
    deterministic in the seed; each epoch re-shuffles with a key derived
    from (seed, epoch) so resumed runs replay the same sequence.
    """

    def __init__(self, samples, count, patch_size=32, seed=0):
        if count < 1:
            raise ValueError("patch count must be >= 1")
        self.patch_size = patch_size
        self.planes = []
        for s in samples:
            _, h, w, _ = s.color_hr.shape
            if h < patch_size or w < patch_size:
                raise DataError(f"sample {h}x{w} smaller than patch size {patch_size}")
            self.planes.append(sample_planes(s))
        rng = np.random.default_rng([int(seed), 0xA5])
        idx = rng.integers(0, len(self.planes), size=count)
        tops = np.empty(count, dtype=np.int64)
        lefts = np.empty(count, dtype=np.int64)
        for i in range(count):
            _, h, w, _ = self.planes[idx[i]]["luma_ref"].shape
            tops[i] = rng.integers(0, h - patch_size + 1)
            lefts[i] = rng.integers(0, w - patch_size + 1)
        self.locations = np.stack([idx, tops, lefts], axis=1)

    def __len__(self):
        return len(self.locations)

    def gather(self, rows):
        p = self.patch_size
        crops = {name: [] for name in PLANE_NAMES}
        for si, top, left in self.locations[rows]:
            planes = self.planes[si]
            for name in PLANE_NAMES:
                crops[name].append(planes[name][0, top:top + p, left:left + p, :])
        return PatchBatch(**{name: np.stack(crops[name]) for name in PLANE_NAMES})

    def epoch_batches(self, epoch, batch_size, seed=0):
        """Yield PatchBatch objects covering one shuffled pass."""
        order = np.random.default_rng([int(seed), 0xE7, int(epoch)]).permutation(len(self))
        for start in range(0, len(self) - batch_size + 1, batch_size):
            yield self.gather(order[start:start + batch_size])


def sample_patches(samples, count, patch_size=32, seed=0, batch_size=32):
    """Stream PatchBatches of uniformly random aligned crops.

    Deterministic for a fixed seed; a trailing partial batch is emitted.
    """
    pool = PatchPool(samples, count, patch_size, seed)
    for start in range(0, count, batch_size):
        yield pool.gather(np.arange(start, min(start + batch_size, count)))


# --------------------------------------------------------------------------
# Manifests: one "color_path<TAB>depth_path" per line, relative to root.
# --------------------------------------------------------------------------

def write_manifest(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for color, depth in pairs:
            fh.write(f"{color}\t{depth}\n")


def read_manifest(path, root=None):
    """List of absolute (color_path, depth_path) pairs.

    Relative entries resolve against root (default: the manifest's
    directory).  Missing files are reported with the offending line.
    """
    root = root or os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'color<TAB>depth', got {line!r}")
            pair = tuple(p if os.path.isabs(p) else os.path.join(root, p) for p in parts)
            for p in pair:
                if not os.path.exists(p):
                    raise DataError(f"{path}:{lineno}: no such file {p}")
            pairs.append(pair)
    if not pairs:
        raise DataError(f"{path}: manifest is empty")
    return pairs


def load_manifest_samples(path, scale, root=None):
    return [load_sample(c, d, scale) for c, d in read_manifest(path, root)]
