"""Training objectives: L1 data term, total variation, 8-neighbour
gradient difference, and the adversarial pair.

All auxiliary losses normalise by batch * height * width and use the L1
norm; the |.| subgradient at exactly 0 is taken as 0.  Finite
differences that would index outside the image contribute nothing.
Each function returns its scalar value together with the gradients
needed for backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, as_nhwc

PROB_CLAMP = 1e-7

# Offsets (drow, dcol) of the 8-connected neighbourhood.
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1),
                    (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class LossBreakdown:
    data: float = 0.0
    tv: float = 0.0
    gd: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    total_g: float = 0.0


def _check_same_shape(*tensors):
    arrays = [as_nhwc(t) for t in tensors]
    first = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != first:
            raise ShapeError(f"loss inputs disagree in shape: {first} vs {a.shape}")
    return arrays


def data_loss(color_out, depth_out, color_ref, depth_ref):
    """Mean absolute deviation of both planes from their references."""
    x, y, cr, dr = _check_same_shape(color_out, depth_out, color_ref, depth_ref)
    n = x.shape[0] * x.shape[1] * x.shape[2]
    dx = x - cr
    dy = y - dr
    value = (np.abs(dx).sum() + np.abs(dy).sum()) / n
    return value, np.sign(dx) / n, np.sign(dy) / n


def _tv_plane(img, n):
    """L1 total variation of one plane with forward differences."""
    gx = img[:, :, 1:, :] - img[:, :, :-1, :]
    gy = img[:, 1:, :, :] - img[:, :-1, :, :]
    value = (np.abs(gx).sum() + np.abs(gy).sum()) / n
    grad = np.zeros_like(img)
    sx = np.sign(gx)
    sy = np.sign(gy)
    grad[:, :, 1:, :] += sx
    grad[:, :, :-1, :] -= sx
    grad[:, 1:, :, :] += sy
    grad[:, :-1, :, :] -= sy
    return value, grad / n


def tv_loss(color_out, depth_out):
    """Total variation of the generated pair (smoothness prior)."""
    x, y = _check_same_shape(color_out, depth_out)
    n = x.shape[0] * x.shape[1] * x.shape[2]
    vx, gx = _tv_plane(x, n)
    vy, gy = _tv_plane(y, n)
    return vx + vy, gx, gy


def _gd_plane(img, ref, n):
    value = 0.0
    grad = np.zeros_like(img)
    h, w = img.shape[1], img.shape[2]
    for dr, dc in NEIGHBOR_OFFSETS:
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        diff = ((img[:, r0:r1, c0:c1, :] - img[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc, :])
                - (ref[:, r0:r1, c0:c1, :] - ref[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc, :]))
        value += np.abs(diff).sum()
        s = np.sign(diff)
        grad[:, r0:r1, c0:c1, :] += s
        grad[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc, :] -= s
    return value / n, grad / n


def gd_loss(color_out, depth_out, color_ref, depth_ref):
    """L1 mismatch of all 8 neighbour differences against the references.

    Invariant to adding a constant to any single plane.
    """
    x, y, cr, dr = _check_same_shape(color_out, depth_out, color_ref, depth_ref)
    n = x.shape[0] * x.shape[1] * x.shape[2]
    vx, gx = _gd_plane(x, cr, n)
    vy, gy = _gd_plane(y, dr, n)
    return vx + vy, gx, gy


def clamp_probability(p):
    """Keep sigmoid outputs away from 0 and 1 before taking logs."""
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def generator_adversarial_loss(d_fake):
    """Non-saturating generator term -log d_fake with its gradient.

    Used on its own when the generator trains against an already
    updated, frozen discriminator.
    """
    pf = np.atleast_1d(np.asarray(d_fake, dtype=np.float64))
    pfc = clamp_probability(pf)
    b = pf.size
    adv_g = float(-np.log(pfc).sum() / b)
    grad = np.where(pf == pfc, -1.0 / pfc, 0.0) / b  # clamp kills the gradient
    return adv_g, grad


def adversarial_losses(d_real, d_fake):
    """Discriminator and generator adversarial objectives.

    d_real / d_fake are probabilities (scalars or 1-D arrays; arrays are
    averaged).  The discriminator descends
    -[log d_real + log(1 - d_fake)]; the generator uses the
    non-saturating -log d_fake, which shares fixed points with the
    minimax form but keeps gradients alive early in training.

    Returns (adv_d, adv_g, grads) with grads = (d adv_d / d d_real,
    d adv_d / d d_fake, d adv_g / d d_fake) shaped like the inputs.
    """
    pr = np.atleast_1d(np.asarray(d_real, dtype=np.float64))
    pf = np.atleast_1d(np.asarray(d_fake, dtype=np.float64))
    prc = clamp_probability(pr)
    pfc = clamp_probability(pf)
    b = pr.size
    adv_d = float(-(np.log(prc) + np.log(1.0 - pfc)).sum() / b)
    adv_g, g_adv_g_fake = generator_adversarial_loss(pf)
    # Gradients vanish where the clamp is active.
    live_r = (pr == prc)
    live_f = (pf == pfc)
    g_adv_d_real = np.where(live_r, -1.0 / prc, 0.0) / b
    g_adv_d_fake = np.where(live_f, 1.0 / (1.0 - pfc), 0.0) / b
    return adv_d, adv_g, (g_adv_d_real, g_adv_d_fake, g_adv_g_fake)


def total_generator_objective(alpha, adv_g, data, tv, gd):
    """Weighted sum alpha * adversarial + data + tv + gd."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return alpha * adv_g + data + tv + gd
