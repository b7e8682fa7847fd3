"""Finite-difference verification of every hand-derived backward pass.

Each component pairs a scalar-valued forward function with the analytic
gradients its backward pass produces; `finite_diff_check` probes random
coordinates against central differences.  Inputs for the kinked
operations (ReLU family, L1 losses) are constructed with their |.| and
max(0, .) arguments bounded away from zero so the comparison is made
where the functions are differentiable.
"""

from __future__ import annotations

import numpy as np

from .losses import adversarial_losses, data_loss, gd_loss, tv_loss
from .network import (build_discriminator, build_generator,
                      discriminator_backward, discriminator_forward,
                      flatten_grads, generator_backward, generator_forward,
                      parameters)
from .tensor import (activation_backward, activation_forward, conv2d_backward,
                     conv2d_forward, finite_diff_check)

THRESHOLD = 1e-4


def _margin_field(rng, h, w, row_range, col_range):
    """Grid R[i] + C[j] whose 8-neighbour differences stay >= the range gap."""
    rsteps = rng.uniform(*row_range, h - 1) * rng.choice([-1.0, 1.0], h - 1)
    csteps = rng.uniform(*col_range, w - 1) * rng.choice([-1.0, 1.0], w - 1)
    rows = np.concatenate([[0.0], np.cumsum(rsteps)])
    cols = np.concatenate([[0.0], np.cumsum(csteps)])
    return (rows[:, None] + cols[None, :])[None, :, :, None]


def _signed_offset(rng, shape, lo=0.1, hi=0.5):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _conv_component(kh, kw, cin, cout, stride, padding):
    def build(seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0, (2, 8, 8, cin))
        kernel = rng.normal(0.0, 0.3, (kh, kw, cin, cout))
        bias = rng.normal(0.0, 0.1, cout)
        proj = rng.normal(0.0, 1.0,
                          conv2d_forward(x, kernel, bias, stride, padding).shape)

        def fn(params):
            xi, ki, bi = params
            out = conv2d_forward(xi, ki, bi, stride, padding)
            gx, gk, gb = conv2d_backward(xi, ki, proj, stride, padding)
            return float((out * proj).sum()), [gx, gk, gb]

        return fn, [x, kernel, bias]
    return build


def _activation_component(kind):
    def build(seed):
        rng = np.random.default_rng(seed)
        # Magnitudes >= 0.1 keep relu/leaky_relu away from their kink.
        x = _signed_offset(rng, (1, 8, 8, 3), 0.1, 1.0)
        proj = rng.normal(0.0, 1.0, x.shape)

        def fn(params):
            xi = params[0]
            post = activation_forward(xi, kind)
            gx = activation_backward(proj, xi, post, kind)
            return float((post * proj).sum()), [gx]

        return fn, [x]
    return build


def _data_component(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.0, 1.0, (1, 8, 8, 1))
    d = rng.uniform(0.0, 1.0, (1, 8, 8, 1))
    x = c + _signed_offset(rng, c.shape)
    y = d + _signed_offset(rng, d.shape)

    def fn(params):
        xi, yi = params
        value, gx, gy = data_loss(xi, yi, c, d)
        return value, [gx, gy]

    return fn, [x, y]


def _tv_component(seed):
    rng = np.random.default_rng(seed)
    # Forward differences equal the generating steps, all >= 0.1.
    x = _margin_field(rng, 8, 8, (0.1, 0.2), (0.3, 0.45))
    y = _margin_field(rng, 8, 8, (0.1, 0.2), (0.3, 0.45))

    def fn(params):
        xi, yi = params
        value, gx, gy = tv_loss(xi, yi)
        return value, [gx, gy]

    return fn, [x, y]


def _gd_component(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.0, 1.0, (1, 8, 8, 1))
    d = rng.uniform(0.0, 1.0, (1, 8, 8, 1))
    # Row/column step ranges are disjoint so even diagonal differences
    # of the perturbation keep a 0.1 margin.
    x = c + _margin_field(rng, 8, 8, (0.1, 0.2), (0.3, 0.45))
    y = d + _margin_field(rng, 8, 8, (0.1, 0.2), (0.3, 0.45))

    def fn(params):
        xi, yi = params
        value, gx, gy = gd_loss(xi, yi, c, d)
        return value, [gx, gy]

    return fn, [x, y]


def _adversarial_component(seed):
    rng = np.random.default_rng(seed)
    p_real = rng.uniform(0.2, 0.8, 3)
    p_fake = rng.uniform(0.2, 0.8, 3)

    def fn(params):
        pr, pf = params
        adv_d, adv_g, (g_r, g_f_d, g_f_g) = adversarial_losses(pr, pf)
        return adv_d + adv_g, [g_r, g_f_d + g_f_g]

    return fn, [p_real, p_fake]


def _generator_component(seed):
    rng = np.random.default_rng(seed)
    gen = build_generator(seed)
    luma_in = rng.uniform(0.1, 0.9, (1, 8, 8, 1))
    depth_in = rng.uniform(0.1, 0.9, (1, 8, 8, 1))
    luma_ref = rng.uniform(0.1, 0.9, (1, 8, 8, 1))
    depth_ref = rng.uniform(0.1, 0.9, (1, 8, 8, 1))

    def fn(params):
        out, cache = generator_forward(gen, luma_in, depth_in, want_cache=True)
        v1, g1c, g1d = data_loss(out.color, out.depth, luma_ref, depth_ref)
        v2, g2c, g2d = tv_loss(out.color, out.depth)
        v3, g3c, g3d = gd_loss(out.color, out.depth, luma_ref, depth_ref)
        grads, _, _ = generator_backward(gen, cache, g1c + g2c + g3c, g1d + g2d + g3d)
        return v1 + v2 + v3, flatten_grads(gen, grads)

    return fn, [a for _, a in parameters(gen)]


def _discriminator_component(seed):
    rng = np.random.default_rng(seed)
    disc = build_discriminator(seed)
    real = rng.uniform(0.0, 1.0, (1, 20, 20, 3))
    fake = rng.uniform(0.0, 1.0, (1, 20, 20, 3))

    def fn(params):
        real_map, real_cache = discriminator_forward(disc, real, want_cache=True)
        fake_map, fake_cache = discriminator_forward(disc, fake, want_cache=True)
        cell = 1.0 / (real_map.size // real_map.shape[0])
        p_real = real_map.reshape(real_map.shape[0], -1).mean(axis=1)
        p_fake = fake_map.reshape(fake_map.shape[0], -1).mean(axis=1)
        adv_d, _, (g_r, g_f, _) = adversarial_losses(p_real, p_fake)
        gr, _ = discriminator_backward(
            disc, real_cache,
            np.broadcast_to((g_r * cell)[:, None, None, None], real_map.shape).copy())
        gf, _ = discriminator_backward(
            disc, fake_cache,
            np.broadcast_to((g_f * cell)[:, None, None, None], fake_map.shape).copy())
        grads = [a + b for a, b in zip(flatten_grads(disc, gr), flatten_grads(disc, gf))]
        return adv_d, grads

    return fn, [a for _, a in parameters(disc)]


COMPONENTS = {
    "conv9x9_same": _conv_component(9, 9, 1, 4, 1, "same"),
    "conv5x5_same": _conv_component(5, 5, 2, 3, 1, "same"),
    "conv5x5_valid": _conv_component(5, 5, 2, 3, 1, "valid"),
    "conv1x1": _conv_component(1, 1, 4, 2, 1, "valid"),
    "conv4x4_stride2_same": _conv_component(4, 4, 3, 4, 2, "same"),
    "relu": _activation_component("relu"),
    "leaky_relu": _activation_component("leaky_relu"),
    "sigmoid": _activation_component("sigmoid"),
    "data_loss": _data_component,
    "tv_loss": _tv_component,
    "gd_loss": _gd_component,
    "adversarial": _adversarial_component,
    "generator_full": _generator_component,
    "discriminator_full": _discriminator_component,
}


def _corrupted(fn):
    # g + |g| + 0.05 is wrong by at least half its magnitude at every
    # coordinate, so any probed location reports a large error.
    def wrapped(params):
        value, grads = fn(params)
        return value, [g + np.abs(g) + 0.05 for g in grads]
    return wrapped


def run_component(name, seed=0, probe_count=40, eps=1e-5, corrupt=False):
    """Max relative error of one component's analytic gradients."""
    fn, params = COMPONENTS[name](seed)
    if corrupt:
        fn = _corrupted(fn)
    return finite_diff_check(fn, params, probe_count=probe_count, eps=eps,
                             seed=seed + 1)


def run_all(seed=0, corrupt=None):
    """[(name, max_rel_error, passed)] for every component."""
    results = []
    for name in COMPONENTS:
        err = run_component(name, seed=seed, corrupt=(name == corrupt))
        results.append((name, err, err < THRESHOLD))
    return results
