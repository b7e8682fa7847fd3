"""Dense-tensor primitives for the super-resolution networks.

Everything here operates on 4-D float64 numpy arrays laid out as
(batch, height, width, channels).  Convolution is cross-correlation
(no kernel flip), the usual CNN convention.  Backward passes are
hand-derived and return gradients explicitly instead of taping a graph;
`finite_diff_check` is the harness that keeps them honest.
"""

from __future__ import annotations

import numpy as np

VALID_PADDINGS = ("same", "valid")


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


def as_nhwc(x, name="tensor"):
    """Coerce to a float64 (batch, height, width, channels) array.

    Every dimension must be >= 1.
    """
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, height, width, channels), got shape {a.shape}")
    if min(a.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {a.shape}")
    return a


def conv_output_size(size, k, stride, padding):
    """Spatial output size of a convolution along one axis."""
    if padding == "same":
        return -(-size // stride)  # ceil(size / stride)
    out = (size - k) // stride + 1
    if out < 1:
        raise ShapeError(f"valid convolution of size {size} with kernel {k}, stride {stride} "
                         f"produces non-positive output")
    return out


def _pad_amounts(size, k, stride, padding):
    if padding == "valid":
        return 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _check_conv_args(x, kernel, stride, padding):
    if padding not in VALID_PADDINGS:
        raise ValueError(f"padding must be one of {VALID_PADDINGS}, got {padding!r}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be (kh, kw, cin, cout), got shape {kernel.shape}")
    if x.shape[3] != kernel.shape[2]:
        raise ShapeError(f"input has {x.shape[3]} channels but kernel expects {kernel.shape[2]}")


def _window(xp, i, j, stride, oh, ow):
    """The (B, oh, ow, cin) input slice seen by kernel position (i, j)."""
    return xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]


def _im2col(xp, kh, kw, stride, oh, ow):
    """Gather sliding windows of a padded input into (B, oh, ow, kh, kw, cin)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]  # (B, oh, ow, cin, kh, kw)
    return np.ascontiguousarray(np.moveaxis(win, 3, 5))


def _conv_geometry(x, kernel, stride, padding):
    kh, kw, _, _ = kernel.shape
    b, h, w, _ = x.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    pt, pb = _pad_amounts(h, kh, stride, padding)
    pl, pr = _pad_amounts(w, kw, stride, padding)
    return oh, ow, (pt, pb, pl, pr)


def conv2d_forward(x, kernel, bias, stride=1, padding="same"):
    """2-D cross-correlation with bias.

    x: (B, H, W, cin); kernel: (kh, kw, cin, cout); bias: (cout,).
    "same" zero-pads so the output spatial size is ceil(in/stride);
    "valid" uses no padding and shrinks by the kernel extent.
    """
    x = as_nhwc(x, "input")
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_conv_args(x, kernel, stride, padding)
    kh, kw, cin, cout = kernel.shape
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    b = x.shape[0]
    oh, ow, (pt, pb, pl, pr) = _conv_geometry(x, kernel, stride, padding)

    if kh == 1 and kw == 1 and stride == 1:
        out = x.reshape(-1, cin) @ kernel.reshape(cin, cout) + bias
        return out.reshape(b, oh, ow, cout)

    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if cout < cin:
        # Narrow outputs: accumulate one gemm per kernel position rather
        # than materialising kh*kw*cin-wide columns.
        out = np.broadcast_to(bias, (b * oh * ow, cout)).copy()
        for i in range(kh):
            for j in range(kw):
                win = np.ascontiguousarray(_window(xp, i, j, stride, oh, ow))
                out += win.reshape(-1, cin) @ kernel[i, j]
        return out.reshape(b, oh, ow, cout)

    cols = _im2col(xp, kh, kw, stride, oh, ow)
    out = cols.reshape(b * oh * ow, kh * kw * cin) @ kernel.reshape(kh * kw * cin, cout)
    out += bias
    return out.reshape(b, oh, ow, cout)


def conv2d_backward(x, kernel, grad_out, stride=1, padding="same", need_input_grad=True):
    """Gradients of conv2d_forward w.r.t. input, kernel, and bias.

    grad_out must match the forward output shape; returns
    (grad_input, grad_kernel, grad_bias) with the same shapes as their
    primals.  need_input_grad=False skips the input gradient (returns
    None in its slot) for layers that sit directly on data.
    """
    x = as_nhwc(x, "input")
    kernel = np.asarray(kernel, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _check_conv_args(x, kernel, stride, padding)
    kh, kw, cin, cout = kernel.shape
    b, h, w, _ = x.shape
    oh, ow, (pt, pb, pl, pr) = _conv_geometry(x, kernel, stride, padding)
    if grad_out.shape != (b, oh, ow, cout):
        raise ShapeError(f"upstream gradient shape {grad_out.shape} does not match "
                         f"forward output {(b, oh, ow, cout)}")
    g = grad_out.reshape(b * oh * ow, cout)
    grad_bias = g.sum(axis=0)

    if kh == 1 and kw == 1 and stride == 1:
        grad_kernel = (x.reshape(-1, cin).T @ g).reshape(kernel.shape)
        grad_x = (g @ kernel.reshape(cin, cout).T).reshape(x.shape) if need_input_grad else None
        return grad_x, grad_kernel, grad_bias

    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if cout < cin:
        grad_kernel = np.empty_like(kernel)
        for i in range(kh):
            for j in range(kw):
                win = np.ascontiguousarray(_window(xp, i, j, stride, oh, ow))
                grad_kernel[i, j] = win.reshape(-1, cin).T @ g
    else:
        cols = _im2col(xp, kh, kw, stride, oh, ow)
        grad_kernel = (cols.reshape(b * oh * ow, kh * kw * cin).T @ g).reshape(kernel.shape)

    if not need_input_grad:
        return None, grad_kernel, grad_bias
    # Scatter each kernel position's contribution back onto the padded input.
    grad_xp = np.zeros_like(xp)
    if cin <= cout:
        # One wide gemm, then cheap view-adds per position.
        grad_cols = (g @ kernel.reshape(kh * kw * cin, cout).T).reshape(b, oh, ow, kh, kw, cin)
        for i in range(kh):
            for j in range(kw):
                _window(grad_xp, i, j, stride, oh, ow)[...] += grad_cols[:, :, :, i, j, :]
    else:
        for i in range(kh):
            for j in range(kw):
                contrib = (g @ kernel[i, j].T).reshape(b, oh, ow, cin)
                _window(grad_xp, i, j, stride, oh, ow)[...] += contrib
    grad_x = grad_xp[:, pt:pt + h, pl:pl + w, :]
    return np.ascontiguousarray(grad_x), grad_kernel, grad_bias


def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_forward(x, kind, slope=0.2):
    """Elementwise activation. kind: relu | leaky_relu | sigmoid | identity."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "identity":
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(grad_out, pre, post, kind, slope=0.2):
    """Gradient through an activation given its input (pre) and output (post).

    The relu / leaky_relu subgradient at exactly 0 uses the negative branch.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if kind == "relu":
        return grad_out * (pre > 0)
    if kind == "leaky_relu":
        return grad_out * np.where(pre > 0, 1.0, slope)
    if kind == "sigmoid":
        return grad_out * post * (1.0 - post)
    if kind == "identity":
        return grad_out.copy()
    raise ValueError(f"unknown activation {kind!r}")


# Catmull-Rom cubic, the a = -0.5 member of the cubic-convolution family.
_CUBIC_A = -0.5


def _cubic_kernel(t):
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    a = _CUBIC_A
    near = (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0
    far = a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _resize_axis(x, axis, out_size):
    in_size = x.shape[axis]
    scale = out_size / in_size
    # Center-aligned sampling; source taps clamp at the borders (edge replication).
    src = (np.arange(out_size) + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    idx = np.stack([np.clip(base + k, 0, in_size - 1) for k in range(-1, 3)])  # (4, out)
    wts = np.stack([_cubic_kernel(src - (base + k)) for k in range(-1, 3)])    # (4, out)
    taken = np.take(x, idx, axis=axis)  # inserts a leading 4-axis at `axis`
    shape = [1] * taken.ndim
    shape[axis] = 4
    shape[axis + 1] = out_size
    # Accumulate deviations from the floor tap: constant regions (and
    # scale 1) reproduce bit-exactly even though the kernel weights only
    # sum to 1 up to rounding.
    anchor = np.take(taken, 1, axis=axis)
    deltas = taken - np.expand_dims(anchor, axis)
    return anchor + np.sum(deltas * wts.reshape(shape), axis=axis)


def bicubic_resize(image, scale):
    """Catmull-Rom bicubic resize of an NHWC tensor by a single scale factor.

    Output dimensions are round(in * scale); border pixels are replicated.
    """
    image = as_nhwc(image, "image")
    scale = float(scale)
    _, h, w, _ = image.shape
    oh = int(np.floor(h * scale + 0.5))
    ow = int(np.floor(w * scale + 0.5))
    if oh < 1 or ow < 1:
        raise ShapeError(f"scale {scale} of {h}x{w} image gives non-positive output {oh}x{ow}")
    if oh == h and ow == w and scale == 1.0:
        return image.copy()
    out = _resize_axis(image, 1, oh)
    out = _resize_axis(out, 2, ow)
    return out


def relative_error(analytic, numeric, floor=1e-3):
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps round-off noise in the numeric estimate from
    dominating when the true gradient is near zero.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(fn, params, probe_count=30, eps=1e-5, seed=0):
    """Compare analytic gradients against central finite differences.

    fn(params) must return (scalar_value, grads) where grads is a list of
    arrays shaped like params.  probe_count coordinates are drawn with a
    fixed seed and perturbed in place by +/- eps; returns the maximum
    relative error observed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    _, grads = fn(params)
    rng = np.random.default_rng(seed)
    sizes = [p.size for p in params]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat_idx in rng.choice(total, size=min(probe_count, total), replace=False):
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = int(flat_idx - offsets[which])
        p = params[which].reshape(-1)
        orig = p[local]
        p[local] = orig + eps
        f_plus, _ = fn(params)
        p[local] = orig - eps
        f_minus, _ = fn(params)
        p[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        analytic = grads[which].reshape(-1)[local]
        worst = max(worst, relative_error(analytic, numeric))
    return worst
