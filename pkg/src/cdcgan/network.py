"""Generator and discriminator wiring.

The generator splits into five three-layer convolutional subnetworks:
color feature extraction and depth feature extraction run first, a merge
subnetwork fuses their outputs into a two-channel map (channel 0 feeds
the color path, channel 1 the depth path), and two reconstruction heads
produce the final images.  The color head sees the merged color channel
plus both feature maps; the depth head sees only the merged depth
channel plus the depth features, so color-only texture cannot leak into
depth except through the merge.

All generator convolutions are stride 1 with "same" padding, so spatial
size is preserved end to end.  Last layer of each subnetwork is linear;
everything else is ReLU.  The discriminator is a three-layer stride-2
stack ending in a sigmoid probability map.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import (ShapeError, activation_backward, activation_forward,
                     as_nhwc, conv2d_backward, conv2d_forward)

CHECKPOINT_MAGIC = b"CDCGAN01"
LEAKY_SLOPE = 0.2


@dataclass
class ConvLayer:
    kernel: np.ndarray  # (kh, kw, cin, cout)
    bias: np.ndarray    # (cout,)
    stride: int = 1
    padding: str = "same"
    activation: str = "relu"

    def forward(self, x):
        pre = conv2d_forward(x, self.kernel, self.bias, self.stride, self.padding)
        post = activation_forward(pre, self.activation, LEAKY_SLOPE)
        return post, (x, pre, post)

    def backward(self, cache, grad_post, need_input_grad=True):
        x, pre, post = cache
        grad_pre = activation_backward(grad_post, pre, post, self.activation, LEAKY_SLOPE)
        return conv2d_backward(x, self.kernel, grad_pre, self.stride, self.padding,
                               need_input_grad)


# (kh, kw, cin, cout) per layer; three layers per subnetwork.
GENERATOR_LAYOUT = {
    "color_feat": [(9, 9, 1, 96), (1, 1, 96, 48), (5, 5, 48, 1)],
    "depth_feat": [(9, 9, 1, 96), (1, 1, 96, 48), (5, 5, 48, 1)],
    "merge": [(9, 9, 2, 64), (1, 1, 64, 32), (5, 5, 32, 2)],
    "color_recon": [(9, 9, 3, 96), (1, 1, 96, 48), (5, 5, 48, 1)],
    "depth_recon": [(9, 9, 2, 96), (1, 1, 96, 48), (5, 5, 48, 1)],
}
SUBNET_ORDER = ("color_feat", "depth_feat", "merge", "color_recon", "depth_recon")

DISCRIMINATOR_LAYOUT = [
    # (kh, kw, cin, cout, stride, padding, activation)
    (4, 4, 3, 64, 2, "same", "leaky_relu"),
    (4, 4, 64, 64, 2, "same", "leaky_relu"),
    (5, 5, 64, 1, 1, "valid", "sigmoid"),
]


@dataclass
class Generator:
    subnets: dict = field(default_factory=dict)  # name -> [ConvLayer x3]

    def layers(self):
        for name in SUBNET_ORDER:
            for i, layer in enumerate(self.subnets[name]):
                yield f"{name}.{i}", layer


@dataclass
class Discriminator:
    layers_: list = field(default_factory=list)

    def layers(self):
        for i, layer in enumerate(self.layers_):
            yield f"disc.{i}", layer


@dataclass
class GeneratorOutput:
    color: np.ndarray  # reconstructed luma plane
    depth: np.ndarray  # reconstructed depth plane
    taps: dict         # per-subnetwork outputs for inspection


def _init_layer(rng, kh, kw, cin, cout, stride=1, padding="same", activation="relu"):
    # Fan-in scaled Gaussian keeps ReLU activations near unit variance.
    std = np.sqrt(2.0 / (kh * kw * cin))
    kernel = rng.normal(0.0, std, size=(kh, kw, cin, cout))
    return ConvLayer(kernel=kernel, bias=np.zeros(cout), stride=stride,
                     padding=padding, activation=activation)


def build_generator(seed):
    """Fresh generator parameters, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    subnets = {}
    for name in SUBNET_ORDER:
        shapes = GENERATOR_LAYOUT[name]
        layers = []
        for i, (kh, kw, cin, cout) in enumerate(shapes):
            act = "identity" if i == len(shapes) - 1 else "relu"
            layers.append(_init_layer(rng, kh, kw, cin, cout, activation=act))
        subnets[name] = layers
    return Generator(subnets=subnets)


def build_discriminator(seed):
    rng = np.random.default_rng(seed)
    layers = [_init_layer(rng, kh, kw, cin, cout, stride, padding, act)
              for (kh, kw, cin, cout, stride, padding, act) in DISCRIMINATOR_LAYOUT]
    return Discriminator(layers_=layers)


def zero_parameters(net):
    """Zero every kernel and bias in place (testing aid)."""
    for _, layer in net.layers():
        layer.kernel[...] = 0.0
        layer.bias[...] = 0.0
    return net


def _run_subnet(layers, x):
    caches = []
    for layer in layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def _subnet_backward(layers, caches, grad, need_input_grad=True):
    grads = []
    for idx, (layer, cache) in enumerate(zip(reversed(layers), reversed(caches))):
        first = idx == len(layers) - 1
        grad, gk, gb = layer.backward(cache, grad,
                                      need_input_grad or not first)
        grads.append((gk, gb))
    grads.reverse()
    return grad, grads


def generator_forward(gen, color_in, depth_in, want_cache=False):
    """Run the five subnetworks on pre-upsampled single-channel inputs.

    color_in / depth_in: (B, H, W, 1) with matching batch and spatial dims.
    Returns GeneratorOutput; with want_cache=True also returns the
    per-layer caches required by generator_backward.
    """
    color_in = as_nhwc(color_in, "color_in")
    depth_in = as_nhwc(depth_in, "depth_in")
    if color_in.shape[:3] != depth_in.shape[:3]:
        raise ShapeError(f"color {color_in.shape} and depth {depth_in.shape} disagree "
                         f"on batch or spatial dims")
    if color_in.shape[3] != 1 or depth_in.shape[3] != 1:
        raise ShapeError("generator inputs must be single-channel")

    sub = gen.subnets
    f_color, c1 = _run_subnet(sub["color_feat"], color_in)
    f_depth, c2 = _run_subnet(sub["depth_feat"], depth_in)
    merged, c3 = _run_subnet(sub["merge"], np.concatenate([f_color, f_depth], axis=3))
    color_head_in = np.concatenate([merged[..., 0:1], f_color, f_depth], axis=3)
    depth_head_in = np.concatenate([merged[..., 1:2], f_depth], axis=3)
    color_out, c4 = _run_subnet(sub["color_recon"], color_head_in)
    depth_out, c5 = _run_subnet(sub["depth_recon"], depth_head_in)

    out = GeneratorOutput(color=color_out, depth=depth_out,
                          taps={"color_feat": f_color, "depth_feat": f_depth,
                                "merged": merged, "color": color_out, "depth": depth_out})
    if want_cache:
        return out, {"color_feat": c1, "depth_feat": c2, "merge": c3,
                     "color_recon": c4, "depth_recon": c5}
    return out


def generator_backward(gen, caches, grad_color, grad_depth):
    """Backpropagate output gradients through the whole generator.

    Returns ({subnet: [(grad_kernel, grad_bias) x3]}, grad_color_in,
    grad_depth_in).
    """
    sub = gen.subnets
    g_color_head_in, g4 = _subnet_backward(sub["color_recon"], caches["color_recon"], grad_color)
    g_depth_head_in, g5 = _subnet_backward(sub["depth_recon"], caches["depth_recon"], grad_depth)

    g_merged = np.zeros_like(caches["merge"][-1][2])
    g_merged[..., 0:1] = g_color_head_in[..., 0:1]
    g_merged[..., 1:2] = g_depth_head_in[..., 0:1]
    g_f_color = g_color_head_in[..., 1:2].copy()
    g_f_depth = g_color_head_in[..., 2:3] + g_depth_head_in[..., 1:2]

    g_merge_in, g3 = _subnet_backward(sub["merge"], caches["merge"], g_merged)
    g_f_color += g_merge_in[..., 0:1]
    g_f_depth += g_merge_in[..., 1:2]

    # The feature extractors sit directly on data; their input gradients
    # are never consumed.
    g_color_in, g1 = _subnet_backward(sub["color_feat"], caches["color_feat"],
                                      g_f_color, need_input_grad=False)
    g_depth_in, g2 = _subnet_backward(sub["depth_feat"], caches["depth_feat"],
                                      g_f_depth, need_input_grad=False)

    grads = {"color_feat": g1, "depth_feat": g2, "merge": g3,
             "color_recon": g4, "depth_recon": g5}
    return grads, g_color_in, g_depth_in


def discriminator_forward(disc, img, want_cache=False):
    """Probability map for a 3-channel image; fully convolutional.

    A 32x32 input yields a 4x4 map (32 -> 16 -> 8 by stride 2, then a
    5x5 valid layer).  Outputs lie in (0, 1) wherever the sigmoid does
    not saturate in float64.
    """
    img = as_nhwc(img, "image")
    if img.shape[3] != DISCRIMINATOR_LAYOUT[0][2]:
        raise ShapeError(f"discriminator expects {DISCRIMINATOR_LAYOUT[0][2]}-channel input, "
                         f"got {img.shape[3]}")
    out, caches = _run_subnet(disc.layers_, img)
    if want_cache:
        return out, caches
    return out


def discriminator_backward(disc, caches, grad_out, need_input_grad=True):
    """Returns ([(grad_kernel, grad_bias) x3], grad_input).

    need_input_grad=True is required when the adversarial gradient must
    flow through the discriminator into the generated image.
    """
    grad_in, grads = _subnet_backward(disc.layers_, caches, grad_out, need_input_grad)
    return grads, grad_in


def count_parameters(net_or_layers):
    """Exact number of kernel and bias scalars."""
    if hasattr(net_or_layers, "layers"):
        layers = [layer for _, layer in net_or_layers.layers()]
    else:
        layers = list(net_or_layers)
    return sum(l.kernel.size + l.bias.size for l in layers)


def parameters(net):
    """Flat ordered (name, array) view over kernels and biases.

    The arrays are the live parameter buffers; optimizers mutate them in
    place.  Order is fixed and shared with the checkpoint layout.
    """
    out = []
    for name, layer in net.layers():
        out.append((f"{name}.kernel", layer.kernel))
        out.append((f"{name}.bias", layer.bias))
    return out


def flatten_grads(net, grads):
    """Order gradient arrays to match parameters(net).

    grads is the structure returned by generator_backward /
    discriminator_backward.
    """
    out = []
    if isinstance(net, Generator):
        for name in SUBNET_ORDER:
            for gk, gb in grads[name]:
                out.append(gk)
                out.append(gb)
    else:
        for gk, gb in grads:
            out.append(gk)
            out.append(gb)
    return out


# ---------------------------------------------------------------------------
# Checkpoints.
#
# Layout: magic "CDCGAN01", then one block per array in a fixed order.
# Each block is a 4 x little-endian-u32 shape header followed by the
# array as little-endian float64.  Vectors are headed as (1, 1, 1, n).
# Parameter blocks come first (generator then discriminator, kernel then
# bias per layer); optimizer moment blocks and a small u32 metadata
# trailer follow so training can resume exactly.
# ---------------------------------------------------------------------------

_META_KEYS = ("scale", "epoch", "step", "adam_g_step", "adam_d_step")


def _write_array(fh, arr):
    shape = arr.shape if arr.ndim == 4 else (1, 1, 1, arr.size)
    fh.write(struct.pack("<4I", *shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint")
    return data


def _read_array(fh, like=None):
    shape = struct.unpack("<4I", _read_exact(fh, 16))
    n = int(np.prod(shape))
    arr = np.frombuffer(_read_exact(fh, 8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if like is not None and like.ndim != 4:
        arr = arr.reshape(like.shape)
    return arr


def save_checkpoint(path, gen, disc, adam_g=None, adam_d=None, meta=None):
    """Write parameters (and, when given, optimizer moments) to path."""
    meta = dict(meta or {})
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for _, arr in parameters(gen) + parameters(disc):
            _write_array(fh, arr)
        has_opt = adam_g is not None and adam_d is not None
        fh.write(struct.pack("<I", 1 if has_opt else 0))
        if has_opt:
            for state in (adam_g, adam_d):
                for arr in state.m + state.v:
                    _write_array(fh, arr)
        fh.write(struct.pack("<5I", *(int(meta.get(k, 0)) for k in _META_KEYS)))


def load_checkpoint(path):
    """Read a checkpoint; returns (gen, disc, adam_g, adam_d, meta).

    adam states are None when the file carries parameters only.
    Round-trips are bit-exact.
    """
    from .optimizer import adam_init  # local import to avoid a cycle

    gen = build_generator(0)
    disc = build_discriminator(0)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"not a checkpoint (bad magic {magic!r})")
            for _, arr in parameters(gen) + parameters(disc):
                arr[...] = _read_array(fh, like=arr)
            (has_opt,) = struct.unpack("<I", _read_exact(fh, 4))
            adam_g = adam_d = None
            if has_opt:
                adam_g = adam_init([a for _, a in parameters(gen)])
                adam_d = adam_init([a for _, a in parameters(disc)])
                for state in (adam_g, adam_d):
                    for arr in state.m + state.v:
                        arr[...] = _read_array(fh, like=arr)
            meta = dict(zip(_META_KEYS, struct.unpack("<5I", _read_exact(fh, 20))))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if adam_g is not None:
        adam_g.step = meta["adam_g_step"]
        adam_d.step = meta["adam_d_step"]
    return gen, disc, adam_g, adam_d, meta
