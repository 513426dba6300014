"""Encoder-decoder network: definition, initialization, forward, backward.

Canonical UNet-style shape: ``depth`` levels of double 3x3 conv + ReLU,
2x2 max pooling between encoder levels, nearest-neighbor upsampling
followed by a 3x3 conv on the way up, concatenation skip connections and
a linear 1x1 output head. Channel widths double per level starting at
``base_width``.

Inputs whose spatial size is not divisible by 2^(depth-1) are
reflect-padded on the bottom/right and the prediction is cropped back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int
    base_width: int = 32
    depth: int = 4
    out_channels: int = 1
    kernel_size: int = 3

    def __post_init__(self):
        if self.in_channels < 1 or self.base_width < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")

    @property
    def divisor(self) -> int:
        return 2 ** (self.depth - 1)

    def level_width(self, level: int) -> int:
        return self.base_width * (2**level)


@dataclass
class NetworkWeights:
    config: NetworkConfig
    params: dict
    init_seed: int

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(self.config, {k: v.copy() for k, v in self.params.items()},
                              self.init_seed)


def _layer_plan(cfg: NetworkConfig) -> list[tuple[str, int, int, int]]:
    """(name, in_ch, out_ch, kernel) for every conv, in forward order."""
    plan = []
    ch = cfg.in_channels
    for level in range(cfg.depth - 1):
        w = cfg.level_width(level)
        plan.append((f"enc{level}_conv1", ch, w, cfg.kernel_size))
        plan.append((f"enc{level}_conv2", w, w, cfg.kernel_size))
        ch = w
    w_bottom = cfg.level_width(cfg.depth - 1)
    plan.append(("bottom_conv1", ch, w_bottom, cfg.kernel_size))
    plan.append(("bottom_conv2", w_bottom, w_bottom, cfg.kernel_size))
    ch = w_bottom
    for level in reversed(range(cfg.depth - 1)):
        w = cfg.level_width(level)
        plan.append((f"dec{level}_up", ch, w, cfg.kernel_size))
        plan.append((f"dec{level}_conv1", 2 * w, w, cfg.kernel_size))
        plan.append((f"dec{level}_conv2", w, w, cfg.kernel_size))
        ch = w
    plan.append(("head", ch, cfg.out_channels, 1))
    return plan


def init_weights(cfg: NetworkConfig, seed: int, dtype=np.float32) -> NetworkWeights:
    """Fan-in-scaled normal kernels (std = sqrt(2/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, c_in, c_out, k in _layer_plan(cfg):
        fan_in = c_in * k * k
        std = np.sqrt(2.0 / fan_in)
        params[name + "_w"] = rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(dtype)
        params[name + "_b"] = np.zeros(c_out, dtype=dtype)
    return NetworkWeights(config=cfg, params=params, init_seed=seed)


def _conv_relu(params, name, x, cache, relu=True):
    y, c_conv = ops.conv2d_forward(x, params[name + "_w"], params[name + "_b"])
    if relu:
        y, mask = ops.relu_forward(y)
        cache.append((name, c_conv, mask))
    else:
        cache.append((name, c_conv, None))
    return y


def forward_batch(weights: NetworkWeights, xb: np.ndarray, want_cache: bool = False):
    """Forward pass on a (B, C, H, W) batch with H, W divisible by 2^(depth-1).

    Returns (pred, cache) where pred has shape (B, out_channels, H, W);
    cache is None unless requested.
    """
    cfg = weights.config
    p = weights.params
    b, c, h, w = xb.shape
    if c != cfg.in_channels:
        raise ValueError(f"input has {c} channels, network expects {cfg.in_channels}")
    if h % cfg.divisor or w % cfg.divisor:
        raise ValueError(f"spatial size {h}x{w} not divisible by {cfg.divisor}")

    cache = []
    skips = []
    hcur = xb
    for level in range(cfg.depth - 1):
        hcur = _conv_relu(p, f"enc{level}_conv1", hcur, cache)
        hcur = _conv_relu(p, f"enc{level}_conv2", hcur, cache)
        skips.append(hcur)
        hcur, c_pool = ops.maxpool2_forward(hcur)
        cache.append(("pool", c_pool, None))
    hcur = _conv_relu(p, "bottom_conv1", hcur, cache)
    hcur = _conv_relu(p, "bottom_conv2", hcur, cache)
    for level in reversed(range(cfg.depth - 1)):
        hcur = ops.upsample2_forward(hcur)
        cache.append(("upsample", None, None))
        hcur = _conv_relu(p, f"dec{level}_up", hcur, cache)
        skip = skips[level]
        hcur = np.concatenate([hcur, skip], axis=1)
        cache.append(("concat", hcur.shape[1] // 2, None))
        hcur = _conv_relu(p, f"dec{level}_conv1", hcur, cache)
        hcur = _conv_relu(p, f"dec{level}_conv2", hcur, cache)
    out = _conv_relu(p, "head", hcur, cache, relu=False)
    return out, (cache if want_cache else None)


def backward_batch(weights: NetworkWeights, cache, dy: np.ndarray) -> dict:
    """Exact gradients of a scalar loss wrt every parameter.

    ``cache`` must come from :func:`forward_batch` with want_cache=True;
    ``dy`` is the upstream gradient on the network output.
    """
    if cache is None:
        raise ValueError("backward pass needs the forward cache (want_cache=True)")
    grads = {}
    d = dy
    skip_grads = []
    for entry in reversed(cache):
        kind, payload, mask = entry
        if kind == "pool":
            d = ops.maxpool2_backward(d, payload)
            # gradient joins the skip branch stored at this level
            d = d + skip_grads.pop()
        elif kind == "upsample":
            d = ops.upsample2_backward(d)
        elif kind == "concat":
            n_up = payload
            skip_grads.append(d[:, n_up:, :, :])
            d = d[:, :n_up, :, :]
        else:
            if mask is not None:
                d = ops.relu_backward(d, mask)
            d, dw, db = ops.conv2d_backward(d, payload)
            grads[kind + "_w"] = dw
            grads[kind + "_b"] = db
    return grads


def forward_pass(weights: NetworkWeights, x) -> np.ndarray:
    """Predict a (H, W) map from one (C, H, W) input tensor."""
    data = _as_chw(weights, x)
    h, w = data.shape[1], data.shape[2]
    padded, _ = ops.pad_to_multiple(data[None, ...], weights.config.divisor)
    out, _ = forward_batch(weights, padded)
    return out[0, 0, :h, :w]


def backward_pass(weights: NetworkWeights, x, grad_out: np.ndarray) -> dict:
    """Gradients of a scalar loss wrt every parameter for one input.

    ``grad_out`` is the upstream gradient on the (H, W) prediction; the
    forward intermediates are recomputed and cached internally.
    """
    data = _as_chw(weights, x)
    h, w = data.shape[1], data.shape[2]
    if grad_out.shape != (h, w):
        raise ValueError(f"grad_out shape {grad_out.shape} != prediction shape {(h, w)}")
    padded, _ = ops.pad_to_multiple(data[None, ...], weights.config.divisor)
    out, cache = forward_batch(weights, padded, want_cache=True)
    dy = np.zeros_like(out)
    dy[0, 0, :h, :w] = grad_out
    return backward_batch(weights, cache, dy)


def _as_chw(weights: NetworkWeights, x) -> np.ndarray:
    data = x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else x
    data = np.asarray(data, dtype=weights.params["head_w"].dtype)
    if data.ndim != 3:
        raise ValueError(f"expected a (C, H, W) tensor, got shape {data.shape}")
    return data
