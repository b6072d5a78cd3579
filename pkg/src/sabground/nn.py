"""Layers, convolution/resampling ops and the two channel-attention blocks."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import DimensionError, Tensor


def layer_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, layer name) so init does not depend on build order."""
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


# Bound multipliers for uniform(-g/sqrt(fan_in), g/sqrt(fan_in)).
INIT_GAIN = {"default": 1.0, "relu": math.sqrt(6.0), "linear": math.sqrt(3.0)}


def uniform_init(rng, shape, fan_in, dtype, gain=1.0):
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Holds named Tensor parameters and child modules."""

    def named_parameters(self, prefix=""):
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(prefix + key + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, in_features, out_features, seed=0, name="linear", dtype=np.float64):
        rng = layer_rng(seed, name)
        self.weight = Tensor(uniform_init(rng, (out_features, in_features), in_features, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return linear(self, x)


class LayerNorm(Module):
    def __init__(self, n, eps=1e-5, dtype=np.float64):
        if eps <= 0:
            raise ValueError("LayerNorm epsilon must be positive")
        self.gain = Tensor(np.ones(n, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(self, x)


def linear(layer, x):
    """``x @ weight.T + bias`` for a batch of row vectors."""
    if x.ndim != 2 or x.shape[1] != layer.weight.shape[1]:
        raise DimensionError(f"linear expects (batch, {layer.weight.shape[1]}), got {x.shape}")
    return T.matmul(x, T.transpose(layer.weight)) + layer.bias


def layer_norm(p, x):
    n = x.shape[-1]
    if n < 2:
        raise DimensionError("layer_norm needs at least two features per row")
    if p.eps <= 0:
        raise ValueError("LayerNorm epsilon must be positive")
    centered = x - T.mean(x, axis=-1, keepdims=True)
    var = T.mean(T.square(centered), axis=-1, keepdims=True)
    return centered / T.sqrt(var + p.eps) * p.gain + p.shift


def softmax(x):
    return T.softmax(x, axis=-1)


# -- convolution and resampling ---------------------------------------------

def conv_output_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of NCHW input with an (out, in, k, k) kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2 or k not in (1, 3):
        raise DimensionError(f"conv2d supports square 1x1 or 3x3 kernels, got {k}x{k2}")
    if wcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d needs stride >= 1 and padding >= 0")
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d geometry gives empty output for input {x.shape}")

    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # (b, cin, ho, wo, k, k) -> (b, ho, wo, cin*k*k)
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho, wo, cin * k * k)
    wmat = weight.data.reshape(cout, -1)
    out = (cols @ wmat.T).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)
    padded_shape = xd.shape

    def bw(g):
        gm = g.transpose(0, 2, 3, 1)  # (b, ho, wo, cout)
        gw = np.tensordot(gm, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(b, ho, wo, cin, k, k)
            gxp = np.zeros(padded_shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return T._make(out, parents, bw, "conv2d")


def interpolation_matrix(n, factor):
    """Rows map each of ``factor * n`` output cells onto the ``n`` inputs.

    Half-pixel centres: source = (t + 0.5) / factor - 0.5, clamped to [0, n-1].
    """
    m = np.zeros((factor * n, n))
    for t in range(factor * n):
        s = min(max((t + 0.5) / factor - 0.5, 0.0), n - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n - 1)
        frac = s - i0
        m[t, i0] += 1.0 - frac
        m[t, i1] += frac
    return m


def bilinear_upsample(x, factor):
    if x.ndim != 4:
        raise DimensionError(f"upsample expects NCHW input, got {x.shape}")
    if factor == 1:
        return x
    _, _, h, w = x.shape
    uh = interpolation_matrix(h, factor).astype(x.dtype)
    uw = interpolation_matrix(w, factor).astype(x.dtype)
    out = np.einsum("ph,bchw,qw->bcpq", uh, x.data, uw, optimize=True)

    def bw(g):
        return (np.einsum("ph,bcpq,qw->bchw", uh, g, uw, optimize=True),)

    return T._make(out, (x,), bw, "upsample")


def bilinear_upsample2x(x):
    return bilinear_upsample(x, 2)


def avg_pool2d(x, k):
    """Non-overlapping k x k mean pooling; trailing rows/cols that do not fill a window are dropped."""
    if k == 1:
        return x
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise DimensionError(f"avg_pool2d window {k} larger than input {x.shape}")
    xd = x.data[:, :, : ho * k, : wo * k]
    out = xd.reshape(b, c, ho, k, wo, k).mean(axis=(3, 5))

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, : ho * k, : wo * k] = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)

    return T._make(out, (x,), bw, "avg_pool2d")


def global_avg_pool(x):
    return T.mean(x, axis=(2, 3))


def channel_gate(x, gate):
    """Scale each channel of NCHW ``x`` by the matching column of ``gate`` (batch, C)."""
    b, c = gate.shape
    return x * T.reshape(gate, (b, c, 1, 1))


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, seed=0, name="conv", dtype=np.float64, bias=True, init="default"):
        rng = layer_rng(seed, name)
        fan_in = cin * k * k
        self.weight = Tensor(uniform_init(rng, (cout, cin, k, k), fan_in, dtype, INIT_GAIN[init]), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


# -- attention blocks --------------------------------------------------------

@dataclass(frozen=True)
class SABConfig:
    """Switches for the sentence attention block and its ablations.

    ``attention="self"`` selects the question-blind squeeze-and-excitation
    baseline; the remaining flags only apply to cross-attention.
    """

    embed_size: int = 32
    channels: int = 16
    attention: str = "cross"
    normalization: str = "layernorm"
    gate: str = "softmax"
    expansion: bool = True
    expansion_factor: int = 2
    reduction: int = 4

    def __post_init__(self):
        if self.embed_size < 1 or self.channels < 1 or self.expansion_factor < 1 or self.reduction < 1:
            raise ValueError(f"SABConfig sizes must be positive: {self}")
        if self.attention not in ("cross", "self"):
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if self.normalization not in ("layernorm", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.gate not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown gate {self.gate!r}")

    @property
    def qa_width(self):
        return 2 * self.embed_size

    @property
    def hidden_width(self):
        if self.expansion:
            return self.expansion_factor * self.qa_width
        return max(1, math.ceil(self.qa_width / self.reduction))

    def with_channels(self, channels):
        return replace(self, channels=channels)


def se_hidden_width(channels, reduction=4):
    return max(1, math.ceil(channels / reduction))


class SEBlock(Module):
    """Squeeze-and-excitation: gate channels from their own global average."""

    def __init__(self, channels, reduction=4, seed=0, name="se", dtype=np.float64):
        hidden = se_hidden_width(channels, reduction)
        self.fc1 = Linear(channels, hidden, seed, name + ".fc1", dtype)
        self.fc2 = Linear(hidden, channels, seed, name + ".fc2", dtype)

    def gate(self, x):
        return T.sigmoid(self.fc2(T.relu(self.fc1(global_avg_pool(x)))))

    def __call__(self, x, qa=None):
        return channel_gate(x, self.gate(x))


def se_block(x, params):
    return params(x)


class SentenceAttentionBlock(Module):
    """Channel gate computed from the joint question/answer embedding.

    With the default config this is softmax(fc2(relu(ln(fc1(qa))))) applied
    channel-wise to the region features.
    """

    def __init__(self, cfg: SABConfig, seed=0, name="sab", dtype=np.float64):
        if cfg.attention != "cross":
            raise ValueError("SentenceAttentionBlock is cross-attention only; use SEBlock for self-attention")
        self.cfg = cfg
        self.fc1 = Linear(cfg.qa_width, cfg.hidden_width, seed, name + ".fc1", dtype)
        self.ln = LayerNorm(cfg.hidden_width, dtype=dtype) if cfg.normalization == "layernorm" else None
        self.fc2 = Linear(cfg.hidden_width, cfg.channels, seed, name + ".fc2", dtype)

    def gate(self, qa):
        cfg = self.cfg
        if qa.ndim != 2 or qa.shape[1] != cfg.qa_width:
            raise DimensionError(f"QA embedding must be (batch, {cfg.qa_width}), got {qa.shape}")
        h = self.fc1(qa)
        if self.ln is not None:
            h = self.ln(h)
        logits = self.fc2(T.relu(h))
        return T.softmax(logits, axis=-1) if cfg.gate == "softmax" else T.sigmoid(logits)

    def __call__(self, x, qa):
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(f"region features must have {self.cfg.channels} channels, got {x.shape}")
        if x.shape[0] != qa.shape[0]:
            raise DimensionError(f"batch mismatch between regions {x.shape} and QA {qa.shape}")
        return channel_gate(x, self.gate(qa))


def sab_forward(params, qa, r_i, cfg=None):
    if cfg is not None and cfg != params.cfg:
        raise ValueError("config does not match the block's parameters")
    return params(r_i, qa)


def make_attention(cfg: SABConfig, seed=0, name="sab", dtype=np.float64):
    if cfg.attention == "self":
        return SEBlock(cfg.channels, cfg.reduction, seed, name, dtype)
    return SentenceAttentionBlock(cfg, seed, name, dtype)
