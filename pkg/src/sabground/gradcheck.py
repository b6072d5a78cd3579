"""Finite-difference gradient suites for every differentiable op.

Each case builds a random float64 instance, differentiates a random linear
functional of the op's output by backprop, and compares against central
differences.  Large tensors are checked on a random subset of coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from . import tensor as T
from .losses import LossConfig, combined_loss, cross_entropy, one_hot, rmi_loss
from .model import GroundingModel, ModelConfig
from .nn import SABConfig
from .tensor import Tensor, finite_difference_gradient, relative_error

TOLERANCE = 1e-4
STEP = 1e-5
MAX_COORDS = 12
MODEL_COORDS = 3
# Central differences at h in float64 resolve a derivative only to about
# 1e-10 * |loss|; below FLOOR_SCALE * |loss| errors are measured against that
# scale rather than against the (tiny) gradient itself.
FLOOR_SCALE = 1e-5
KINK_MARGIN = 1e-4


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    seeds: int

    @property
    def ok(self):
        return self.max_rel_error < TOLERANCE


def gradient_error(loss_fn, tensors, h=STEP, rng=None, max_coords=MAX_COORDS):
    """Worst relative error between backprop and central differences.

    ``loss_fn()`` must rebuild the graph from the current ``.data`` of
    ``tensors``; finite differences perturb those buffers in place.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss = loss_fn()
    floor = max(1e-6, FLOOR_SCALE * max(1.0, abs(float(loss.data))))
    T.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        if rng is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = np.arange(flat.size)
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            old = flat[i]

            def f(v, i=i):
                flat[i] = v[0]
                return float(loss_fn().data)

            numeric[j] = finite_difference_gradient(f, np.array([old]), h)[0]
            flat[i] = old
        worst = max(worst, relative_error(a.reshape(-1)[coords], numeric, floor))
    return worst


def _projection(rng, shape):
    return rng.standard_normal(shape)


def _project(out, weights):
    return T.sum(out * weights)


def _randomize(module, rng, scale=0.5):
    for p in module.parameters():
        p.data = rng.normal(0.0, scale, size=p.data.shape)


# -- cases -------------------------------------------------------------------
# Each case takes an rng and returns the worst error for one random instance.

def case_matmul(rng):
    a, b = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 2)))
    w = _projection(rng, (3, 2))
    return gradient_error(lambda: _project(T.matmul(a, b), w), [a, b], rng=rng)


def case_linear(rng):
    layer = nn.Linear(5, 4, seed=int(rng.integers(1 << 30)))
    _randomize(layer, rng)
    x = Tensor(rng.standard_normal((3, 5)))
    w = _projection(rng, (3, 4))
    return gradient_error(lambda: _project(nn.linear(layer, x), w), [x] + layer.parameters(), rng=rng)


def case_layer_norm(rng):
    p = nn.LayerNorm(6)
    _randomize(p, rng)
    x = Tensor(rng.standard_normal((3, 6)))
    w = _projection(rng, (3, 6))
    return gradient_error(lambda: _project(nn.layer_norm(p, x), w), [x] + p.parameters(), rng=rng)


def case_softmax(rng):
    x = Tensor(rng.standard_normal((3, 5)))
    w = _projection(rng, (3, 5))
    return gradient_error(lambda: _project(nn.softmax(x), w), [x], rng=rng)


def case_se_block(rng):
    block = nn.SEBlock(8, reduction=4, seed=int(rng.integers(1 << 30)))
    _randomize(block, rng)
    x = Tensor(rng.standard_normal((2, 8, 3, 4)))
    w = _projection(rng, x.shape)
    return gradient_error(lambda: _project(block(x), w), [x] + block.parameters(), rng=rng)


SAB_VARIANTS = [
    SABConfig(embed_size=4, channels=6, normalization=n, gate=g, expansion=e)
    for n in ("layernorm", "none") for g in ("softmax", "sigmoid") for e in (True, False)
]


def case_sab(rng, cfg=None):
    cfg = cfg or SAB_VARIANTS[int(rng.integers(len(SAB_VARIANTS)))]
    block = nn.SentenceAttentionBlock(cfg, seed=int(rng.integers(1 << 30)))
    _randomize(block, rng)
    qa = Tensor(rng.standard_normal((2, cfg.qa_width)))
    r = Tensor(rng.standard_normal((2, cfg.channels, 3, 3)))
    w = _projection(rng, r.shape)
    return gradient_error(lambda: _project(nn.sab_forward(block, qa, r, cfg), w), [qa, r] + block.parameters(), rng=rng)


def case_conv2d(rng):
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.integers(0, 2)) if k == 3 else 0
    x = Tensor(rng.standard_normal((2, 3, 5, 5)))
    weight = Tensor(rng.standard_normal((4, 3, k, k)))
    bias = Tensor(rng.standard_normal(4))
    out_shape = nn.conv2d(x, weight, bias, stride, padding).shape
    w = _projection(rng, out_shape)
    return gradient_error(lambda: _project(nn.conv2d(x, weight, bias, stride, padding), w), [x, weight, bias], rng=rng)


def case_upsample(rng):
    x = Tensor(rng.standard_normal((2, 2, 3, 4)))
    w = _projection(rng, (2, 2, 6, 8))
    return gradient_error(lambda: _project(nn.bilinear_upsample2x(x), w), [x], rng=rng)


def _logits_and_target(rng, size=12):
    logits = Tensor(rng.standard_normal((2, 2, size, size)))
    target = np.zeros((2, size, size), dtype=np.uint8)
    for b in range(2):
        y0, x0 = rng.integers(0, size // 2, size=2)
        target[b, y0 : y0 + size // 2, x0 : x0 + size // 2] = 1
    return logits, target


def case_cross_entropy(rng):
    logits, target = _logits_and_target(rng)
    return gradient_error(lambda: cross_entropy(logits, target), [logits], rng=rng)


def case_rmi(rng):
    logits, target = _logits_and_target(rng)
    onehot = one_hot(target)
    return gradient_error(lambda: rmi_loss(T.softmax(logits, axis=1), onehot), [logits], rng=rng)


def case_combined(rng, lam):
    logits, target = _logits_and_target(rng)
    cfg = LossConfig(lam=lam)
    return gradient_error(lambda: combined_loss(logits, target, cfg), [logits], rng=rng)


SMALL_MODEL = ModelConfig(
    channels=(4, 6, 8, 10), stem_channels=4,
    text=replace(ModelConfig().text, embed_size=4),
    sab=SABConfig(embed_size=4),
)


def case_model(rng, lam=0.5, cfg=SMALL_MODEL):
    """Full pipeline on 1x3x32x32.

    Instances where some relu input lies within KINK_MARGIN of zero are
    redrawn: a step of h could cross the kink there and the central
    difference would no longer estimate the one-sided derivative.
    """
    loss_cfg = LossConfig(lam=lam)
    q, a = ["where is the red circle?"], ["red circle"]
    while True:
        model = GroundingModel(replace(cfg, seed=int(rng.integers(1 << 30))))
        _randomize(model, rng, scale=0.3)
        image = Tensor(rng.uniform(0, 1, (1, 3, 32, 32)))
        target = np.zeros((1, 32, 32), dtype=np.uint8)
        y0, x0 = rng.integers(0, 16, size=2)
        target[0, y0 : y0 + 12, x0 : x0 + 12] = 1
        T.watch_relu_kinks()
        model.logits(image, q, a)
        if T.relu_margin() > KINK_MARGIN:
            break
    return gradient_error(
        lambda: combined_loss(model.logits(image, q, a), target, loss_cfg),
        [image] + model.parameters(), rng=rng, max_coords=MODEL_COORDS,
    )


BLOCK_CASES = {
    "matmul": case_matmul,
    "linear": case_linear,
    "layer_norm": case_layer_norm,
    "softmax": case_softmax,
    "se_block": case_se_block,
    "sab_forward": case_sab,
    "conv2d": case_conv2d,
    "bilinear_upsample2x": case_upsample,
}
LOSS_CASES = {
    "cross_entropy": case_cross_entropy,
    "rmi_loss": case_rmi,
    "combined_loss[lam=0]": lambda rng: case_combined(rng, 0.0),
    "combined_loss[lam=0.5]": lambda rng: case_combined(rng, 0.5),
    "combined_loss[lam=1]": lambda rng: case_combined(rng, 1.0),
}
MODEL_CASES = {
    "model[lam=0]": lambda rng: case_model(rng, 0.0),
    "model[lam=0.5]": lambda rng: case_model(rng, 0.5),
    "model[lam=1]": lambda rng: case_model(rng, 1.0),
}
SCOPES = {"block": BLOCK_CASES, "loss": LOSS_CASES, "model": MODEL_CASES}


def run_case(name, fn, seeds=10, base_seed=0) -> CaseResult:
    worst = 0.0
    for s in range(seeds):
        worst = max(worst, fn(np.random.default_rng([base_seed, s])))
    return CaseResult(name, worst, seeds)


def run_scope(scope, seeds=10, base_seed=0) -> list:
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {sorted(SCOPES)}")
    return [run_case(name, fn, seeds, base_seed) for name, fn in SCOPES[scope].items()]
