"""AdamW with decoupled weight decay, and the polynomial learning-rate policy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolySchedule:
    base_lr: float = 1e-4
    total_steps: int = 2000
    power: float = 0.9

    def __post_init__(self):
        if self.total_steps < 1 or self.power <= 0:
            raise ValueError(f"invalid schedule {self}")


def poly_lr(schedule: PolySchedule, step: int) -> float:
    """base_lr * (1 - t/T)^p; steps past T give 0."""
    if step < 0:
        raise ValueError("step must be non-negative")
    frac = 1.0 - step / schedule.total_steps
    if frac <= 0.0:
        return 0.0
    return schedule.base_lr * frac ** schedule.power


class AdamW:
    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.params = dict(named_params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr):
        adamw_step(self, lr)

    def state_dict(self):
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state):
        if set(state["m"]) != set(self.params) or set(state["v"]) != set(self.params):
            raise KeyError("optimizer state names do not match the parameters")
        self.t = int(state["t"])
        self.m = {k: np.array(a, dtype=self.params[k].data.dtype) for k, a in state["m"].items()}
        self.v = {k: np.array(a, dtype=self.params[k].data.dtype) for k, a in state["v"].items()}


def adamw_step(opt: AdamW, lr: float) -> None:
    """One in-place update of every parameter.

    Parameters without a gradient are treated as having a zero gradient.  A
    non-finite gradient aborts the whole step before anything is modified.
    """
    grads = {}
    for k, p in opt.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}; step aborted")
        grads[k] = g
    opt.t += 1
    b1, b2, t = opt.beta1, opt.beta2, opt.t
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in opt.params.items():
        g = grads[k]
        m = b1 * opt.m[k] + (1.0 - b1) * g
        v = b2 * opt.v[k] + (1.0 - b2) * g * g
        opt.m[k], opt.v[k] = m, v
        theta = p.data
        update = (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p.data = (theta - lr * update - lr * opt.weight_decay * theta).astype(theta.dtype, copy=False)
