"""Pixel cross-entropy, region mutual information loss and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import avg_pool2d
from .tensor import ContractError, DimensionError, Tensor


@dataclass(frozen=True)
class LossConfig:
    """``matrix_epsilon`` is added to M and floors its eigenvalues.
    ``inverse_ridge`` regularises the prediction covariance before inversion.

    The ridge also stops RMI from rewarding arbitrarily small prediction
    variations (without it the term is scale-free in P and can trap training
    in an all-background solution).  A perfect prediction gives exactly
    M = epsilon * I only in the limit inverse_ridge -> 0.
    """

    lam: float = 0.5
    rmi_region_side: int = 3
    rmi_downsample: int = 2
    matrix_epsilon: float = 1e-3
    inverse_ridge: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        r = self.rmi_region_side
        if r < 1 or r % 2 == 0:
            raise ValueError(f"RMI region side must be odd and >= 1, got {r}")
        if self.rmi_downsample < 1:
            raise ValueError("RMI downsample factor must be >= 1")
        if self.matrix_epsilon <= 0 or self.inverse_ridge <= 0:
            raise ValueError("RMI epsilons must be positive")

    @property
    def region_dim(self):
        return self.rmi_region_side ** 2


def _check_binary(target):
    t = np.asarray(target)
    if not np.all((t == 0) | (t == 1)):
        raise ContractError("target mask must contain only 0 and 1")
    return t


def one_hot(mask, num_classes=2, dtype=np.float64):
    """(B, H, W) class indices -> (B, C, H, W)."""
    m = np.asarray(mask).astype(np.int64)
    return np.stack([(m == c) for c in range(num_classes)], axis=1).astype(dtype)


def cross_entropy(logits: Tensor, target_mask) -> Tensor:
    """Mean over batch and pixels of -log softmax(logits)[target]."""
    t = _check_binary(target_mask)
    if logits.ndim != 4 or logits.shape[1] != 2 or logits.shape[0] != t.shape[0] or logits.shape[2:] != t.shape[1:]:
        raise DimensionError(f"logits {logits.shape} do not match target {t.shape}")
    logp = T.log_softmax(logits, axis=1)
    picked = T.sum(logp * one_hot(t, 2, logits.dtype), axis=1)
    return -T.mean(picked)


def neighborhoods(x: Tensor, r: int) -> Tensor:
    """Stack every r x r neighbourhood: (B, C, H, W) -> (B, C, r*r, N)."""
    b, c, h, w = x.shape
    ho, wo = h - r + 1, w - r + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"map {h}x{w} is smaller than the {r}x{r} region")
    xd = x.data
    out = np.empty((b, c, r * r, ho * wo), dtype=xd.dtype)
    for i in range(r):
        for j in range(r):
            out[:, :, i * r + j] = xd[:, :, i : i + ho, j : j + wo].reshape(b, c, -1)

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(r):
            for j in range(r):
                gx[:, :, i : i + ho, j : j + wo] += g[:, :, i * r + j].reshape(b, c, ho, wo)
        return (gx,)

    return T._make(out, (x,), bw, "neighborhoods")


def _to64(x: Tensor) -> Tensor:
    if x.dtype == np.float64:
        return x
    src = x.dtype
    return T._make(x.data.astype(np.float64), (x,), lambda g: (g.astype(src),), "astype")


def rmi_per_sample(prob: Tensor, target_onehot, cfg: LossConfig = LossConfig()) -> Tensor:
    """RMI term for each sample, summed over classes: shape (B,).

    Always evaluated in float64; the 9x9 covariance algebra is too fragile in
    single precision.
    """
    y = np.asarray(target_onehot.data if isinstance(target_onehot, Tensor) else target_onehot, dtype=np.float64)
    if prob.shape != y.shape:
        raise DimensionError(f"prob {prob.shape} and target {y.shape} differ")
    if prob.shape[1] != 2:
        raise DimensionError(f"RMI expects two classes, got {prob.shape[1]}")
    d = cfg.region_dim
    p = avg_pool2d(_to64(prob), cfg.rmi_downsample)
    yv = neighborhoods(avg_pool2d(Tensor(y), cfg.rmi_downsample), cfg.rmi_region_side).data
    pv = neighborhoods(p, cfg.rmi_region_side)
    n = yv.shape[-1]

    yc = yv - yv.mean(axis=-1, keepdims=True)
    pc = pv - T.mean(pv, axis=-1, keepdims=True)
    sigma_y = Tensor(yc @ np.swapaxes(yc, -1, -2) / n)
    sigma_p = T.matmul(pc, T.swap_last(pc)) * (1.0 / n)
    cov_yp = T.matmul(Tensor(yc), T.swap_last(pc)) * (1.0 / n)

    eye = np.eye(d)
    inv_p = T.inverse(sigma_p + cfg.inverse_ridge * eye)
    m = sigma_y - T.matmul(T.matmul(cov_yp, T.swap_last(inv_p)), T.swap_last(cov_yp)) + cfg.matrix_epsilon * eye
    per_class = T.trace_log_sym(m, cfg.matrix_epsilon) * (1.0 / (2 * d))
    return T.sum(per_class, axis=1)


def rmi_loss(prob: Tensor, target_onehot, cfg: LossConfig = LossConfig()) -> Tensor:
    return T.mean(rmi_per_sample(prob, target_onehot, cfg))


def combined_loss(logits: Tensor, target_mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """lam * CE + (1 - lam) * RMI on softmax probabilities; a zero weight skips its term."""
    t = _check_binary(target_mask)
    lam = cfg.lam
    if lam == 1.0:
        return cross_entropy(logits, t)
    rmi = rmi_loss(T.softmax(logits, axis=1), one_hot(t, 2), cfg)
    if lam == 0.0:
        return rmi
    return lam * cross_entropy(logits, t) + (1.0 - lam) * rmi
