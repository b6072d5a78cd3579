"""Training and evaluation loops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import batch_arrays
from .losses import combined_loss
from .metrics import mean_iou, rank_correlation
from .model import GroundingModel
from .optim import AdamW, poly_lr

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: GroundingModel
    optimizer: AdamW
    step: int
    history: list = field(default_factory=list)  # dicts with step, lr, loss, miou
    evals: list = field(default_factory=list)  # (step, held-in mIoU)
    best_miou: float = -1.0
    train_miou: float = float("nan")
    slice_miou: float = float("nan")


class NonFiniteLoss(FloatingPointError):
    pass


def build_model(cfg: RunConfig) -> GroundingModel:
    return GroundingModel(cfg.model_config(), dtype=cfg.np_dtype)


def build_optimizer(cfg: RunConfig, model: GroundingModel) -> AdamW:
    o = cfg.optim
    return AdamW(model.named_parameters(), betas=(o.beta1, o.beta2), eps=o.eps, weight_decay=o.weight_decay)


def predict(model, samples, batch_size=32):
    """Binary masks and foreground-minus-background logit maps for every sample."""
    masks, scores = [], []
    for i in range(0, len(samples), batch_size):
        images, qs, ans, _ = batch_arrays(samples[i : i + batch_size], model.dtype)
        logits = model.logits(images, qs, ans).data
        masks.extend((logits[:, 1] > logits[:, 0]).astype(np.uint8))
        scores.extend(logits[:, 1] - logits[:, 0])
    return masks, scores


def evaluate(model, samples, metric="miou", batch_size=32) -> float:
    masks, scores = predict(model, samples, batch_size)
    if metric == "miou":
        return mean_iou(masks, [s.mask for s in samples])
    if metric == "rankcorr":
        return float(np.mean([rank_correlation(sc, s.mask) for sc, s in zip(scores, samples)]))
    raise ValueError(f"unknown metric {metric!r}")


def batch_order(seed: int, n: int, step: int, batch_size: int) -> np.ndarray:
    """Indices of the batch used at ``step``: per-epoch permutations from a seed.

    A function of (seed, step) only, so resumed runs see the same batches.
    """
    per_epoch = max(1, n // batch_size) if n >= batch_size else 1
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    if n < batch_size:
        return np.resize(perm, batch_size)
    return perm[k * batch_size : (k + 1) * batch_size]


def train(
    cfg: RunConfig,
    samples,
    steps=None,
    out_dir=None,
    resume=None,
    on_log=None,
    final_eval=True,
) -> TrainResult:
    """Train from scratch, or continue from the checkpoint at ``resume``.

    ``steps`` is the number of optimizer steps to take in this call; the
    schedule length comes from the config.  With ``out_dir`` the final and
    best (held-in slice mIoU) checkpoints are written there, and the last
    good checkpoint survives a non-finite loss.
    """
    steps = cfg.optim.total_steps if steps is None else steps
    model = build_model(cfg)
    opt = build_optimizer(cfg, model)
    start = 0
    if resume is not None:
        start = load_checkpoint(resume, model, opt).step
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    schedule = cfg.schedule()
    loss_cfg = cfg.loss_config()
    tc = cfg.train
    held_in = samples[: tc.eval_slice]
    result = TrainResult(model, opt, start)

    for step in range(start, start + steps):
        lr = poly_lr(schedule, step)
        idx = batch_order(tc.seed, len(samples), step, tc.batch_size)
        batch = [samples[i] for i in idx]
        images, qs, ans, masks = batch_arrays(batch, model.dtype)
        try:
            logits = model.logits(images, qs, ans)
            loss = combined_loss(logits, masks, loss_cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at step {step}")
            opt.zero_grad()
            T.backward(loss)
            opt.step(lr)  # refuses to touch parameters when a gradient is non-finite
        except FloatingPointError:
            if out:
                # Parameters are still those of the last finite step.
                save_checkpoint(out / "last.ckpt", model, opt, result.step, cfg)
            raise
        result.step = step + 1
        if (step + 1) % tc.log_every == 0 or step == start:
            pred = (logits.data[:, 1] > logits.data[:, 0]).astype(np.uint8)
            rec = {"step": step + 1, "lr": lr, "loss": value, "miou": mean_iou(pred, masks)}
            result.history.append(rec)
            if on_log:
                on_log(rec)
        if (step + 1) % tc.eval_every == 0 or step + 1 == start + steps:
            score = evaluate(model, held_in)
            result.evals.append((step + 1, score))
            if out:
                save_checkpoint(out / "last.ckpt", model, opt, result.step, cfg)
                if score > result.best_miou:
                    save_checkpoint(out / "best.ckpt", model, opt, result.step, cfg)
            result.best_miou = max(result.best_miou, score)
            log.info("step=%d held_in_miou=%.4f", step + 1, score)

    if out:
        save_checkpoint(out / "final.ckpt", model, opt, result.step, cfg)
    if final_eval:
        result.train_miou = evaluate(model, samples)
        result.slice_miou = evaluate(model, held_in)
    return result


def format_record(rec) -> str:
    return f"step={rec['step']} lr={rec['lr']:.6g} loss={rec['loss']:.6f} miou={rec['miou']:.4f}"
