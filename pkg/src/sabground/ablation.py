"""Cumulative ablation ladders over attention design and pyramid scales."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .train import evaluate, train

log = logging.getLogger(__name__)

# Each rung toggles exactly one field of the model section relative to the previous rung.
MODIFICATION_LADDER = [
    ("se-baseline", {"attention": "self", "normalization": "none", "gate": "sigmoid", "expansion": False}),
    ("cross-attention", {"attention": "cross"}),
    ("+layernorm", {"normalization": "layernorm"}),
    ("+softmax", {"gate": "softmax"}),
    ("+expansion", {"expansion": True}),
]

SCALE_LADDER = [
    ("1/32", {"scales": (32,)}),
    ("1/32+1/16", {"scales": (32, 16)}),
    ("1/32+1/16+1/8", {"scales": (32, 16, 8)}),
    ("1/32+1/16+1/8+1/4", {"scales": (32, 16, 8, 4)}),
]

LADDERS = {"modifications": MODIFICATION_LADDER, "scales": SCALE_LADDER}


@dataclass
class Rung:
    label: str
    config: RunConfig
    scores: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.scores)) if self.scores else float("nan")

    @property
    def std(self):
        return float(np.std(self.scores)) if self.scores else float("nan")


def ladder_configs(base: RunConfig, ladder: str) -> list:
    """Cumulatively apply the ladder's toggles to ``base``."""
    if ladder not in LADDERS:
        raise ValueError(f"unknown ladder {ladder!r}; choose from {sorted(LADDERS)}")
    rungs, model = [], {}
    for label, toggles in LADDERS[ladder]:
        model = {**model, **toggles}
        rungs.append(Rung(label, base.replace(model=model)))
    return rungs


def config_diff(a: RunConfig, b: RunConfig) -> dict:
    da, db = a.to_dict(), b.to_dict()
    return {
        f"{sec}.{k}": (da[sec][k], db[sec][k])
        for sec in da for k in da[sec] if da[sec][k] != db[sec][k]
    }


def run_ladder(base: RunConfig, ladder: str, train_samples, eval_samples, seeds=5, steps=None, on_result=None) -> list:
    """Train every rung once per seed; score each run by mIoU on ``eval_samples``.

    Runs whose configs coincide (same rung config and seed) are trained once.
    """
    if seeds < 1:
        raise ValueError("need at least one seed")
    rungs = ladder_configs(base, ladder)
    cache = {}
    for rung in rungs:
        for s in range(seeds):
            cfg = rung.config.replace(train={"seed": base.train.seed + s})
            key = cfg.to_json() + f"|{steps}"
            if key not in cache:
                result = train(cfg, train_samples, steps=steps, final_eval=False)
                cache[key] = evaluate(result.model, eval_samples)
            rung.scores.append(cache[key])
            log.info("rung=%s seed=%d miou=%.4f", rung.label, s, rung.scores[-1])
            if on_result:
                on_result(rung, s, rung.scores[-1])
    return rungs


def format_table(rungs, ladder) -> str:
    """Tab-separated table: rung, label, mean, std, per-seed scores."""
    lines = ["rung\tlabel\tmean_miou\tstd_miou\tscores"]
    for i, r in enumerate(rungs):
        lines.append(f"{i}\t{r.label}\t{r.mean:.4f}\t{r.std:.4f}\t" + ",".join(f"{s:.4f}" for s in r.scores))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list:
    rows = []
    for line in text.strip().splitlines()[1:]:
        idx, label, mean, std, scores = line.split("\t")
        rows.append({"rung": int(idx), "label": label, "mean": float(mean), "std": float(std),
                     "scores": [float(s) for s in scores.split(",") if s]})
    return rows
