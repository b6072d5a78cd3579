"""Full grounding network: backbone, per-scale attention, top-down fusion, 2-class head."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .backbone import SCALES, Backbone
from .nn import Conv2d, Module, SABConfig, bilinear_upsample, make_attention
from .tensor import DimensionError, Tensor
from .text import TextConfig, TextEncoder


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (16, 32, 64, 128)
    stem_channels: int = 16
    scales: tuple = (32, 16, 8, 4)
    text: TextConfig = field(default_factory=TextConfig)
    sab: SABConfig = field(default_factory=SABConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "scales", tuple(sorted({int(s) for s in self.scales}, reverse=True)))
        if not self.scales or any(s not in SCALES for s in self.scales):
            raise ValueError(f"scales must be a non-empty subset of {SCALES}, got {self.scales}")
        if self.text.embed_size != self.sab.embed_size:
            raise ValueError("text and attention embedding sizes differ")


@dataclass
class GroundingOutput:
    logits: Tensor
    mask: np.ndarray


class GroundingModel(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        seed = cfg.seed
        self.backbone = Backbone(cfg.channels, cfg.stem_channels, seed=seed, dtype=dtype)
        self.text = TextEncoder(cfg.text, dtype=dtype)
        # One independent block per used scale, coarse to fine.
        self.level_index = [SCALES.index(s) for s in cfg.scales]
        self.attention = [
            make_attention(cfg.sab.with_channels(cfg.channels[i]), seed, f"attention.s{SCALES[i]}", dtype)
            for i in self.level_index
        ]
        self.lateral = [
            Conv2d(cfg.channels[a], cfg.channels[b], 1, seed=seed, name=f"fusion.lateral{k}", dtype=dtype, init="linear")
            for k, (a, b) in enumerate(zip(self.level_index, self.level_index[1:]))
        ]
        finest = self.level_index[-1]
        self.head = Conv2d(cfg.channels[finest], 2, 1, seed=seed, name="fusion.head", dtype=dtype, init="linear")

    @property
    def output_stride(self):
        return self.cfg.scales[-1]

    def encode(self, questions, answers):
        return self.text(list(questions), list(answers))

    def attend(self, pyramid, qa):
        """Gate each used pyramid level; returns the attended levels coarse to fine."""
        return [block(pyramid[i], qa) for block, i in zip(self.attention, self.level_index)]

    def logits(self, image, questions, answers):
        image = _as_input(image, self.dtype)
        pyramid = self.backbone(image)
        qa = self.encode(questions, answers)
        fused = fuse_pyramid(self.attend(pyramid, qa), self.lateral, self.cfg.scales)
        return bilinear_upsample(self.head(fused), self.output_stride)

    def __call__(self, image, questions, answers):
        return model_forward(self, image, questions, answers)


def _as_input(image, dtype):
    if isinstance(image, Tensor):
        return image
    arr = np.asarray(image, dtype=dtype)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr)


def fuse_pyramid(attended, lateral, scales=None):
    """Top-down merge: x <- upsample(conv1x1(x)) + next finer level, from the coarsest level.

    ``attended`` is ordered coarse to fine.  ``scales`` gives each level's
    stride; adjacent levels are assumed a factor of 2 apart when omitted.
    """
    if len(lateral) != len(attended) - 1:
        raise DimensionError(f"{len(attended)} levels need {len(attended) - 1} lateral convs, got {len(lateral)}")
    if scales is None:
        scales = [2 ** (len(attended) - 1 - i) for i in range(len(attended))]
    x = attended[0]
    for conv, finer, s_coarse, s_fine in zip(lateral, attended[1:], scales, scales[1:]):
        y = conv(x)
        if y.shape[1] != finer.shape[1]:
            raise DimensionError(f"lateral conv gives {y.shape[1]} channels, finer level has {finer.shape[1]}")
        x = bilinear_upsample(y, s_coarse // s_fine) + finer
    return x


def model_forward(model: GroundingModel, image, questions, answers) -> GroundingOutput:
    if isinstance(questions, str):
        questions, answers = [questions], [answers]
    logits = model.logits(image, questions, answers)
    return GroundingOutput(logits=logits, mask=predict_mask(logits.data))


def predict_mask(logits: np.ndarray) -> np.ndarray:
    """Argmax over the two logit channels; ties go to background."""
    return (logits[:, 1] > logits[:, 0]).astype(np.uint8)


def visualize_channels(model: GroundingModel, image, level_index: int) -> list:
    """Min-max normalised maps of every channel of one backbone level (first sample).

    Zero-range channels come back all zero.
    """
    if not 0 <= level_index < len(model.cfg.channels):
        raise IndexError(f"level {level_index} out of range 0..{len(model.cfg.channels) - 1}")
    level = model.backbone(_as_input(image, model.dtype))[level_index].data[0]
    maps = []
    for ch in level:
        lo, hi = ch.min(), ch.max()
        maps.append(np.zeros_like(ch) if hi <= lo else (ch - lo) / (hi - lo))
    return maps


def gate_vector(model: GroundingModel, question, answer, scale=None) -> np.ndarray:
    """Channel gate the attention block at ``scale`` (default: finest used) assigns to a QA pair."""
    k = len(model.attention) - 1 if scale is None else model.cfg.scales.index(scale)
    block = model.attention[k]
    if not hasattr(block, "cfg"):
        raise ValueError("self-attention blocks have no sentence gate")
    return block.gate(model.encode([question], [answer])).data[0]


def with_scales(cfg: ModelConfig, scales) -> ModelConfig:
    return replace(cfg, scales=tuple(scales))
