"""Toy convolutional backbone emitting a four-level feature pyramid."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import DimensionError

SCALES = (4, 8, 16, 32)


class InputGeometryError(DimensionError):
    pass


class Backbone(Module):
    """Stride-2 stem, then four stages of [3x3 stride 2, 3x3 stride 1], ReLU after each conv.

    Stage outputs land at strides 4, 8, 16 and 32, fine to coarse.
    """

    def __init__(self, channels=(16, 32, 64, 128), stem_channels=16, in_channels=3, seed=0, dtype=np.float64):
        if len(channels) != 4 or any(b <= a for a, b in zip(channels, channels[1:])):
            raise ValueError(f"need four strictly increasing channel counts, got {channels}")
        self.channels = tuple(channels)
        self.stem = Conv2d(in_channels, stem_channels, 3, stride=2, padding=1, seed=seed, name="backbone.stem", dtype=dtype, init="relu")
        self.stages = []
        cin = stem_channels
        for i, cout in enumerate(channels):
            down = Conv2d(cin, cout, 3, stride=2, padding=1, seed=seed, name=f"backbone.stage{i}.down", dtype=dtype, init="relu")
            conv = Conv2d(cout, cout, 3, stride=1, padding=1, seed=seed, name=f"backbone.stage{i}.conv", dtype=dtype, init="relu")
            self.stages.append(_Stage(down, conv))
            cin = cout

    def __call__(self, image):
        return backbone_forward(image, self)


class _Stage(Module):
    def __init__(self, down, conv):
        self.down = down
        self.conv = conv

    def __call__(self, x):
        return T.relu(self.conv(T.relu(self.down(x))))


def check_geometry(shape):
    if len(shape) != 4:
        raise InputGeometryError(f"image batch must be (batch, 3, H, W), got {shape}")
    h, w = shape[2], shape[3]
    if h % 32 or w % 32 or h == 0 or w == 0:
        raise InputGeometryError(f"image height and width must be positive multiples of 32, got {h}x{w}")


def backbone_forward(image, params: Backbone):
    check_geometry(image.shape)
    x = T.relu(params.stem(image))
    levels = []
    for stage in params.stages:
        x = stage(x)
        levels.append(x)
    return levels
