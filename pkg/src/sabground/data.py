"""Synthetic "where is the {color} {shape}?" grounding data and its on-disk manifest."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm

MANIFEST_VERSION = "sabground-manifest-v1"
MANIFEST_NAME = "manifest.tsv"

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
SHAPES = ("circle", "square", "triangle")
BACKGROUND = 0.5


@dataclass(frozen=True)
class DataConfig:
    min_shapes: int = 2
    max_shapes: int = 4
    min_radius: float = 0.09  # fraction of image side
    max_radius: float = 0.17
    margin: int = 2
    max_tries: int = 200


@dataclass
class GroundingSample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    question: str
    answer: str
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    shapes: list = field(default_factory=list)  # (color, shape, mask) for every rendered shape


@dataclass
class DatasetManifest:
    seed: int
    image_size: int
    samples: list
    records: list = field(default_factory=list)  # (image_path, mask_path, question, answer)
    version: str = MANIFEST_VERSION


class PlacementError(RuntimeError):
    pass


def shape_mask(kind, cy, cx, r, size):
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy + 0.5 - cy
    dx = xx + 0.5 - cx
    if kind == "circle":
        inside = dx * dx + dy * dy <= r * r
    elif kind == "square":
        half = 0.85 * r
        inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    elif kind == "triangle":
        # apex up; base at dy = 0.75 r, half-width r
        top, base, half = -r, 0.75 * r, r
        t = (dy - top) / (base - top)
        inside = (dy >= top) & (dy <= base) & (np.abs(dx) <= t * half)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return inside


def _dilate(mask, k):
    out = mask.copy()
    for _ in range(k):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _render(rng, size, cfg: DataConfig):
    n = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    colors = [list(COLORS)[i] for i in rng.permutation(len(COLORS))[:n]]
    occupied = np.zeros((size, size), dtype=bool)
    image = np.full((3, size, size), BACKGROUND)
    placed = []
    for color in colors:
        kind = SHAPES[int(rng.integers(len(SHAPES)))]
        for _ in range(cfg.max_tries):
            r = rng.uniform(cfg.min_radius, cfg.max_radius) * size
            cy = rng.uniform(r, size - r)
            cx = rng.uniform(r, size - r)
            m = shape_mask(kind, cy, cx, r, size)
            if m.sum() >= 16 and not (_dilate(m, cfg.margin) & occupied).any():
                break
        else:
            raise PlacementError(f"could not place {color} {kind}")
        occupied |= m
        image[:, m] = np.asarray(COLORS[color])[:, None]
        placed.append((color, kind, m.astype(np.uint8)))
    return image, placed


def make_sample(seed, index, size, cfg: DataConfig = DataConfig()) -> GroundingSample:
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, index, attempt])
        try:
            image, placed = _render(rng, size, cfg)
        except PlacementError:
            attempt += 1
            continue
        color, kind, mask = placed[int(rng.integers(len(placed)))]
        # Round-trip through 8 bits so in-memory samples equal what is written to disk.
        image = np.rint(image * 255.0) / 255.0
        return GroundingSample(image, f"where is the {color} {kind}?", f"{color} {kind}", mask, placed)


def generate_dataset(seed: int, n_samples: int, image_size: int, cfg: DataConfig = DataConfig(), out_dir=None) -> DatasetManifest:
    if image_size < 32 or image_size % 32:
        raise ValueError(f"image size must be a positive multiple of 32, got {image_size}")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    samples = [make_sample(seed, i, image_size, cfg) for i in range(n_samples)]
    manifest = DatasetManifest(seed, image_size, samples)
    if out_dir is not None:
        write_dataset(manifest, out_dir)
    return manifest


def write_dataset(manifest: DatasetManifest, out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = [f"# {manifest.version}", f"# seed={manifest.seed} count={len(manifest.samples)} size={manifest.image_size}"]
    manifest.records = []
    for i, s in enumerate(manifest.samples):
        img_rel, mask_rel = f"images/{i:05d}.ppm", f"masks/{i:05d}.pgm"
        pnm.write_image(out / img_rel, s.image)
        pnm.write_mask(out / mask_rel, s.mask)
        manifest.records.append((img_rel, mask_rel, s.question, s.answer))
        lines.append("\t".join(manifest.records[-1]))
    path = out / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _manifest_path(path) -> Path:
    p = Path(path)
    return p / MANIFEST_NAME if p.is_dir() else p


def read_manifest(path) -> DatasetManifest:
    """Load a manifest and every file it references."""
    path = _manifest_path(path)
    root = path.parent
    seed, size, version = -1, 0, None
    records, samples = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("sabground-manifest"):
                version = body
            for item in body.split():
                key, _, val = item.partition("=")
                if key == "seed":
                    seed = int(val)
                elif key == "size":
                    size = int(val)
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        img_rel, mask_rel, q, a = parts
        image = pnm.read_image(root / img_rel)
        mask = pnm.read_mask(root / mask_rel)
        if mask.shape != image.shape[1:]:
            raise ValueError(f"{path}:{lineno}: mask {mask.shape} does not match image {image.shape}")
        records.append((img_rel, mask_rel, q, a))
        samples.append(GroundingSample(image, q, a, mask))
    if version != MANIFEST_VERSION:
        raise ValueError(f"{path}: missing or unknown manifest version {version!r}")
    if not samples:
        raise ValueError(f"{path}: manifest lists no samples")
    return DatasetManifest(seed, size or samples[0].mask.shape[0], samples, records, version)


def largest_shape_baseline(sample: GroundingSample) -> np.ndarray:
    """Question-blind guess: the mask of the biggest rendered shape."""
    return max(sample.shapes, key=lambda s: int(s[2].sum()))[2]


def batch_arrays(samples, dtype=np.float64):
    images = np.stack([s.image for s in samples]).astype(dtype)
    masks = np.stack([s.mask for s in samples]).astype(np.uint8)
    return images, [s.question for s in samples], [s.answer for s in samples], masks
