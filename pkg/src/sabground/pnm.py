"""Binary PGM (P5) masks and PPM (P6) images, 8 bits per sample."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMParseError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def _read_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PNMParseError("unexpected end of header", start)
    return buf[start:pos], pos, start


def parse_pnm(buf: bytes):
    """Return (magic, array) where array is (H, W) for P5 and (H, W, 3) for P6."""
    magic, pos, start = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise PNMParseError(f"unsupported magic {magic!r}", start)
    fields = []
    for _ in range(3):
        tok, pos, start = _read_token(buf, pos)
        if not tok.isdigit():
            raise PNMParseError(f"expected an integer, got {tok!r}", start)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PNMParseError(f"maxval must be 255, got {maxval}", start)
    if width < 1 or height < 1:
        raise PNMParseError(f"invalid size {width}x{height}", start)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PNMParseError("missing whitespace after header", pos)
    pos += 1
    depth = 1 if magic == b"P5" else 3
    need = width * height * depth
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PNMParseError(f"truncated payload: need {need} bytes, have {len(payload)}", pos + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if depth == 1 else (height, width, 3)
    return magic.decode(), arr.reshape(shape).copy()


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_mask(path, mask) -> None:
    """Binary mask -> P5 with foreground 255."""
    Path(path).write_bytes(encode_pgm(np.where(np.asarray(mask) > 0, 255, 0)))


def read_mask(path) -> np.ndarray:
    magic, arr = parse_pnm(Path(path).read_bytes())
    if magic != "P5":
        raise PNMParseError(f"{path} is not a P5 mask", 0)
    return (arr >= 128).astype(np.uint8)


def write_gray(path, values) -> None:
    """Values in [0, 1] -> 8-bit P5."""
    Path(path).write_bytes(encode_pgm(quantize(values)))


def quantize(values) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image) -> None:
    """(3, H, W) floats in [0, 1] -> P6."""
    Path(path).write_bytes(encode_ppm(quantize(np.asarray(image).transpose(1, 2, 0))))


def read_image(path) -> np.ndarray:
    magic, arr = parse_pnm(Path(path).read_bytes())
    if magic != "P6":
        raise PNMParseError(f"{path} is not a P6 image", 0)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
