import hashlib
from pathlib import Path

import numpy as np
import pytest

from sabground import pnm
from sabground.data import COLORS, SHAPES, generate_dataset, largest_shape_baseline, read_manifest, shape_mask
from sabground.metrics import mean_iou


def _tree_digest(root: Path):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# -- PGM / PPM ----------------------------------------------------------------

def test_mask_round_trip(tmp_path):
    mask = (np.random.default_rng(0).random((7, 5)) < 0.4).astype(np.uint8)
    pnm.write_mask(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(pnm.read_mask(tmp_path / "m.pgm"), mask)


def test_parse_minimal_p5():
    magic, arr = pnm.parse_pnm(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    assert magic == "P5"
    assert arr.tolist() == [[0, 255], [255, 0]]


def test_header_comments_are_skipped():
    _, arr = pnm.parse_pnm(b"P5\n# made by hand\n1 1\n255\n\x07")
    assert arr.tolist() == [[7]]


def test_maxval_other_than_255_rejected():
    with pytest.raises(pnm.PNMParseError, match="maxval"):
        pnm.parse_pnm(b"P5\n2 2\n15\n" + bytes(4))


def test_truncated_payload_reports_offset():
    with pytest.raises(pnm.PNMParseError, match="byte offset 13"):
        pnm.parse_pnm(b"P5\n2 2\n255\n" + bytes(2))


def test_bad_magic():
    with pytest.raises(pnm.PNMParseError, match="offset 0"):
        pnm.parse_pnm(b"P2\n1 1\n255\n0")


def test_image_round_trip_quantizes(tmp_path):
    img = np.random.default_rng(1).random((3, 4, 6))
    pnm.write_image(tmp_path / "i.ppm", img)
    back = pnm.read_image(tmp_path / "i.ppm")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


# -- synthetic data -----------------------------------------------------------

def test_generation_is_deterministic():
    a, b = generate_dataset(3, 6, 64), generate_dataset(3, 6, 64)
    for x, y in zip(a.samples, b.samples):
        assert x.question == y.question
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)


def test_written_tree_is_byte_identical(tmp_path):
    generate_dataset(1, 5, 64, out_dir=tmp_path / "a")
    generate_dataset(1, 5, 64, out_dir=tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_samples_are_well_formed():
    ds = generate_dataset(2, 40, 64)
    for s in ds.samples:
        assert s.image.shape == (3, 64, 64)
        assert s.mask.shape == (64, 64)
        assert 2 <= len(s.shapes) <= 4
        assert s.mask.sum() >= 16
        matches = [m for _, _, m in s.shapes if np.array_equal(m, s.mask)]
        assert len(matches) == 1
        color, kind = s.answer.split()
        assert color in COLORS and kind in SHAPES
        assert s.question == f"where is the {color} {kind}?"
        # the queried pixels are painted in the queried colour
        np.testing.assert_array_equal(s.image[:, s.mask.astype(bool)].T[0], COLORS[color])
        # shapes never overlap
        total = sum(m.astype(int) for _, _, m in s.shapes)
        assert total.max() == 1
        assert len({c for c, _, _ in s.shapes}) == len(s.shapes)


def test_manifest_round_trip(tmp_path):
    ds = generate_dataset(4, 3, 32, out_dir=tmp_path)
    lines = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert [l.split("\t") for l in lines if not l.startswith("#")] == [list(r) for r in ds.records]
    back = read_manifest(tmp_path)
    assert back.seed == 4 and back.image_size == 32
    for x, y in zip(ds.samples, back.samples):
        assert (x.question, x.answer) == (y.question, y.answer)
        np.testing.assert_array_equal(x.mask, y.mask)
        np.testing.assert_allclose(x.image, y.image, atol=1e-12)


def test_bad_size_rejected():
    with pytest.raises(ValueError):
        generate_dataset(1, 2, 60)
    with pytest.raises(ValueError):
        generate_dataset(1, 0, 64)


def test_shape_masks_have_area():
    for kind in SHAPES:
        assert shape_mask(kind, 32, 32, 6, 64).sum() >= 16


def test_question_is_informative():
    ds = generate_dataset(1, 512, 64)
    score = mean_iou([largest_shape_baseline(s) for s in ds.samples], [s.mask for s in ds.samples])
    assert score < 0.6
