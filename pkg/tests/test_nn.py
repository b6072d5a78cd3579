import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sabground import nn
from sabground import tensor as T
from sabground.gradcheck import SAB_VARIANTS, case_conv2d, case_layer_norm, case_linear, case_sab, case_se_block, case_upsample
from sabground.nn import SABConfig, SentenceAttentionBlock
from sabground.tensor import DimensionError, Tensor

SEEDS = range(10)


def _zero(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


# -- linear -----------------------------------------------------------------

def test_linear_zero_weights_returns_bias():
    layer = nn.Linear(3, 2)
    layer.weight.data[:] = 0
    layer.bias.data[:] = [1.5, -2.0]
    out = layer(Tensor(np.random.default_rng(0).standard_normal((4, 3))))
    np.testing.assert_array_equal(out.data, np.tile([1.5, -2.0], (4, 1)))


def test_linear_identity():
    layer = nn.Linear(3, 3)
    layer.weight.data = np.eye(3)
    x = np.random.default_rng(1).standard_normal((2, 3))
    np.testing.assert_array_equal(layer(Tensor(x)).data, x)


def test_linear_shape_error():
    with pytest.raises(DimensionError):
        nn.Linear(3, 2)(Tensor(np.ones((2, 4))))


def test_linear_init_is_bounded_and_keyed_by_name():
    a, b, c = nn.Linear(16, 8, seed=3, name="x"), nn.Linear(16, 8, seed=3, name="x"), nn.Linear(16, 8, seed=3, name="y")
    assert np.abs(a.weight.data).max() <= 0.25
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, c.weight.data)
    assert not a.bias.data.any()


# -- layer norm -------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = nn.layer_norm(nn.LayerNorm(3), Tensor([[5.0, 5.0, 5.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])


def test_layer_norm_known_row():
    # (x - 2) / sqrt(2/3) with biased variance
    out = nn.layer_norm(nn.LayerNorm(3, eps=1e-12), Tensor([[1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(out.data, [[-1.224745, 0.0, 1.224745]], atol=1e-5)


def test_layer_norm_zero_gain_gives_shift():
    p = nn.LayerNorm(4)
    p.gain.data[:] = 0
    p.shift.data[:] = 0.7
    out = nn.layer_norm(p, Tensor(np.random.default_rng(2).standard_normal((3, 4))))
    np.testing.assert_array_equal(out.data, np.full((3, 4), 0.7))


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        nn.LayerNorm(3, eps=0.0)
    with pytest.raises(DimensionError):
        nn.layer_norm(nn.LayerNorm(1), Tensor([[1.0]]))


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_standardizes_rows(seed):
    x = np.random.default_rng(seed).normal(3.0, 4.0, (5, 16))
    out = nn.layer_norm(nn.LayerNorm(16, eps=1e-12), Tensor(x)).data
    assert np.abs(out.mean(axis=1)).max() <= 1e-9
    assert np.abs(out.var(axis=1) - 1.0).max() <= 1e-6


# -- softmax ----------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(nn.softmax(Tensor([[1.0, 1.0, 1.0, 1.0]])).data, [[0.25] * 4], atol=1e-15)


def test_softmax_log3():
    np.testing.assert_allclose(nn.softmax(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_softmax_shift_invariance_and_rows_sum_to_one(seed, c):
    x = np.random.default_rng(seed).normal(0, 3, (3, 7))
    a = nn.softmax(Tensor(x)).data
    b = nn.softmax(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-9
    assert (a > 0).all()


# -- squeeze-and-excitation -------------------------------------------------

def test_se_zero_params_halves_input():
    block = nn.SEBlock(8)
    _zero(block)
    x = np.random.default_rng(0).standard_normal((2, 8, 3, 3))
    np.testing.assert_allclose(nn.se_block(Tensor(x), block).data, 0.5 * x, atol=1e-15)


def test_se_zero_input_gives_zero():
    block = nn.SEBlock(8, seed=4)
    assert not nn.se_block(Tensor(np.zeros((1, 8, 2, 2))), block).data.any()


def test_se_bottleneck_rounds_up():
    assert nn.se_hidden_width(6, 4) == 2
    assert nn.se_hidden_width(3, 4) == 1
    assert nn.SEBlock(6).fc1.weight.shape == (2, 6)


# -- sentence attention block -----------------------------------------------

def _one_hot_block(k, channels=5, embed=3, margin=40.0):
    cfg = SABConfig(embed_size=embed, channels=channels)
    block = SentenceAttentionBlock(cfg)
    _zero(block)
    block.fc2.bias.data[k] = margin
    return cfg, block


def test_sab_one_hot_gate_keeps_only_channel_k():
    cfg, block = _one_hot_block(k=2)
    rng = np.random.default_rng(0)
    r = rng.standard_normal((2, 5, 4, 4))
    out = nn.sab_forward(block, Tensor(rng.standard_normal((2, 6))), Tensor(r), cfg).data
    assert np.abs(out[:, 2] - r[:, 2]).max() < 1e-9
    assert np.abs(np.delete(out, 2, axis=1)).max() < 1e-9


def test_sab_zero_params_uniform_gate():
    cfg = SABConfig(embed_size=3, channels=4)
    block = SentenceAttentionBlock(cfg)
    _zero(block)
    r = np.random.default_rng(1).standard_normal((2, 4, 3, 3))
    out = nn.sab_forward(block, Tensor(np.ones((2, 6))), Tensor(r), cfg).data
    np.testing.assert_allclose(out, r / 4, atol=1e-15)


def test_sab_rejects_wrong_embedding_width():
    cfg = SABConfig(embed_size=3, channels=4)
    block = SentenceAttentionBlock(cfg)
    with pytest.raises(DimensionError):
        block(Tensor(np.ones((1, 4, 2, 2))), Tensor(np.ones((1, 5))))
    with pytest.raises(DimensionError):
        block(Tensor(np.ones((1, 3, 2, 2))), Tensor(np.ones((1, 6))))


def test_sab_hidden_widths():
    assert SABConfig(embed_size=32).hidden_width == 128
    assert SABConfig(embed_size=32, expansion=False).hidden_width == 16
    block = SentenceAttentionBlock(SABConfig(embed_size=32, channels=64))
    assert block.fc1.weight.shape == (128, 64)
    assert block.fc2.weight.shape == (64, 128)


@pytest.mark.parametrize("cfg", SAB_VARIANTS, ids=lambda c: f"{c.normalization}-{c.gate}-{'exp' if c.expansion else 'bottleneck'}")
def test_sab_gate_range_and_sum(cfg):
    block = SentenceAttentionBlock(cfg, seed=9)
    gate = block.gate(Tensor(np.random.default_rng(2).standard_normal((4, cfg.qa_width)))).data
    assert ((gate > 0) & (gate < 1)).all()
    if cfg.gate == "softmax":
        assert np.abs(gate.sum(axis=1) - 1).max() < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_sab_is_linear_in_regions(seed):
    rng = np.random.default_rng(seed)
    cfg = SABConfig(embed_size=4, channels=6)
    block = SentenceAttentionBlock(cfg, seed=seed)
    qa = Tensor(rng.standard_normal((2, 8)))
    r1, r2 = rng.standard_normal((2, 2, 6, 3, 3))
    alpha, beta = rng.standard_normal(2)
    lhs = block(Tensor(alpha * r1 + beta * r2), qa).data
    rhs = alpha * block(Tensor(r1), qa).data + beta * block(Tensor(r2), qa).data
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_sab_channel_selectivity():
    rng = np.random.default_rng(7)
    cfg = SABConfig(embed_size=4, channels=6)
    block = SentenceAttentionBlock(cfg, seed=1)
    qa = Tensor(rng.standard_normal((1, 8)))
    r = rng.standard_normal((1, 6, 3, 3))
    perturbed = r.copy()
    perturbed[:, 4] += rng.standard_normal((3, 3))
    a, b = block(Tensor(r), qa).data, block(Tensor(perturbed), qa).data
    np.testing.assert_array_equal(np.delete(a, 4, axis=1), np.delete(b, 4, axis=1))


# -- conv and resampling ----------------------------------------------------

def test_conv1x1_identity():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(nn.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv3x3_ones_on_constant_image():
    v, cin = 0.75, 2
    out = nn.conv2d(Tensor(np.full((1, cin, 5, 5), v)), Tensor(np.ones((1, cin, 3, 3))))
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_allclose(out.data, 9 * v * cin)


def test_conv_geometry():
    x = Tensor(np.zeros((1, 3, 9, 7)))
    assert nn.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))), stride=2, padding=1).shape == (1, 4, 5, 4)
    with pytest.raises(DimensionError):
        nn.conv2d(x, Tensor(np.zeros((4, 2, 3, 3))))
    with pytest.raises(DimensionError):
        nn.conv2d(x, Tensor(np.zeros((4, 3, 5, 5))))


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(3)
    x, w, b = rng.standard_normal((1, 2, 5, 6)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    out = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref[0, o, i, j] = (xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def _bilinear_oracle(img, factor=2):
    """Scalar evaluation of the half-pixel formula, one target cell at a time."""
    h, w = img.shape
    out = np.zeros((factor * h, factor * w))
    for ty in range(factor * h):
        sy = min(max((ty + 0.5) / factor - 0.5, 0), h - 1)
        y0 = int(math.floor(sy)); y1 = min(y0 + 1, h - 1); fy = sy - y0
        for tx in range(factor * w):
            sx = min(max((tx + 0.5) / factor - 0.5, 0), w - 1)
            x0 = int(math.floor(sx)); x1 = min(x0 + 1, w - 1); fx = sx - x0
            top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
            bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
            out[ty, tx] = (1 - fy) * top + fy * bot
    return out


def test_upsample_constant():
    out = nn.bilinear_upsample2x(Tensor(np.full((1, 2, 3, 4), 2.5))).data
    np.testing.assert_allclose(out, 2.5, atol=1e-15)


def test_upsample_single_pixel_replicates():
    np.testing.assert_array_equal(nn.bilinear_upsample2x(Tensor([[[[7.0]]]])).data, np.full((1, 1, 2, 2), 7.0))


def test_upsample_2x2_matches_formula():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    expected = np.array([
        [1.0, 1.25, 1.75, 2.0],
        [1.5, 1.75, 2.25, 2.5],
        [2.5, 2.75, 3.25, 3.5],
        [3.0, 3.25, 3.75, 4.0],
    ])
    np.testing.assert_allclose(_bilinear_oracle(img), expected, atol=1e-15)
    np.testing.assert_allclose(nn.bilinear_upsample2x(Tensor(img[None, None])).data[0, 0], expected, atol=1e-15)


@pytest.mark.parametrize("factor", [2, 4, 8])
def test_upsample_random_matches_formula(factor):
    img = np.random.default_rng(factor).standard_normal((3, 5))
    out = nn.bilinear_upsample(Tensor(img[None, None]), factor).data[0, 0]
    np.testing.assert_allclose(out, _bilinear_oracle(img, factor), atol=1e-12)


# -- gradient checks ----------------------------------------------------------

@pytest.mark.parametrize("case", [case_linear, case_layer_norm, case_se_block, case_sab, case_conv2d, case_upsample],
                         ids=lambda f: f.__name__)
@pytest.mark.parametrize("seed", SEEDS)
def test_block_gradients(case, seed):
    assert case(np.random.default_rng([100, seed])) < 1e-4


@pytest.mark.parametrize("cfg", SAB_VARIANTS, ids=lambda c: f"{c.normalization}-{c.gate}-{c.expansion}")
def test_every_sab_variant_passes_gradcheck(cfg):
    assert case_sab(np.random.default_rng(5), cfg) < 1e-4
