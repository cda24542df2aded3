import numpy as np
import pytest

import oracles
from golden_cases import CASES, GOLDEN
from pfan import ops
from pfan.pyramid import SDD, Encoder, PyramidConfig, PyramidExtractor, ShallowExtractor, StridedDown, build_image_pyramid
from pfan.tensor import ContractError, ShapeError, Tensor


def test_pyramid_extents_halve():
    levels = build_image_pyramid(Tensor(np.zeros((1, 3, 64, 64))), 3)
    assert [b.dims[2] for b in levels] == [64, 32, 16]


def test_pyramid_of_constant_is_constant():
    for b in build_image_pyramid(Tensor(np.full((1, 3, 16, 8), 0.4)), 4):
        np.testing.assert_allclose(b.data, 0.4, atol=1e-7)


def test_checkerboard_level_two_is_half():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float32)
    levels = build_image_pyramid(Tensor(np.broadcast_to(board, (1, 3, 8, 8)).copy()), 2)
    np.testing.assert_array_equal(levels[1].data, 0.5)


def test_indivisible_extents_rejected():
    with pytest.raises(ShapeError):
        build_image_pyramid(Tensor(np.zeros((1, 3, 12, 12))), 4)


def test_config_validation():
    with pytest.raises(ValueError):
        PyramidConfig(levels=5, widths=(1, 2, 3, 4, 5))
    with pytest.raises(ValueError):
        PyramidConfig(levels=3, widths=(4, 4))
    with pytest.raises(ValueError):
        PyramidConfig(levels=2, widths=(4, 0))


def test_shallow_zero_image_zero_bias_gives_zero():
    net = ShallowExtractor(5, np.random.default_rng(0))
    out = net(Tensor(np.zeros((1, 3, 6, 6))))
    assert out.dims == (1, 5, 6, 6)
    np.testing.assert_array_equal(out.data, 0)


def test_shallow_keeps_extents():
    net = ShallowExtractor(3, np.random.default_rng(0))
    assert net(Tensor(np.ones((2, 3, 5, 7)))).dims == (2, 3, 5, 7)


@pytest.mark.parametrize("name", ["shallow", "encoder"])
def test_golden_regression(name):
    np.testing.assert_allclose(CASES[name](), np.load(GOLDEN / f"{name}.npy"), rtol=1e-5, atol=1e-6)


# ---------------------------------------------------------------- SDD


def test_sdd_zero_detail_is_max_pool():
    sdd = SDD(3, np.random.default_rng(0))
    sdd.detail.weight.data[:] = 0
    x = Tensor(np.random.default_rng(1).normal(size=(1, 3, 6, 8)).astype(np.float32))
    np.testing.assert_array_equal(sdd(x).data, ops.max_pool_2x2(x).data)


def test_sdd_zero_input_zero_output():
    sdd = SDD(3, np.random.default_rng(0))
    np.testing.assert_array_equal(sdd(Tensor(np.zeros((1, 3, 4, 4)))).data, 0)


def test_sdd_is_sum_of_oracles():
    rng = np.random.default_rng(2)
    sdd = SDD(2, rng)
    sdd.detail.bias.data = rng.normal(size=2).astype(np.float32)
    x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
    expect = oracles.max_pool(x) + oracles.conv2d(x, sdd.detail.weight.data, sdd.detail.bias.data, stride=2)
    np.testing.assert_allclose(sdd(Tensor(x)).data, expect, atol=1e-5)


def test_sdd_branches_are_additive():
    rng = np.random.default_rng(3)
    sdd = SDD(2, rng)
    x = Tensor(rng.normal(size=(1, 2, 4, 6)).astype(np.float32))
    detail_only = sdd.detail(x).data
    np.testing.assert_allclose(sdd(x).data - ops.max_pool_2x2(x).data, detail_only, atol=1e-6)


def test_sdd_odd_extents_rejected():
    with pytest.raises(ShapeError):
        SDD(2, np.random.default_rng(0))(Tensor(np.zeros((1, 2, 5, 4))))


def test_strided_swap_keeps_all_shapes():
    x = Tensor(np.random.default_rng(4).uniform(size=(1, 3, 32, 32)).astype(np.float32))
    a = PyramidExtractor(PyramidConfig(3, (4, 6, 8), blocks=1, sdd=True), np.random.default_rng(0))(x)
    b = PyramidExtractor(PyramidConfig(3, (4, 6, 8), blocks=1, sdd=False), np.random.default_rng(0))(x)
    assert [f.dims for f in a.features] == [f.dims for f in b.features]
    assert isinstance(StridedDown(2, np.random.default_rng(0))(Tensor(np.zeros((1, 2, 4, 4)))), Tensor)


# ---------------------------------------------------------------- encoder


def test_encoder_with_zero_blocks_is_projection():
    rng = np.random.default_rng(5)
    enc = Encoder(4, None, blocks=3, rng=rng)
    for block in enc.body.blocks:
        for conv in (block.conv1, block.conv2):
            conv.weight.data[:] = 0
    x = Tensor(rng.normal(size=(1, 4, 6, 6)).astype(np.float32))
    np.testing.assert_allclose(enc(x).data, enc.body.proj(x).data, atol=1e-7)


def test_encoder_needs_finer_feature():
    enc = Encoder(4, 3, blocks=1, rng=np.random.default_rng(0))
    with pytest.raises(ContractError):
        enc(Tensor(np.zeros((1, 4, 4, 4))))


def test_feature_widths_and_halving_chain():
    cfg = PyramidConfig(4, (3, 5, 7, 9), blocks=1)
    pyr = PyramidExtractor(cfg, np.random.default_rng(0))(Tensor(np.zeros((2, 3, 16, 24), dtype=np.float32)))
    assert [f.dims for f in pyr.features] == [(2, 3, 16, 24), (2, 5, 8, 12), (2, 7, 4, 6), (2, 9, 2, 3)]
    assert [e.dims[1] for e in pyr.shallow] == [3, 5, 7, 9]
