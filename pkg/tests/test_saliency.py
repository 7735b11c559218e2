import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdis.hmt import ScalarHmtParams, universal_params
from mdis.saliency import (
    ModeConfig,
    analyse,
    block_mi,
    class_entropy,
    compute_saliency,
    compute_saliency_maps,
    fuse_max,
    normalize_map,
    pseudo_dis,
    saliency_at_scale,
)
from mdis.wavelet import dwt2_haar
from conftest import natural_crop

LN2 = np.log(2.0)


def test_block_mi_examples():
    assert block_mi(0.5, LN2) == pytest.approx(0.0, abs=1e-15)
    assert block_mi(1.0, LN2) == pytest.approx(LN2)
    assert block_mi(0.0, LN2) == pytest.approx(LN2)
    assert block_mi(0.1, LN2) == pytest.approx(0.3680, abs=1e-4)  # quoted to four places
    expect = LN2 + 0.9 * np.log(0.9) + 0.1 * np.log(0.1)
    assert block_mi(0.9, LN2) == pytest.approx(expect, rel=1e-14)
    # a posterior flatter than the class prior would go negative; it is clamped
    assert block_mi(0.5, class_entropy(0.1)) == 0.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_block_mi_bounds(p, pc):
    h = class_entropy(pc)
    assert 0.0 <= h <= LN2 + 1e-12
    assert 0.0 <= block_mi(p, h) <= h + 1e-12


def test_saliency_at_scale():
    m = saliency_at_scale(np.array([[0.25]]), 5)
    assert m.shape == (32, 32) and np.all(m == 0.25)
    checker = np.indices((4, 4)).sum(axis=0) % 2
    m = saliency_at_scale(checker, 3)
    assert m.shape == (32, 32)
    assert np.array_equal(m[::8, ::8], checker)
    assert np.array_equal(m, np.kron(checker, np.ones((8, 8))))
    g = np.random.default_rng(0).random((8, 8))
    assert saliency_at_scale(g, 2).mean() == pytest.approx(g.mean(), rel=1e-12)


@given(st.lists(arrays(np.float64, (6, 5), elements=st.floats(0, 1)), min_size=1, max_size=5), st.randoms())
def test_fuse_max_properties(maps, rnd):
    fused = fuse_max(maps)
    for m in maps:
        assert np.all(fused >= m)
    assert any(m.flat[np.argmax(fused)] == fused.max() for m in maps)
    shuffled = list(maps)
    rnd.shuffle(shuffled)
    assert np.array_equal(fuse_max(shuffled), fused)


def test_fuse_max_examples():
    other = np.random.default_rng(1).random((4, 4))
    assert np.array_equal(fuse_max([np.zeros((4, 4)), other]), other)
    with pytest.raises(ValueError):
        fuse_max([np.zeros((4, 4)), np.zeros((4, 5))])


def test_normalize_map():
    np.testing.assert_allclose(normalize_map(np.array([[0.0, LN2], [LN2, 0.0]])), [[0, 1], [1, 0]])
    assert np.all(normalize_map(np.full((3, 7), 0.2)) == 0.5)
    x = np.random.default_rng(2).normal(size=(9, 9))
    y = normalize_map(x)
    assert y.min() == 0.0 and y.max() == 1.0
    assert np.argmax(y) == np.argmax(x)
    assert np.array_equal(np.argsort(y, axis=None, kind="stable"), np.argsort(x, axis=None, kind="stable"))


def test_pseudo_dis_peak_and_tail():
    s2 = np.tile([0.01, 4.0], (5, 1))
    A = np.tile([[0.8, 0.2], [0.2, 0.8]], (5, 1, 1))
    p = ScalarHmtParams(s2, A, np.array([0.5, 0.5]))
    lum = np.zeros((64, 64))
    lum[:2, :2] = [[1e6, 0], [0, 0]]  # one huge finest-scale coefficient per band
    mi, post, h = pseudo_dis(dwt2_haar(lum, 5), p)
    assert mi.shape == (32, 32) and post.shape == (32, 32)
    assert post[0, 0] > 1 - 1e-12  # |w| large -> large-variance state
    assert np.all(post.ravel()[1:] < 0.05)  # w = 0 -> small-variance state
    assert 0 <= h <= LN2


def test_pseudo_dis_matches_single_scale_cascade():
    lum = np.asarray(natural_crop("camera", 64), dtype=np.float64).mean(axis=2) / 255.0
    for model in ("universal", "trained", "vector"):
        res = analyse(lum, model, depth=1)
        np.testing.assert_allclose(res.pseudo_dis, res.grids[1], atol=1e-12)


def test_grids_within_entropy_bound():
    lum = np.asarray(natural_crop("coffee", 128), dtype=np.float64).mean(axis=2) / 255.0
    res = analyse(lum, "universal", depth=5)
    for j in range(1, 6):
        g = res.grids[j]
        assert g.shape == (128 >> j, 128 >> j)
        assert np.all(g >= 0) and np.all(g <= res.entropies[j] + 1e-9)
        assert res.entropies[j] <= LN2 + 1e-12


def test_constant_image_gives_half():
    img = np.full((100, 80, 3), 128, np.uint8)
    for mode in ("uhmt0", "thmt0", "vhmt0", "uhmt3", "uhmt6"):
        m = compute_saliency(img, mode)
        assert m.shape == (100, 80)
        assert np.all(m == 0.5)


def test_dimensions_range_and_determinism():
    img = natural_crop("astronaut", 256)[:200, :150]
    a = compute_saliency(img, "thmt0")
    b = compute_saliency(img, ModeConfig("trained", 0))
    assert a.shape == (200, 150)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_maps_for_all_selectors():
    img = natural_crop("chelsea", 128)
    maps = compute_saliency_maps(img, "universal")
    assert sorted(maps) == list(range(7))
    for s, m in maps.items():
        assert m.shape == (128, 128)
        np.testing.assert_array_equal(m, compute_saliency(img, f"uhmt{s}"))
    # the fused map dominates each single scale before normalisation
    res = analyse(np.asarray(img, float).mean(axis=2) / 255.0, "universal")
    fused = res.pixel_map(0)
    for s in range(1, 6):
        assert np.all(fused >= res.pixel_map(s))


def test_selector_to_level():
    res = analyse(np.random.default_rng(3).random((64, 64)), "universal")
    # selector 1 is the coarsest (32x32 pixel blocks), 5 the finest
    assert np.array_equal(res.pixel_map(1), saliency_at_scale(res.grids[5], 5))
    assert np.array_equal(res.pixel_map(5), saliency_at_scale(res.grids[1], 1))


def test_mode_parsing():
    assert ModeConfig.parse("UHMT0") == ModeConfig("universal", 0)
    assert ModeConfig.parse("vhmt6") == ModeConfig("vector", 6)
    assert ModeConfig("trained", 3).name == "thmt3"
    for bad in ("hmt0", "xhmt1", "uhmt7", "uhmt", "uhmt-1"):
        with pytest.raises(ValueError):
            ModeConfig.parse(bad)
    with pytest.raises(ValueError):
        ModeConfig("universal", 9)
    with pytest.raises(ValueError):
        compute_saliency(np.zeros((64, 64)), "qhmt0")


def test_universal_params_are_accepted_explicitly():
    img = np.random.default_rng(4).random((64, 64))
    a = compute_saliency(img, "uhmt0")
    b = compute_saliency(img, "uhmt0", params=universal_params(5, side=64))
    assert np.array_equal(a, b)
