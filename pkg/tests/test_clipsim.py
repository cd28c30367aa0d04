import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otvm.clipsim import (
    BG,
    FG,
    UNK,
    ClipSample,
    composite,
    eval_trimap_set,
    make_trimap,
    post_augment,
    simulate_clip,
    trimap_from_png,
    trimap_labels,
    trimap_to_png,
)
from otvm.config import SimConfig
from otvm.synthetic import make_sources

# extra error JPEG may add on top of the flat-gray noise budget (q >= 70, 64 px crops)
JPEG_SLACK = 0.3


def brute_force_trimap(alpha, kernel):
    h, w = alpha.shape
    r = kernel // 2
    soft = (alpha > 0) & (alpha < 1)
    labels = np.where(alpha >= 1, FG, BG)
    for y in range(h):
        for x in range(w):
            win = soft[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1]
            if win.any():
                labels[y, x] = UNK
    return labels


# -- composite ----------------------------------------------------------------


def test_composite_identities(rng):
    fg, bg = rng.random((5, 6, 3)), rng.random((5, 6, 3))
    assert np.array_equal(composite(fg, np.ones((5, 6)), bg), fg)
    assert np.array_equal(composite(fg, np.zeros((5, 6)), bg), bg)


def test_composite_half_blend():
    fg = np.array([[[1.0, 0.0, 0.0]]])
    bg = np.array([[[0.0, 0.0, 1.0]]])
    np.testing.assert_allclose(composite(fg, np.full((1, 1), 0.5), bg), [[[0.5, 0.0, 0.5]]])


def test_composite_shape_error(rng):
    with pytest.raises(ValueError, match="shape"):
        composite(rng.random((4, 4, 3)), rng.random((5, 4)), rng.random((4, 4, 3)))


# -- trimaps --------------------------------------------------------------------


@settings(max_examples=1000, deadline=None)
@given(
    alpha=arrays(np.float64, (8, 8), elements=st.sampled_from([0.0, 1.0, 0.25, 0.5, 0.9])),
    kernel=st.sampled_from([1, 3, 5, 7, 9, 41]),
)
def test_make_trimap_matches_brute_force(alpha, kernel):
    tri = make_trimap(alpha, kernel)
    assert np.array_equal(trimap_labels(tri), brute_force_trimap(alpha, kernel))
    assert set(np.unique(tri)) <= {0.0, 1.0}
    assert np.array_equal(tri.sum(-1), np.ones((8, 8)))


def test_soft_ring_widens_by_half_kernel():
    yy, xx = np.mgrid[0:16, 0:16]
    r = np.hypot(yy - 7.5, xx - 7.5)
    alpha = np.clip((6.0 - r) / 2.0, 0.0, 1.0)  # 2-pixel soft ring
    tri = make_trimap(alpha, 5)
    assert np.array_equal(trimap_labels(tri), brute_force_trimap(alpha, 5))
    raw = (alpha > 0) & (alpha < 1)
    unk = trimap_labels(tri) == UNK
    assert unk.sum() > raw.sum()
    # every UNK pixel is within 2 (chessboard) of a raw soft pixel
    pts = np.argwhere(raw)
    for y, x in np.argwhere(unk):
        assert np.abs(pts - [y, x]).max(axis=1).min() <= 2


def test_trimap_trivial_cases(rng):
    binary = (rng.random((10, 10)) > 0.5).astype(float)
    assert not (trimap_labels(make_trimap(binary, 1)) == UNK).any()
    assert (trimap_labels(make_trimap(np.zeros((10, 10)), 25)) == BG).all()
    for setting in ("narrow", "medium", "wide"):
        assert not (trimap_labels(eval_trimap_set(binary, setting)) == UNK).any()


def test_make_trimap_rejects_even_kernel():
    with pytest.raises(ValueError):
        make_trimap(np.zeros((4, 4)), 4)
    with pytest.raises(ValueError):
        make_trimap(np.zeros((4, 4)), 0)


def test_eval_trimap_set_kernels(rng):
    alpha = rng.random((32, 32)) * (rng.random((32, 32)) > 0.9)
    assert np.array_equal(eval_trimap_set(alpha, "narrow"), make_trimap(alpha, 11))
    assert np.array_equal(eval_trimap_set(alpha, "medium"), make_trimap(alpha, 25))
    assert np.array_equal(eval_trimap_set(alpha, "wide"), make_trimap(alpha, 41))
    with pytest.raises(ValueError):
        eval_trimap_set(alpha, "huge")


def test_trimap_png_roundtrip(rng):
    tri = make_trimap(rng.random((12, 12)) * (rng.random((12, 12)) > 0.8), 3)
    png = trimap_to_png(tri)
    assert set(np.unique(png)) <= {0, 128, 255}
    assert np.array_equal(trimap_from_png(png), tri)


# -- simulate_clip --------------------------------------------------------------


@pytest.fixture(scope="module")
def sources():
    return make_sources(3, 128, seed=0)


def test_simulate_clip_deterministic(sources):
    a = simulate_clip(*sources[0], T=3, rng_seed=11)
    b = simulate_clip(*sources[0], T=3, rng_seed=11)
    for field in ("frames", "alphas", "trimaps", "fg", "bg"):
        for x, y in zip(getattr(a, field), getattr(b, field)):
            assert np.array_equal(x, y)
    assert a.params == b.params
    c = simulate_clip(*sources[0], T=3, rng_seed=12)
    assert not np.array_equal(a.frames[0], c.frames[0])


def test_simulate_clip_identity_transform():
    fg, alpha, bg = make_sources(1, 64, seed=3)[0]
    cfg = SimConfig(out_size=64, crop_sizes=(64,), affine=False, augment=False)
    clip = simulate_clip(fg, alpha, bg, T=1, rng_seed=0, config=cfg)
    top, left = clip.params["crop_top"], clip.params["crop_left"]

    def crop(x, mode):
        pad = [(64, 64), (64, 64)] + [(0, 0)] * (x.ndim - 2)
        return np.pad(x, pad, mode=mode)[top + 64 : top + 128, left + 64 : left + 128]

    expected = composite(crop(fg, "edge"), crop(alpha, "constant"), crop(bg, "reflect"))
    assert np.array_equal(clip.frames[0], expected)


def test_simulate_clip_invariants(sources):
    for seed in range(5):
        clip = simulate_clip(*sources[seed % 3], T=3, rng_seed=seed)
        assert clip.T == 3
        for t in range(3):
            assert clip.frames[t].shape == (64, 64, 3)
            assert 0.0 <= clip.frames[t].min() and clip.frames[t].max() <= 1.0
            assert 0.0 <= clip.alphas[t].min() and clip.alphas[t].max() <= 1.0
            assert np.array_equal(clip.trimaps[t].sum(-1), np.ones((64, 64)))
            assert np.array_equal(clip.trimaps[t], make_trimap(clip.alphas[t], clip.params["trimap_kernel"]))
        k = clip.params["trimap_kernel"]
        assert k % 2 == 1 and 1 <= k <= 7


def test_pre_augmentation_composite_is_exact(sources):
    cfg = SimConfig(augment=False)
    for seed in range(5):
        clip = simulate_clip(*sources[seed % 3], T=3, rng_seed=seed, config=cfg)
        for t in range(3):
            residual = np.abs(clip.frames[t] - composite(clip.fg[t], clip.alphas[t], clip.bg[t])).max()
            assert residual == 0.0


def test_augmentation_budget(sources):
    """Residual to the clean composite stays inside the flat-gray chain's budget."""
    for seed in range(40):
        clip = simulate_clip(*sources[seed % 3], T=3, rng_seed=seed)
        for t, entry in enumerate(clip.params["augment"]):
            clean = composite(clip.fg[t], clip.alphas[t], clip.bg[t])
            residual = np.abs(clip.frames[t] - clean).max()
            gray = np.full_like(clean, 0.5)
            budget = np.abs(post_augment(gray, entry["noise_sigma"], None, entry["noise_seed"]) - gray).max()
            if entry["jpeg_quality"] is not None:
                budget += JPEG_SLACK
            assert residual <= budget + 1e-12


def test_crop_fallback_without_unknown():
    fg = np.full((64, 64, 3), 0.7)
    bg = np.full((64, 64, 3), 0.2)
    alpha = np.zeros((64, 64))
    alpha[10:30, 10:30] = 1.0
    clip = simulate_clip(fg, alpha, bg, T=2, rng_seed=0, config=SimConfig(affine=False, augment=False))
    assert clip.params["crop_center_rule"] == "centroid"
    empty = simulate_clip(fg, np.zeros((64, 64)), bg, T=1, rng_seed=0, config=SimConfig(affine=False))
    assert empty.params["crop_center_rule"] == "center"


def test_simulate_clip_errors(sources):
    fg, alpha, bg = sources[0]
    with pytest.raises(ValueError):
        simulate_clip(fg, alpha[:-1], bg)
    with pytest.raises(ValueError):
        simulate_clip(fg, alpha, bg, T=0)


def test_clipsample_length_check(rng):
    x = [rng.random((4, 4, 3))]
    with pytest.raises(ValueError):
        ClipSample(x, x * 2, x, x, x)
