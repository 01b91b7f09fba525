import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cheapseg import binfmt
from cheapseg.stf import (ABSDIFF, DIFF, SUM, VALUE, InferenceStats, PatchTest, StfParams, TextonForest,
                          classify_image, classify_pixel, eval_patch_test, patch_feature, train_stf)

from conftest import SMALL_STF


def _two_flat(h=12, w=12):
    img = np.zeros((h, w, 3), np.uint8)
    lab = np.zeros((h, w), np.uint8)
    img[:, : w // 2] = (200, 30, 30)
    img[:, w // 2:] = (30, 30, 200)
    lab[:, w // 2:] = 1
    return img, lab


def _accuracy(forest, images, labels):
    hit = tot = 0
    for img, lab in zip(images, labels):
        pred = classify_image(forest, img).argmax(axis=2)
        ok = lab != 255
        hit += int((pred[ok] == lab[ok]).sum())
        tot += int(ok.sum())
    return hit / tot


# -- patch tests -----------------------------------------------------------

def test_value_test_below_minimum_is_always_true(rng):
    img = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
    t = PatchTest(VALUE, 0, 0, 1, threshold=-0.5)
    assert all(eval_patch_test(img, (y, x), t) for y in range(6) for x in range(5))


def test_absdiff_on_constant_image_is_zero():
    img = np.full((4, 4, 3), 77, np.uint8)
    ys, xs = np.mgrid[0:4, 0:4]
    f = patch_feature(img, ys.ravel(), xs.ravel(), ABSDIFF, -2, 3, 0, 1, -1, 2)
    assert (f == 0).all()


def test_sum_test_hand_arithmetic():
    img = np.zeros((3, 3, 3), np.uint8)
    img[..., 0] = [[1, 2, 3], [4, 5, 6], [7, 8, 9]]
    # offsets (dy, dx) = (0, 0) and (1, 0) on channel 0
    ys, xs = np.mgrid[0:3, 0:3]
    f = patch_feature(img, ys.ravel(), xs.ravel(), SUM, 0, 0, 0, 1, 0, 0).reshape(3, 3)
    # bottom row clamps to itself
    assert f.tolist() == [[5, 7, 9], [11, 13, 15], [14, 16, 18]]
    t = PatchTest(SUM, 0, 0, 0, 1, 0, 0, threshold=12.5)
    assert eval_patch_test(img, (1, 1), t) and not eval_patch_test(img, (1, 0), t)


def test_diff_and_clamping():
    img = np.zeros((2, 3, 3), np.uint8)
    img[..., 2] = [[10, 20, 30], [40, 50, 60]]
    f = patch_feature(img, np.array([0, 1]), np.array([0, 2]), DIFF, 0, 5, 2, -7, 0, 2)
    # (0,0): x+5 clamps to column 2 -> 30, y-7 clamps to row 0 -> 10
    # (1,2): 60 at the center column, 30 from the clamped row above
    assert f.tolist() == [30 - 10, 60 - 30]


# -- training --------------------------------------------------------------

def test_single_class_leaves_are_one_hot():
    img = np.random.default_rng(0).integers(0, 256, size=(10, 10, 3), dtype=np.uint8)
    lab = np.full((10, 10), 2, np.uint8)
    f = train_stf([img], [lab], 4, StfParams(patch_size=3, n_trees=2, leaf_smoothing=0.0), seed=1)
    assert np.array_equal(f.leaf_dist, np.tile([0, 0, 1.0, 0], (f.n_leaves, 1)))


def test_single_class_with_default_smoothing_is_smoothed_one_hot():
    img = np.zeros((10, 10, 3), np.uint8)
    lab = np.full((10, 10), 1, np.uint8)
    f = train_stf([img], [lab], 3, StfParams(patch_size=3, n_trees=1, stride=1), seed=1)
    assert f.n_leaves == 1
    assert np.allclose(f.leaf_dist[0], np.array([1, 101, 1]) / 103)
    assert f.leaf_dist[0].argmax() == 1


def test_disjoint_flat_colours_are_separated():
    img, lab = _two_flat()
    for depth in (1, 3):
        f = train_stf([img], [lab], 2, StfParams(patch_size=1, n_trees=3, max_depth=depth, n_candidates=50,
                                                 min_samples_leaf=1, stride=1), seed=4)
        assert _accuracy(f, [img], [lab]) == 1.0
        assert classify_pixel(f, img, (3, 1)).argmax() == 0
        assert classify_pixel(f, img, (3, 10)).argmax() == 1


def test_depth_zero_gives_the_global_prior():
    img, lab = _two_flat(8, 8)
    lab[:, 5:] = 1
    lab[:, :5] = 0
    f = train_stf([img], [lab], 2, StfParams(patch_size=3, n_trees=1, max_depth=0, stride=1,
                                             leaf_smoothing=0.0), seed=0)
    assert f.n_leaves == 1
    assert np.allclose(f.leaf_dist[0], [40 / 64, 24 / 64])
    out = classify_image(f, img)
    assert np.allclose(out, [40 / 64, 24 / 64])


def test_two_identical_trees_average_to_one_tree():
    img, lab = _two_flat()
    f = train_stf([img], [lab], 2, StfParams(patch_size=3, n_trees=1, max_depth=3, stride=1), seed=9)
    arrays = f.to_arrays()
    n = len(f.left)
    doubled = {k: np.concatenate([arrays[k], arrays[k]]) for k in TextonForest._FIELDS}
    for k in ("left", "right"):
        doubled[k] = np.concatenate([arrays[k], np.where(arrays[k] >= 0, arrays[k] + n, -1)])
    doubled["leaf"] = np.concatenate([arrays["leaf"], np.where(arrays["leaf"] >= 0, arrays["leaf"] + f.n_leaves, -1)])
    twin = TextonForest(f.params, 2, [0, n], doubled, np.concatenate([f.leaf_dist] * 2),
                        np.concatenate([f.leaf_count] * 2))
    assert np.allclose(classify_image(twin, img), classify_image(f, img), atol=1e-15)


def test_one_by_one_and_constant_images(tiny_forest):
    out = classify_image(tiny_forest, np.array([[[5, 6, 7]]], np.uint8))
    assert out.shape == (1, 1, 6)
    const = np.full((9, 11, 3), 123, np.uint8)
    grid = classify_image(tiny_forest, const)
    assert grid.shape == (9, 11, 6)
    assert (grid == grid[0, 0]).all()


def test_classify_pixel_matches_classify_image(tiny_forest, tiny_split):
    img = tiny_split["test"][0][0]
    grid = classify_image(tiny_forest, img)
    for y, x in ((0, 0), (5, 17), (31, 31)):
        assert np.array_equal(classify_pixel(tiny_forest, img, (y, x)), grid[y, x])
        assert np.array_equal(classify_pixel(tiny_forest, img, (y, x)), classify_pixel(tiny_forest, img, (y, x)))


def test_void_pixels_are_never_sampled():
    img, lab = _two_flat()
    lab = lab.copy()
    lab[:, :6] = 255
    f = train_stf([img], [lab], 2, StfParams(patch_size=1, n_trees=1, stride=1, leaf_smoothing=0.0), seed=0)
    assert f.leaf_count.sum() == 72
    assert np.allclose(f.leaf_dist[:, 0], 0)


def test_training_rejects_bad_input():
    img, lab = _two_flat()
    with pytest.raises(ValueError):
        train_stf([img], [lab], 1)
    with pytest.raises(ValueError, match="void"):
        train_stf([img], [np.full_like(lab, 255)], 2)
    with pytest.raises(ValueError, match="out of range"):
        train_stf([img], [lab + 1], 2)
    with pytest.raises(ValueError):
        StfParams(patch_size=4)


def test_non_rgb_input_is_rejected(tiny_forest):
    with pytest.raises(ValueError, match="RGB"):
        classify_image(tiny_forest, np.zeros((4, 4), np.uint8))


def test_stats_count_forest_calls(tiny_forest):
    stats = InferenceStats()
    classify_image(tiny_forest, np.zeros((3, 4, 3), np.uint8), stats)
    assert stats.forest_calls[tiny_forest.tag] == 1
    assert stats.pixel_inferences[tiny_forest.tag] == 12


def test_serialization_roundtrip_and_determinism(tiny_split, tiny_forest, tmp_path):
    images, labels, _ = tiny_split["train"]
    again = train_stf(images, labels, 6, SMALL_STF, seed=11)
    assert again.to_bytes() == tiny_forest.to_bytes()
    other = train_stf(images, labels, 6, SMALL_STF, seed=12)
    assert other.to_bytes() != tiny_forest.to_bytes()
    tiny_forest.save(tmp_path / "f.bin")
    back = TextonForest.load(tmp_path / "f.bin")
    assert back.to_bytes() == tiny_forest.to_bytes()
    img = tiny_split["test"][0][0]
    assert np.array_equal(classify_image(back, img), classify_image(tiny_forest, img))
    tiny_forest.dump_json(tmp_path / "f.json")
    assert (tmp_path / "f.json").stat().st_size > 0


def test_leaf_distributions_are_normalized(tiny_forest, tiny_split):
    assert (tiny_forest.leaf_dist >= 0).all()
    assert np.allclose(tiny_forest.leaf_dist.sum(axis=1), 1.0, atol=1e-9)
    out = classify_image(tiny_forest, tiny_split["test"][0][1])
    assert np.allclose(out.sum(axis=2), 1.0, atol=1e-9) and (out >= 0).all()


@given(seed=st.integers(0, 10_000))
def test_depth_monotonicity_on_separable_data(seed):
    rng = np.random.default_rng(seed)
    colours = rng.choice(256, size=(3, 3), replace=False)
    img = np.zeros((9, 12, 3), np.uint8)
    lab = np.zeros((9, 12), np.uint8)
    for k in range(3):
        img[:, 4 * k:4 * k + 4] = colours[k]
        lab[:, 4 * k:4 * k + 4] = k
    prev = 0.0
    for depth in range(0, 4):
        f = train_stf([img], [lab], 3, StfParams(patch_size=1, n_trees=1, max_depth=depth, n_candidates=30,
                                                 min_samples_leaf=1, stride=1), seed=seed)
        acc = _accuracy(f, [img], [lab])
        assert acc >= prev - 1e-9
        prev = acc


@given(img=hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
def test_outputs_are_distributions_on_any_image(tiny_forest, img):
    out = classify_image(tiny_forest, img)
    assert out.shape == img.shape[:2] + (6,)
    assert (out >= 0).all() and np.allclose(out.sum(axis=2), 1.0, atol=1e-9)


# -- binary container ------------------------------------------------------

def test_binfmt_roundtrip_and_errors():
    arrays = {"a": np.arange(6, dtype=np.int16).reshape(2, 3), "b": np.array([1.5, -2.0])}
    data = binfmt.dumps("TEST", {"x": 1}, arrays)
    kind, meta, back = binfmt.loads(data, "TEST")
    assert kind == "TEST" and meta == {"x": 1}
    assert all(np.array_equal(back[k], arrays[k]) and back[k].dtype == arrays[k].dtype for k in arrays)
    with pytest.raises(binfmt.FormatError, match="magic"):
        binfmt.loads(b"XXXX" + data[4:])
    with pytest.raises(binfmt.FormatError, match="expected"):
        binfmt.loads(data, "OTHER")
    with pytest.raises(binfmt.FormatError, match="truncated"):
        binfmt.loads(data[:-3])
    with pytest.raises(ValueError):
        binfmt.dumps("WAY_TOO_LONG", {}, {})
