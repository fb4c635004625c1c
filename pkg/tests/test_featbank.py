import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tribank.core import Mask, PatchFeatureMap
from tribank.featbank import build_object_bank, build_patch_bank, kmeans, lloyd

from conftest import make_scene


def best_bipartition(points):
    """Exhaustive 2-means oracle: the split with the smallest within-cluster SSE."""
    n = len(points)
    best = None
    for bits in itertools.product((0, 1), repeat=n - 1):
        labels = np.array((0,) + bits)
        if labels.all() or not labels.any():
            continue
        groups = [points[labels == g] for g in (0, 1)]
        sse = sum(((g - g.mean(0)) ** 2).sum() for g in groups)
        if best is None or sse < best[0]:
            best = (sse, sorted(tuple(g.mean(0)) for g in groups))
    return best[1]


def scene_with(objects=(), layers=None, category="c", image_id="s"):
    feats = tuple((np.asarray(f, dtype=np.float32), Mask.zeros(4, 4)) for f in objects)
    if layers is None:
        layers = (("l0", np.ones((1, 1, 2), dtype=np.float32)),)
    return make_scene(image_id, {}, w=4, h=4, objects=feats,
                      patches=PatchFeatureMap(tuple(layers)), category=category)


def test_kmeans_k_equals_n_returns_points():
    pts = np.random.default_rng(0).random((6, 3))
    assert np.array_equal(kmeans(pts, 6), pts)
    assert lloyd(pts, 6).inertia == 0.0


def test_kmeans_single_cluster_is_mean():
    pts = np.random.default_rng(1).random((50, 4))
    np.testing.assert_allclose(kmeans(pts, 1)[0], pts.mean(0), rtol=0, atol=1e-12)


def test_kmeans_four_points_matches_oracle():
    pts = np.array([(0, 0), (0, 1), (10, 0), (10, 1)], dtype=float)
    oracle = best_bipartition(pts)
    assert oracle == [(0.0, 0.5), (10.0, 0.5)]
    for seed in range(20):
        got = sorted(tuple(c) for c in kmeans(pts, 2, seed))
        np.testing.assert_allclose(got, oracle, atol=1e-12)


def test_kmeans_empty_input():
    with pytest.raises(ValueError):
        kmeans(np.zeros((0, 3)), 2)
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_inertia_non_increasing_and_deterministic(seed, k):
    pts = np.random.default_rng(seed).normal(size=(120, 5))
    res = lloyd(pts, k, seed)
    hist = res.inertia_history
    assert all(b <= a * (1 + 1e-9) for a, b in zip(hist, hist[1:]))
    assert len(hist) <= 100
    again = lloyd(pts, k, seed)
    assert again.centroids.tobytes() == res.centroids.tobytes()


def test_empty_cluster_reseeding_with_duplicates():
    pts = np.vstack([np.zeros((30, 2)), np.ones((2, 2))])
    cents = kmeans(pts, 5, seed=4)
    assert cents.shape == (5, 2) and np.all(np.isfinite(cents))


def test_coreset_soundness():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(200, 3))
    cents = kmeans(pts, 10, seed=1)
    d_full = ((pts[:, None] - cents[None]) ** 2).sum(-1).min(1)
    for _ in range(20):
        keep = rng.random(10) < 0.5
        if keep.all() or not keep.any():
            continue
        d_sub = ((pts[:, None] - cents[keep][None]) ** 2).sum(-1).min(1)
        assert np.all(d_full <= d_sub)


def test_object_bank_small_pool_keeps_raw_features():
    feats = np.random.default_rng(0).random((5, 4)).astype(np.float32)
    bank = build_object_bank([scene_with(feats[:2]), scene_with(feats[2:], image_id="t")])
    assert bank.k == 1000 and bank.dim == 4
    assert np.array_equal(bank.centroids("c"), feats)
    assert bank.centroids("c").dtype == np.float32


def test_object_bank_partitions_categories():
    rng = np.random.default_rng(1)
    a, b = rng.random((3, 4)), rng.random((2, 4)) + 5
    bank = build_object_bank({"a": [scene_with(a, category="a")],
                              "b": [scene_with(b, category="b")],
                              "empty": [scene_with(category="empty")]})
    assert set(bank.centroids_by_category) == {"a", "b"}
    np.testing.assert_array_equal(bank.centroids("a"), a.astype(np.float32))
    with pytest.raises(KeyError):
        bank.centroids("empty")


def test_object_bank_identical_vectors():
    v = np.arange(8, dtype=np.float32)
    scenes = [scene_with(np.tile(v, (200, 1)), image_id=f"s{i}") for i in range(10)]
    cents = build_object_bank(scenes, k=1000).centroids("c")
    assert cents.shape[0] == 1000
    assert np.array_equal(np.unique(cents, axis=0), v[None])


def test_object_bank_rejects_mixed_dims():
    with pytest.raises(ValueError):
        build_object_bank([scene_with(np.ones((2, 3))), scene_with(np.ones((2, 4)), image_id="t")])


def test_patch_bank_pools_grid():
    grid = np.arange(16, dtype=np.float32).reshape(2, 2, 4)
    bank = build_patch_bank([scene_with(layers=(("l0", grid),))])
    assert bank.layers("c")["l0"].shape == (4, 4)
    assert np.array_equal(bank.layers("c")["l0"], grid.reshape(4, 4))


def test_patch_bank_two_blobs_match_oracle():
    rng = np.random.default_rng(5)
    blob_a = rng.normal(0.0, 0.1, size=(6, 3))
    blob_b = rng.normal(5.0, 0.1, size=(6, 3))
    pts = np.vstack([blob_a, blob_b])
    grid = pts.reshape(3, 4, 3)
    cents = build_patch_bank([scene_with(layers=(("l0", grid),))], k=2).layers("c")["l0"]
    oracle = best_bipartition(pts)
    np.testing.assert_allclose(sorted(map(tuple, cents)), oracle, atol=1e-6, rtol=0)


def test_patch_bank_layer_mismatch():
    g = np.ones((1, 1, 2), dtype=np.float32)
    with pytest.raises(ValueError):
        build_patch_bank([scene_with(layers=(("a", g),)),
                          scene_with(layers=(("b", g),), image_id="t")])


def test_bank_builds_are_deterministic(suite):
    train = suite[0][:20]
    a = build_patch_bank(train, k=10, seed=3)
    b = build_patch_bank(train, k=10, seed=3)
    assert a == b
    assert all(a.layers("synthetic")[l].tobytes() == b.layers("synthetic")[l].tobytes()
               for l in a.layer_ids)
