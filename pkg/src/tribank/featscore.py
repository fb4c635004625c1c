"""Object-level and patch-level anomaly maps against the feature banks."""

from __future__ import annotations

import numpy as np

from .core import ScoreMap, SceneBundle, upsample_bilinear
from .featbank import ObjectBank, PatchBank

_CHUNK = 1 << 22


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    # zero-norm rows get similarity 0 with everything
    return x / np.where(norms == 0.0, 1.0, norms)


def nearest_dissimilarity(queries: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """``1 - max cosine`` of each query row against the centroid set, clamped to [0, 1]."""
    if queries.shape[-1] != centroids.shape[-1]:
        raise ValueError(f"dimension mismatch: query {queries.shape[-1]}, "
                         f"bank {centroids.shape[-1]}")
    if np.any(np.linalg.norm(queries, axis=-1) == 0.0):
        raise ValueError("zero query feature vector")
    q, c = _unit_rows(queries), _unit_rows(centroids)
    # elementwise product + per-pair sum instead of a BLAS matmul: each similarity is
    # then bit-identical regardless of how many rows or centroids share the call
    step = max(1, _CHUNK // max(1, c.size))
    best = np.empty(q.shape[0])
    for start in range(0, q.shape[0], step):
        block = q[start:start + step]
        best[start:start + step] = (block[:, None, :] * c[None, :, :]).sum(-1).max(axis=1)
    return np.clip(1.0 - best, 0.0, 1.0)


def object_anomaly_map(query: SceneBundle, bank: ObjectBank,
                       image_category: str | None = None) -> ScoreMap:
    """Sum of per-object dissimilarities painted onto each object's mask, clamped to [0, 1]."""
    cat = query.category if image_category is None else image_category
    cents = bank.centroids(cat)
    out = np.zeros((query.height, query.width))
    if not query.objects:
        return ScoreMap(out)
    feats = np.stack([f for f, _ in query.objects])
    if feats.shape[1] != bank.dim:
        raise ValueError(f"dimension mismatch: query objects {feats.shape[1]}, bank {bank.dim}")
    terms = nearest_dissimilarity(feats, cents)
    for term, (_, m) in zip(terms, query.objects):
        out += term * m.bits
    return ScoreMap.clamped(out)


def patch_score_grid(query: SceneBundle, bank: PatchBank,
                     image_category: str | None = None) -> np.ndarray:
    """Layer-averaged Hp x Wp dissimilarity grid before upsampling."""
    cat = query.category if image_category is None else image_category
    layers = bank.layers(cat)
    if set(query.patches.layer_ids) != set(layers):
        raise ValueError(f"query layers {query.patches.layer_ids} do not match "
                         f"bank layers {tuple(layers)}")
    hp, wp = query.patches.grid
    total = np.zeros(hp * wp)
    for lid in layers:  # fixed (sorted) order keeps the sum reproducible
        grid = query.patches.layer(lid)
        total += nearest_dissimilarity(grid.reshape(hp * wp, -1), layers[lid])
    return (total / len(layers)).reshape(hp, wp)


def patch_anomaly_map(query: SceneBundle, bank: PatchBank,
                      image_category: str | None = None) -> ScoreMap:
    grid = patch_score_grid(query, bank, image_category)
    return upsample_bilinear(ScoreMap.clamped(grid), query.width, query.height)
