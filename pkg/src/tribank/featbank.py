"""Object-level and patch-level feature banks compressed with K-means coresets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import SceneBundle, stack_features

DEFAULT_K_OBJECT = 1000
DEFAULT_K_PATCH = 100
MAX_ITER = 100
REL_TOL = 1e-4


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else 0.0


def _sq_dists(x: np.ndarray, c: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d = x_sq[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x, k, rng, x_sq):
    # greedy k-means++: several D^2-weighted candidates per step, keep the one
    # that lowers the potential most
    n = x.shape[0]
    trials = 2 + int(math.log(k))
    centers = np.empty((k, x.shape[1]))
    first = rng.integers(n)
    centers[0] = x[first]
    closest = _sq_dists(x, centers[:1], x_sq)[:, 0]
    for c in range(1, k):
        pot = closest.sum()
        if pot <= 0.0:
            idx = rng.integers(n, size=trials)
        else:
            cum = np.cumsum(closest)
            idx = np.searchsorted(cum, rng.random(trials) * cum[-1], side="right")
            idx = np.minimum(idx, n - 1)
        cand = np.minimum(closest[None, :], _sq_dists(x, x[idx], x_sq).T)
        best = int(np.argmin(cand.sum(axis=1)))
        centers[c] = x[idx[best]]
        closest = cand[best]
    return centers


def lloyd(points, k: int, seed: int = 0, max_iter: int = MAX_ITER,
          tol: float = REL_TOL) -> KMeansResult:
    """Lloyd iterations from a seeded k-means++ start, with full diagnostics."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("kmeans needs a nonempty 2-D point array")
    if k < 1:
        raise ValueError("k must be at least 1")
    n = x.shape[0]
    if n <= k:
        return KMeansResult(x.copy(), np.arange(n), [0.0])

    rng = np.random.default_rng(seed)
    x_sq = np.einsum("ij,ij->i", x, x)
    centers = _kmeans_pp(x, k, rng, x_sq)
    history: list[float] = []
    for _ in range(max_iter):
        d = _sq_dists(x, centers, x_sq)
        labels = np.argmin(d, axis=1)
        mins = d[np.arange(n), labels]
        inertia = float(mins.sum())
        if history:
            # Lloyd steps never increase the objective (tolerance covers rounding)
            assert inertia <= history[-1] * (1 + 1e-9) + 1e-12, (inertia, history[-1])
            prev = history[-1]
            history.append(inertia)
            if prev <= 0.0 or (prev - inertia) < tol * prev:
                break
        else:
            history.append(inertia)
            if inertia == 0.0:
                break

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            # reseed each empty cluster at the point currently farthest from its centre
            far = np.sum((x - new[labels]) ** 2, axis=1)
            for c in np.flatnonzero(~filled):
                p = int(np.argmax(far))
                new[c] = x[p]
                far[p] = -1.0
        centers = new
    return KMeansResult(centers, labels, history)


def kmeans(points, k: int, seed: int = 0) -> np.ndarray:
    """K-means centroids, or the points themselves when there are at most k of them.

    The output keeps the input dtype so that float32 features stay float32.
    """
    arr = np.asarray(points)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("kmeans needs a nonempty 2-D point array")
    if arr.shape[0] <= k:
        return arr.copy()
    dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64
    return lloyd(arr, k, seed).centroids.astype(dtype)


@dataclass(frozen=True, eq=False)
class ObjectBank:
    centroids_by_category: dict[str, np.ndarray]
    k: int
    dim: int

    def __post_init__(self):
        cents = {}
        for cat, arr in sorted(self.centroids_by_category.items()):
            arr = np.array(arr, copy=True)
            if arr.ndim != 2 or arr.shape[1] != self.dim:
                raise ValueError(f"category {cat!r} centroids are not {self.dim}-dimensional")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"category {cat!r} has non-finite centroids")
            arr.flags.writeable = False
            cents[cat] = arr
        object.__setattr__(self, "centroids_by_category", cents)

    def centroids(self, category: str) -> np.ndarray:
        try:
            return self.centroids_by_category[category]
        except KeyError:
            raise KeyError(f"object bank has no category {category!r}") from None

    def __eq__(self, other):
        if not isinstance(other, ObjectBank):
            return NotImplemented
        a, b = self.centroids_by_category, other.centroids_by_category
        return (self.k, self.dim) == (other.k, other.dim) and a.keys() == b.keys() and all(
            a[c].dtype == b[c].dtype and np.array_equal(a[c], b[c]) for c in a)


@dataclass(frozen=True, eq=False)
class PatchBank:
    centroids: dict[str, dict[str, np.ndarray]]
    k: int

    def __post_init__(self):
        out = {}
        layer_set = None
        for cat, layers in sorted(self.centroids.items()):
            ids = tuple(sorted(layers))
            if layer_set is None:
                layer_set = ids
            elif ids != layer_set:
                raise ValueError(f"category {cat!r} has layers {ids}, expected {layer_set}")
            out[cat] = {}
            for lid in ids:
                arr = np.array(layers[lid], copy=True)
                if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                    raise ValueError(f"bad centroid array for {cat!r}/{lid!r}")
                arr.flags.writeable = False
                out[cat][lid] = arr
        object.__setattr__(self, "centroids", out)

    @property
    def layer_ids(self) -> tuple[str, ...]:
        for layers in self.centroids.values():
            return tuple(layers)
        return ()

    def layers(self, category: str) -> dict[str, np.ndarray]:
        try:
            return self.centroids[category]
        except KeyError:
            raise KeyError(f"patch bank has no category {category!r}") from None

    def __eq__(self, other):
        if not isinstance(other, PatchBank):
            return NotImplemented
        if self.k != other.k or self.centroids.keys() != other.centroids.keys():
            return False
        for cat, layers in self.centroids.items():
            o = other.centroids[cat]
            if layers.keys() != o.keys():
                return False
            if not all(layers[l].dtype == o[l].dtype and np.array_equal(layers[l], o[l])
                       for l in layers):
                return False
        return True


def group_by_category(scenes: Sequence[SceneBundle]) -> dict[str, list[SceneBundle]]:
    groups: dict[str, list[SceneBundle]] = {}
    for s in scenes:
        groups.setdefault(s.category, []).append(s)
    return groups


def _as_groups(scenes) -> Mapping[str, Sequence[SceneBundle]]:
    if isinstance(scenes, Mapping):
        return scenes
    return group_by_category(scenes)


def build_object_bank(scenes, k: int = DEFAULT_K_OBJECT, seed: int = 0) -> ObjectBank:
    """Pool object features per image category and compress each pool to k centroids.

    ``scenes`` is either a mapping category -> scenes or a flat scene list grouped
    by ``SceneBundle.category``. Categories without any objects are left out.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    cents = {}
    dim = None
    for cat, group in sorted(_as_groups(scenes).items()):
        feats = [f for s in group for f, _ in s.objects]
        if not feats:
            continue
        pool = stack_features(feats)
        if dim is None:
            dim = pool.shape[1]
        elif pool.shape[1] != dim:
            raise ValueError(f"category {cat!r} has {pool.shape[1]}-d objects, bank is {dim}-d")
        cents[cat] = kmeans(pool, k, seed)
    if dim is None:
        raise ValueError("no object features to build an object bank from")
    return ObjectBank(cents, k, dim)


def build_patch_bank(scenes, k: int = DEFAULT_K_PATCH, seed: int = 0) -> PatchBank:
    """Pool patch vectors per (image category, layer) and compress each pool to k centroids."""
    if k < 1:
        raise ValueError("k must be at least 1")
    cents: dict[str, dict[str, np.ndarray]] = {}
    for cat, group in sorted(_as_groups(scenes).items()):
        if not group:
            continue
        ids = group[0].patches.layer_ids
        pools: dict[str, list[np.ndarray]] = {lid: [] for lid in ids}
        for s in group:
            if s.patches.layer_ids != ids:
                raise ValueError(f"scene {s.image_id!r} has layers {s.patches.layer_ids}, "
                                 f"expected {ids}")
            for lid, grid in s.patches.layers:
                pools[lid].append(grid.reshape(-1, grid.shape[-1]))
        cents[cat] = {}
        for lid in ids:
            dims = {p.shape[1] for p in pools[lid]}
            if len(dims) != 1:
                raise ValueError(f"layer {lid!r} of {cat!r} has inconsistent dims {sorted(dims)}")
            cents[cat][lid] = kmeans(np.concatenate(pools[lid]), k, seed)
    return PatchBank(cents, k)
