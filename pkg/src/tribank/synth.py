"""Deterministic synthetic scenes standing in for segmenters, encoders and the VLM.

Objects are axis-aligned rectangles placed inside nine-grid cells. Each scene carries
its structured description, per-object features (class prototype plus noise), and
patch grids in which object prototypes are blended over the background prototype
in proportion to pixel coverage.

``noise_sigma`` is the expected Euclidean norm of the noise added to a unit feature,
so the structural perturbation of ``structural_factor * noise_sigma`` is measured on
the same scale.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import (POSITIONS, CategoryText, ImageText, Mask, PatchFeatureMap, SceneBundle,
                   mask_area_fraction)

BACKGROUND = "__background__"
ANOMALY_KINDS = ("missing-class", "extra-count", "moved", "resized", "extra-class", "structural")
LOGICAL_KINDS = ANOMALY_KINDS[:5]
MAX_PROTOTYPE_COSINE = 0.3


@dataclass(frozen=True)
class LayoutItem:
    class_name: str
    count: int
    cell: str | None
    width_range: tuple[int, int]
    height_range: tuple[int, int]


DEFAULT_LAYOUT = (
    LayoutItem("apple", 1, "top-left", (8, 12), (8, 12)),
    LayoutItem("washer", 1, "center", (6, 10), (6, 10)),
    LayoutItem("nut", 2, "right", (5, 8), (5, 8)),
    LayoutItem("pin", 3, "bottom", (3, 5), (8, 12)),
)
DEFAULT_EXTRAS = (
    LayoutItem("screw", 1, None, (5, 8), (5, 8)),
    LayoutItem("bolt", 1, None, (4, 7), (6, 9)),
)


@dataclass(frozen=True)
class WorldSpec:
    width: int = 64
    height: int = 64
    layout: tuple[LayoutItem, ...] = DEFAULT_LAYOUT
    extras: tuple[LayoutItem, ...] = DEFAULT_EXTRAS
    object_dim: int = 64
    layers: tuple[tuple[str, int, int, int], ...] = (("clip", 8, 8, 32), ("dino", 8, 8, 48))
    noise_sigma: float = 0.05
    structural_factor: float = 5.0
    category: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        grids = {(hp, wp) for _, hp, wp, _ in self.layers}
        if len(grids) != 1:
            raise ValueError("all patch layers must share one grid")
        hp, wp = grids.pop()
        if hp > self.height or wp > self.width:
            raise ValueError("patch grid is finer than the canvas")
        names = [it.class_name for it in self.layout + self.extras]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique across layout and extras")
        cells = [it.cell for it in self.layout]
        if len(set(cells)) != len(cells) or any(c not in POSITIONS for c in cells):
            raise ValueError("layout items need distinct nine-grid cells")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return tuple(sorted(it.class_name for it in self.layout + self.extras))

    @property
    def grid(self) -> tuple[int, int]:
        return self.layers[0][1], self.layers[0][2]

    def item(self, class_name: str) -> LayoutItem:
        for it in self.layout + self.extras:
            if it.class_name == class_name:
                return it
        raise KeyError(class_name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        d = dict(d)
        for key in ("layout", "extras"):
            if key in d:
                d[key] = tuple(LayoutItem(it["class_name"], it["count"], it.get("cell"),
                                          tuple(it["width_range"]), tuple(it["height_range"]))
                               for it in d[key])
        if "layers" in d:
            d["layers"] = tuple(tuple(layer) for layer in d["layers"])
        return cls(**d)


def _unit_prototypes(names, dim, rng):
    protos: dict[str, np.ndarray] = {}
    for name in names:
        for _ in range(10000):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if all(float(v @ p) <= MAX_PROTOTYPE_COSINE for p in protos.values()):
                break
        else:
            raise ValueError(f"cannot draw {len(names)} separated prototypes in {dim} dims")
        protos[name] = v
    return protos


@functools.lru_cache(maxsize=32)
def prototypes(spec: WorldSpec) -> dict:
    """Object prototypes and per-layer patch prototypes, seeded by the world seed."""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    out = {"object": _unit_prototypes(spec.vocabulary, spec.object_dim, rng)}
    for lid, _, _, dim in spec.layers:
        out[lid] = _unit_prototypes((BACKGROUND,) + spec.vocabulary, dim, rng)
    return out


# --- geometry -------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    class_name: str
    x: int
    y: int
    w: int
    h: int

    def mask(self, width, height) -> Mask:
        bits = np.zeros((height, width), dtype=bool)
        bits[self.y:self.y + self.h, self.x:self.x + self.w] = True
        return Mask(bits)


def _cell_bounds(token: str, width: int, height: int):
    r, c = divmod(POSITIONS.index(token), 3)
    return c * width // 3, (c + 1) * width // 3, r * height // 3, (r + 1) * height // 3


def _third(coord: float, n: int) -> int:
    for c in range(2):
        if coord < (c + 1) * n // 3:
            return c
    return 2


def position_token(m: Mask) -> str:
    """Nine-grid cell containing the mask centroid."""
    ys, xs = np.nonzero(m.bits)
    cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
    return POSITIONS[3 * _third(cy, m.height) + _third(cx, m.width)]


def _place_in_cell(class_name, dims, token, width, height, rng) -> list[Rect]:
    x0, x1, y0, y1 = _cell_bounds(token, width, height)
    slot = (x1 - x0) // len(dims)
    rects = []
    for s, (w, h) in enumerate(dims):
        if w > slot or h > y1 - y0:
            raise ValueError(f"{len(dims)} x {class_name} of size {w}x{h} "
                             f"do not fit in the {token} cell")
        sx = x0 + s * slot
        rects.append(Rect(class_name, sx + int(rng.integers(slot - w + 1)),
                          y0 + int(rng.integers(y1 - y0 - h + 1)), w, h))
    return rects


def _fits(dims, token, width, height) -> bool:
    x0, x1, y0, y1 = _cell_bounds(token, width, height)
    slot = (x1 - x0) // len(dims)
    return all(w <= slot and h <= y1 - y0 for w, h in dims)


# --- rendering ------------------------------------------------------------------

def _noise(rng, shape, sigma):
    return rng.standard_normal(shape) * (sigma / np.sqrt(shape[-1]))


def _object_feature(spec, class_name, rng) -> np.ndarray:
    proto = prototypes(spec)["object"][class_name]
    return (proto + _noise(rng, proto.shape, spec.noise_sigma)).astype(np.float32)


def _clean_patches(spec: WorldSpec, rects) -> dict[str, np.ndarray]:
    hp, wp = spec.grid
    H, W = spec.height, spec.width
    rows = [(r * H // hp, (r + 1) * H // hp) for r in range(hp)]
    cols = [(c * W // wp, (c + 1) * W // wp) for c in range(wp)]
    cover: dict[str, np.ndarray] = {}
    for rect in rects:
        bits = rect.mask(W, H).bits
        cov = np.array([[bits[a:b, c:d].mean() for c, d in cols] for a, b in rows])
        cover[rect.class_name] = cover.get(rect.class_name, 0.0) + cov
    out = {}
    for lid, _, _, dim in spec.layers:
        protos = prototypes(spec)[lid]
        bg_weight = np.ones((hp, wp))
        grid = np.zeros((hp, wp, dim))
        for name, cov in sorted(cover.items()):
            grid += cov[..., None] * protos[name]
            bg_weight -= cov
        grid += np.clip(bg_weight, 0.0, 1.0)[..., None] * protos[BACKGROUND]
        out[lid] = grid / np.linalg.norm(grid, axis=-1, keepdims=True)
    return out


def _text(image_id: str, rects, width, height) -> tuple[ImageText, dict[str, Mask]]:
    masks: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for rect in rects:
        bits = rect.mask(width, height).bits
        masks[rect.class_name] = masks.get(rect.class_name, False) | bits
        counts[rect.class_name] = counts.get(rect.class_name, 0) + 1
    cat_masks = {name: Mask(bits) for name, bits in masks.items()}
    entries = [CategoryText(name, counts[name], position_token(m), mask_area_fraction(m))
               for name, m in cat_masks.items()]
    return ImageText(image_id, tuple(entries)), cat_masks


def _assemble(spec, image_id, rects, features, patches, label="normal", gt=None) -> SceneBundle:
    text, cat_masks = _text(image_id, rects, spec.width, spec.height)
    objects = tuple((f, r.mask(spec.width, spec.height)) for f, r in zip(features, rects))
    layers = tuple((lid, patches[lid].astype(np.float32)) for lid, *_ in spec.layers)
    return SceneBundle(image_id, spec.width, spec.height, text, cat_masks, objects,
                       PatchFeatureMap(layers), gt, label, spec.category, ("synth",))


def generate_normal_scene(spec: WorldSpec, index: int) -> SceneBundle:
    """Normal scene number ``index``.

    Index 0 uses the smallest rectangle sizes of every layout item and index 1 the
    largest, so any bank holding both spans the full size range of later scenes.
    """
    rng = np.random.default_rng([spec.seed, index])
    rects: list[Rect] = []
    for it in spec.layout:
        (wl, wh), (hl, hh) = it.width_range, it.height_range
        if index == 0:
            dims = [(wl, hl)] * it.count
        elif index == 1:
            dims = [(wh, hh)] * it.count
        else:
            dims = [(int(rng.integers(wl, wh + 1)), int(rng.integers(hl, hh + 1)))
                    for _ in range(it.count)]
        rects += _place_in_cell(it.class_name, dims, it.cell, spec.width, spec.height, rng)
    obj_rng = np.random.default_rng([spec.seed, index, 1])
    features = [_object_feature(spec, r.class_name, obj_rng) for r in rects]
    clean = _clean_patches(spec, rects)
    noise_rng = np.random.default_rng([spec.seed, index, 2])
    patches = {lid: g + _noise(noise_rng, g.shape, spec.noise_sigma) for lid, g in clean.items()}
    return _assemble(spec, f"{spec.category}-{index:05d}", rects, features, patches)


# --- anomaly injection ------------------------------------------------------------

def _recover_rects(scene: SceneBundle) -> list[Rect]:
    rects = []
    for _, m in scene.objects:
        ys, xs = np.nonzero(m.bits)
        y, x = int(ys.min()), int(xs.min())
        h, w = int(ys.max()) - y + 1, int(xs.max()) - x + 1
        owner = [name for name, cm in scene.category_masks.items() if cm.bits[y, x]]
        if len(owner) != 1 or not m.bits[y:y + h, x:x + w].all():
            raise ValueError(f"scene {scene.image_id!r} was not produced by this generator")
        rects.append(Rect(owner[0], x, y, w, h))
    return rects


def _free_cells(rects, width, height) -> list[str]:
    free = []
    for token in POSITIONS:
        x0, x1, y0, y1 = _cell_bounds(token, width, height)
        if not any(r.x < x1 and r.x + r.w > x0 and r.y < y1 and r.y + r.h > y0 for r in rects):
            free.append(token)
    return free


def _union(rects, width, height) -> Mask:
    bits = np.zeros((height, width), dtype=bool)
    for r in rects:
        bits |= r.mask(width, height).bits
    return Mask(bits)


def inject_anomaly(scene: SceneBundle, kind: str, spec: WorldSpec, seed: int) -> SceneBundle:
    """Apply one anomaly edit to a generated scene and label it anomalous."""
    if kind not in ANOMALY_KINDS:
        raise ValueError(f"unknown anomaly kind {kind!r}")
    rng = np.random.default_rng([spec.seed, seed, ANOMALY_KINDS.index(kind), 7])
    W, H = spec.width, spec.height
    image_id = f"{scene.image_id}-{kind}"

    if kind == "structural":
        return _structural(scene, spec, rng, image_id)

    rects = _recover_rects(scene)
    features = [f for f, _ in scene.objects]
    present = sorted({r.class_name for r in rects})
    free = _free_cells(rects, W, H)

    if kind in ("missing-class", "extra-count", "moved", "resized"):
        if not present:
            raise ValueError(f"{kind} needs at least one object in the scene")
        target = present[int(rng.integers(len(present)))]
        own = [r for r in rects if r.class_name == target]
        keep = [(r, f) for r, f in zip(rects, features) if r.class_name != target]
        own_feats = [f for r, f in zip(rects, features) if r.class_name == target]

    if kind == "missing-class":
        new_rects = [r for r, _ in keep]
        new_feats = [f for _, f in keep]
        gt = _union(own, W, H)
    elif kind == "extra-count":
        if not free:
            raise ValueError("no free cell for an extra object")
        it = spec.item(target)
        dims = [(int(rng.integers(it.width_range[0], it.width_range[1] + 1)),
                 int(rng.integers(it.height_range[0], it.height_range[1] + 1)))]
        cell = free[int(rng.integers(len(free)))]
        added = _place_in_cell(target, dims, cell, W, H, rng)
        new_rects = rects + added
        new_feats = features + [_object_feature(spec, target, rng)]
        gt = _union(own + added, W, H)
    elif kind == "moved":
        dims = [(r.w, r.h) for r in own]
        cells = [c for c in free if _fits(dims, c, W, H)]
        if not cells:
            raise ValueError(f"no free cell can hold the moved {target!r} objects")
        moved = _place_in_cell(target, dims, cells[int(rng.integers(len(cells)))], W, H, rng)
        new_rects = [r for r, _ in keep] + moved
        new_feats = [f for _, f in keep] + own_feats
        gt = _union(own + moved, W, H)
    elif kind == "resized":
        it = spec.item(target)
        cell = position_token(_union(own, W, H))
        n = len(own)
        grow = [(it.width_range[1] + 1, it.height_range[1] + 1)] * n
        shrink = [(it.width_range[0] - 1, it.height_range[0] - 1)] * n
        options = [d for d in (grow, shrink) if min(d[0]) >= 1 and _fits(d, cell, W, H)]
        if not options:
            raise ValueError(f"cannot resize {target!r} inside its cell")
        dims = options[int(rng.integers(len(options)))]
        resized = _place_in_cell(target, dims, cell, W, H, rng)
        new_rects = [r for r, _ in keep] + resized
        new_feats = [f for _, f in keep] + own_feats
        gt = _union(own + resized, W, H)
    else:  # extra-class
        absent = [c for c in spec.vocabulary if c not in present]
        if not absent or not free:
            raise ValueError("no absent class or free cell for an extra-class anomaly")
        name = absent[int(rng.integers(len(absent)))]
        it = spec.item(name)
        dims = [(int(rng.integers(it.width_range[0], it.width_range[1] + 1)),
                 int(rng.integers(it.height_range[0], it.height_range[1] + 1)))]
        added = _place_in_cell(name, dims, free[int(rng.integers(len(free)))], W, H, rng)
        new_rects = rects + added
        new_feats = features + [_object_feature(spec, name, rng)]
        gt = _union(added, W, H)

    old_clean = _clean_patches(spec, rects)
    new_clean = _clean_patches(spec, new_rects)
    patches = {}
    for lid, grid in scene.patches.layers:
        changed = np.any(old_clean[lid] != new_clean[lid], axis=-1)
        out = grid.astype(np.float64)
        fresh = new_clean[lid] + _noise(rng, new_clean[lid].shape, spec.noise_sigma)
        out[changed] = fresh[changed]
        patches[lid] = out
    # unchanged cells go float32 -> float64 -> float32, which is exact
    return _assemble(spec, image_id, new_rects, new_feats, patches, "anomalous", gt)


def _structural(scene: SceneBundle, spec: WorldSpec, rng, image_id: str) -> SceneBundle:
    magnitude = spec.structural_factor * spec.noise_sigma
    if magnitude <= 0:
        raise ValueError("structural anomalies need noise_sigma > 0")
    hp, wp = scene.patches.grid
    ph, pw = max(1, hp // 4), max(1, wp // 4)
    r0 = int(rng.integers(hp - ph + 1))
    c0 = int(rng.integers(wp - pw + 1))
    layers = []
    for lid, grid in scene.patches.layers:
        out = grid.astype(np.float64)
        block = out[r0:r0 + ph, c0:c0 + pw].reshape(-1, out.shape[-1])
        for v in block:
            u = rng.standard_normal(v.size)
            u -= (u @ v) / (v @ v) * v
            u /= np.linalg.norm(u)
            v += magnitude * np.linalg.norm(v) * u
        out[r0:r0 + ph, c0:c0 + pw] = block.reshape(ph, pw, -1)
        layers.append((lid, out.astype(np.float32)))
    H, W = scene.height, scene.width
    gt = np.zeros((H, W), dtype=bool)
    gt[r0 * H // hp:(r0 + ph) * H // hp, c0 * W // wp:(c0 + pw) * W // wp] = True
    return replace(scene, image_id=image_id, patches=PatchFeatureMap(tuple(layers)),
                   gt_anomaly=Mask(gt), label="anomalous",
                   text=ImageText(image_id, scene.text.entries))


def generate_suite(spec: WorldSpec, n_train: int, n_test_normal: int,
                   n_per_kind: int, kinds=ANOMALY_KINDS):
    """Training normals, then test normals followed by anomalies of each kind."""
    train = [generate_normal_scene(spec, i) for i in range(n_train)]
    test = [generate_normal_scene(spec, n_train + i) for i in range(n_test_normal)]
    base = n_train + n_test_normal
    for k, kind in enumerate(kinds):
        for i in range(n_per_kind):
            idx = base + k * n_per_kind + i
            test.append(inject_anomaly(generate_normal_scene(spec, idx), kind, spec, idx))
    return train, test
