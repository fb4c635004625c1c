"""Domain types, mask algebra and resampling primitives shared by every bank."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

POSITIONS = (
    "top-left", "top", "top-right",
    "left", "center", "right",
    "bottom-left", "bottom", "bottom-right",
)

RLE_MAGIC = b"TMRL"
RASTER_MAGIC = b"TMSF"


class FormatError(ValueError):
    """Raised when a serialized artifact cannot be decoded."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _check_token(name: str, what: str) -> None:
    if not isinstance(name, str) or not name:
        raise ValueError(f"{what} must be a nonempty string")
    if any(ch in name for ch in ":;\n"):
        raise ValueError(f"{what} {name!r} contains a reserved separator")


@dataclass(frozen=True)
class CategoryText:
    class_name: str
    count: int
    position: str
    size: float

    def __post_init__(self):
        _check_token(self.class_name, "class_name")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"count must be a positive integer, got {self.count!r}")
        if self.position not in POSITIONS:
            raise ValueError(f"unknown position token {self.position!r}")
        if not 0.0 <= self.size <= 1.0:
            raise ValueError(f"size must lie in [0, 1], got {self.size!r}")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "size", float(self.size))


@dataclass(frozen=True)
class ImageText:
    """Structured description of one image, one entry per object category."""

    image_id: str
    entries: tuple[CategoryText, ...] = ()

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: e.class_name))
        names = [e.class_name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class entries in {self.image_id!r}")
        object.__setattr__(self, "entries", entries)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(e.class_name for e in self.entries)

    def get(self, class_name: str) -> CategoryText | None:
        for e in self.entries:
            if e.class_name == class_name:
                return e
        return None


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary H x W raster."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a nonempty 2-D grid, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits))

    @classmethod
    def zeros(cls, width: int, height: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __or__(self, other: "Mask") -> "Mask":
        _same_shape(self.bits, other.bits)
        return Mask(self.bits | other.bits)

    def __repr__(self):
        return f"Mask({self.width}x{self.height}, {int(self.bits.sum())} set)"


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Real-valued H x W anomaly map; every value lies in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"score map must be a nonempty 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("score map contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("score map values must lie in [0, 1]; use ScoreMap.clamped")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def clamped(cls, values) -> "ScoreMap":
        return cls(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0))

    @classmethod
    def zeros(cls, width: int, height: int) -> "ScoreMap":
        return cls(np.zeros((height, width)))

    @classmethod
    def from_mask(cls, mask: Mask, weight: float = 1.0) -> "ScoreMap":
        return cls.clamped(mask.bits * float(weight))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def max(self) -> float:
        return float(self.values.max())

    def __eq__(self, other):
        if not isinstance(other, ScoreMap):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"ScoreMap({self.width}x{self.height}, max={self.max():.4g})"


def as_feature(values, dim: int | None = None) -> np.ndarray:
    """Validate a feature vector: 1-D, finite, optionally of a given dimension."""
    vec = np.asarray(values)
    if vec.ndim != 1 or vec.size == 0:
        raise ValueError(f"feature vector must be 1-D and nonempty, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("feature vector contains non-finite values")
    if dim is not None and vec.size != dim:
        raise ValueError(f"feature dimension mismatch: expected {dim}, got {vec.size}")
    return vec


@dataclass(frozen=True, eq=False)
class PatchFeatureMap:
    """Multi-layer patch descriptors; every layer shares the same Hp x Wp grid."""

    layers: tuple[tuple[str, np.ndarray], ...]

    def __post_init__(self):
        layers = []
        grid = None
        for layer_id, arr in self.layers:
            _check_token(layer_id, "layer_id")
            arr = np.array(arr, copy=True)
            if arr.ndim != 3 or 0 in arr.shape:
                raise ValueError(f"layer {layer_id!r} must be a nonempty Hp x Wp x D grid")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"layer {layer_id!r} contains non-finite values")
            if grid is None:
                grid = arr.shape[:2]
            elif arr.shape[:2] != grid:
                raise ValueError(f"layer {layer_id!r} grid {arr.shape[:2]} differs from {grid}")
            layers.append((layer_id, _frozen(arr)))
        if not layers:
            raise ValueError("patch feature map needs at least one layer")
        ids = [lid for lid, _ in layers]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate layer ids")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def grid(self) -> tuple[int, int]:
        return self.layers[0][1].shape[:2]

    @property
    def layer_ids(self) -> tuple[str, ...]:
        return tuple(lid for lid, _ in self.layers)

    def layer(self, layer_id: str) -> np.ndarray:
        for lid, arr in self.layers:
            if lid == layer_id:
                return arr
        raise KeyError(layer_id)

    def __eq__(self, other):
        if not isinstance(other, PatchFeatureMap):
            return NotImplemented
        if self.layer_ids != other.layer_ids:
            return False
        return all(a.dtype == b.dtype and np.array_equal(a, b)
                   for (_, a), (_, b) in zip(self.layers, other.layers))


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """Everything the extractors produced for one image."""

    image_id: str
    width: int
    height: int
    text: ImageText
    category_masks: dict[str, Mask]
    objects: tuple[tuple[np.ndarray, Mask], ...]
    patches: PatchFeatureMap
    gt_anomaly: Mask | None = None
    label: str = "normal"
    category: str = "default"
    provenance: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.label not in ("normal", "anomalous"):
            raise ValueError(f"label must be 'normal' or 'anomalous', got {self.label!r}")
        _check_token(self.category, "image category")
        shape = (self.height, self.width)
        extra = set(self.category_masks) - set(self.text.classes)
        if extra:
            raise ValueError(f"category masks for classes missing from the text: {sorted(extra)}")
        for name, m in self.category_masks.items():
            if m.bits.shape != shape:
                raise ValueError(f"category mask {name!r} is {m.width}x{m.height}, "
                                 f"image is {self.width}x{self.height}")
        objects = []
        for feat, m in self.objects:
            if m.bits.shape != shape:
                raise ValueError("object mask does not fit the image")
            objects.append((_frozen(np.array(as_feature(feat), copy=True)), m))
        if self.gt_anomaly is not None and self.gt_anomaly.bits.shape != shape:
            raise ValueError("ground-truth mask does not fit the image")
        object.__setattr__(self, "category_masks", dict(sorted(self.category_masks.items())))
        object.__setattr__(self, "objects", tuple(objects))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def object_dim(self) -> int | None:
        return self.objects[0][0].size if self.objects else None

    def __eq__(self, other):
        if not isinstance(other, SceneBundle):
            return NotImplemented
        head = ("image_id", "width", "height", "text", "category_masks", "patches",
                "gt_anomaly", "label", "category", "provenance")
        if any(getattr(self, k) != getattr(other, k) for k in head):
            return False
        if len(self.objects) != len(other.objects):
            return False
        return all(fa.dtype == fb.dtype and np.array_equal(fa, fb) and ma == mb
                   for (fa, ma), (fb, mb) in zip(self.objects, other.objects))


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[::-1]} vs {b.shape[::-1]}")


def cosine_similarity(a, b) -> float:
    a = as_feature(a).astype(np.float64)
    b = as_feature(b).astype(np.float64)
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def mask_area_fraction(m: Mask) -> float:
    return float(np.count_nonzero(m.bits)) / m.bits.size


def pixelwise_max(a: ScoreMap, b: ScoreMap) -> ScoreMap:
    _same_shape(a.values, b.values)
    return ScoreMap(np.maximum(a.values, b.values))


def union_masks(masks: Iterable[Mask], width: int, height: int) -> Mask:
    bits = np.zeros((height, width), dtype=bool)
    for m in masks:
        _same_shape(bits, m.bits)
        bits |= m.bits
    return Mask(bits)


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    # pixel-centre mapping, integer arithmetic: floor((i + 0.5) * n_in / n_out)
    i = np.arange(n_out)
    return ((2 * i + 1) * n_in) // (2 * n_out)


def resize_mask_nearest(m: Mask, w: int, h: int) -> Mask:
    if w < 1 or h < 1:
        raise ValueError("target size must be at least 1x1")
    if (w, h) == (m.width, m.height):
        return m
    rows = _nearest_index(h, m.height)
    cols = _nearest_index(w, m.width)
    return Mask(m.bits[np.ix_(rows, cols)])


def _corner_aligned(n_out: int, n_in: int):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def upsample_bilinear(s: ScoreMap | np.ndarray, w: int, h: int) -> ScoreMap:
    """Corner-aligned bilinear upsampling (output corners land on input corners)."""
    values = s.values if isinstance(s, ScoreMap) else np.asarray(s, dtype=np.float64)
    hin, win = values.shape
    if w < win or h < hin:
        raise ValueError(f"cannot downsize {win}x{hin} to {w}x{h}")
    y0, y1, fy = _corner_aligned(h, hin)
    x0, x1, fx = _corner_aligned(w, win)
    fx = fx[None, :]
    top = values[y0][:, x0] * (1.0 - fx) + values[y0][:, x1] * fx
    bottom = values[y1][:, x0] * (1.0 - fx) + values[y1][:, x1] * fx
    out = top * (1.0 - fy[:, None]) + bottom * fy[:, None]
    # convex combinations; clip only guards against rounding past the input range
    return ScoreMap(np.clip(out, values.min(), values.max()))


# --- binary codecs -----------------------------------------------------------

def encode_rle(m: Mask) -> bytes:
    """Row-major run lengths, alternating false/true, starting with false."""
    flat = m.bits.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    head = RLE_MAGIC + struct.pack("<II", m.width, m.height)
    return head + runs.astype("<u4").tobytes()


def decode_rle(data: bytes) -> Mask:
    if len(data) < 12 or data[:4] != RLE_MAGIC:
        raise FormatError("not an RLE mask (bad magic)")
    width, height = struct.unpack_from("<II", data, 4)
    if (len(data) - 12) % 4:
        raise FormatError("RLE payload is not a whole number of u32 runs")
    runs = np.frombuffer(data, dtype="<u4", offset=12).astype(np.int64)
    if runs.sum() != width * height:
        raise FormatError(f"RLE runs cover {runs.sum()} pixels, expected {width * height}")
    values = np.arange(runs.size) % 2 == 1
    if width == 0 or height == 0:
        raise FormatError("RLE mask has zero size")
    return Mask(np.repeat(values, runs).reshape(height, width))


def encode_raster(s: ScoreMap) -> bytes:
    return RASTER_MAGIC + struct.pack("<II", s.width, s.height) + s.values.astype("<f4").tobytes()


def decode_raster(data: bytes) -> ScoreMap:
    if len(data) < 12 or data[:4] != RASTER_MAGIC:
        raise FormatError("not a float raster (bad magic)")
    width, height = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * width * height:
        raise FormatError("float raster size does not match its header")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    return ScoreMap.clamped(values)


def encode_pgm(s: ScoreMap) -> bytes:
    """8-bit binary PGM preview, values scaled by 255."""
    pix = np.round(s.values * 255.0).astype(np.uint8)
    return f"P5\n{s.width} {s.height}\n255\n".encode("ascii") + pix.tobytes()


def stack_features(feats: Sequence[np.ndarray]) -> np.ndarray:
    if not feats:
        raise ValueError("no feature vectors given")
    dims = {np.asarray(f).size for f in feats}
    if len(dims) != 1:
        raise ValueError(f"feature dimensions differ: {sorted(dims)}")
    return np.stack([as_feature(f) for f in feats])
