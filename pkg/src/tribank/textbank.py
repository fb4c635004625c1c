"""Class-level text memory bank: stored descriptions, size ranges, occurrence masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ImageText, Mask, SceneBundle, resize_mask_nearest

DEFAULT_BANK_RESOLUTION = (448, 448)


@dataclass(frozen=True)
class TextBank:
    entries: tuple[ImageText, ...]
    size_ranges: dict[str, tuple[float, float]]
    occurrence: dict[str, Mask]
    bank_resolution: tuple[int, int] = DEFAULT_BANK_RESOLUTION

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "size_ranges", dict(sorted(self.size_ranges.items())))
        object.__setattr__(self, "occurrence", dict(sorted(self.occurrence.items())))
        object.__setattr__(self, "bank_resolution", tuple(int(v) for v in self.bank_resolution))
        w, h = self.bank_resolution
        for name, m in self.occurrence.items():
            if (m.width, m.height) != (w, h):
                raise ValueError(f"occurrence mask {name!r} is not at bank resolution {w}x{h}")
        for name, (lo, hi) in self.size_ranges.items():
            if lo > hi:
                raise ValueError(f"size range for {name!r} is inverted: ({lo}, {hi})")

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.size_ranges)


def build_text_bank(scenes: Sequence[SceneBundle],
                    bank_resolution: tuple[int, int] = DEFAULT_BANK_RESOLUTION) -> TextBank:
    """Fold normal scenes into a text bank.

    Every scene contributes its description verbatim (no deduplication), widens the
    per-class size extremes and ORs its category masks into the class occurrence mask.
    """
    if not scenes:
        raise ValueError("cannot build a text bank from zero scenes")
    w, h = (int(v) for v in bank_resolution)
    if w < 1 or h < 1:
        raise ValueError("bank resolution must be positive")

    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    occ: dict[str, np.ndarray] = {}
    for scene in scenes:
        if scene.label != "normal":
            raise ValueError(f"scene {scene.image_id!r} is not labeled normal")
        for entry in scene.text.entries:
            name = entry.class_name
            if name not in scene.category_masks:
                raise ValueError(f"scene {scene.image_id!r}: class {name!r} has no category mask")
            lo[name] = min(lo.get(name, entry.size), entry.size)
            hi[name] = max(hi.get(name, entry.size), entry.size)
            bits = resize_mask_nearest(scene.category_masks[name], w, h).bits
            if name in occ:
                occ[name] |= bits
            else:
                occ[name] = bits.copy()

    return TextBank(
        entries=tuple(s.text for s in scenes),
        size_ranges={k: (lo[k], hi[k]) for k in lo},
        occurrence={k: Mask(v) for k, v in occ.items()},
        bank_resolution=(w, h),
    )


def size_range(bank: TextBank, class_name: str) -> tuple[float, float]:
    try:
        return bank.size_ranges[class_name]
    except KeyError:
        raise KeyError(f"class {class_name!r} is not in the text bank") from None


def serialize_text(t: ImageText) -> str:
    """Canonical ``class:count:position:size`` rendering, sizes to two decimals."""
    return ";".join(f"{e.class_name}:{e.count}:{e.position}:{e.size:.2f}" for e in t.entries)
