#!/usr/bin/env python
"""Class-level text matching on hand-drawn 8x8 scenes.

A scene is described by one token per class (count, nine-grid position,
area fraction). The bank stores the normal descriptions, the size range of
each class and where each class has ever been seen. A query is matched to
its most similar normal description, then checked field by field.
"""
import numpy as np

from tribank.core import CategoryText, ImageText, Mask, SceneBundle
from tribank.textbank import build_text_bank, serialize_text
from tribank.textscore import gestalt_ratio, text_anomaly_map

W = H = 8


def box(x0, y0, x1, y1):
    bits = np.zeros((H, W), bool)
    bits[y0:y1, x0:x1] = True
    return Mask(bits)


def scene(image_id, classes, label="normal"):
    entries = tuple(CategoryText(n, c, p, s) for n, (c, p, s, _) in classes.items())
    return SceneBundle(image_id, W, H, ImageText(image_id, entries),
                       {n: m for n, (*_, m) in classes.items()}, (), None, label=label)


pin, nut = box(0, 0, 5, 2), box(5, 5, 8, 8)
normals = [scene(f"n{i}", {"pin": (3, "top", s, pin), "nut": (1, "bottom-right", 0.14, nut)})
           for i, s in enumerate((0.10, 0.20))]

bank = build_text_bank(normals, bank_resolution=(W, H))
for e in bank.entries:
    print(serialize_text(e))
print("size ranges", bank.size_ranges)

# The similarity used for matching is the classic gestalt ratio.
print(gestalt_ratio("abcd", "bcde"))

# %% A pin that grew past the largest normal pin by half the normal range.
q = scene("q", {"pin": (3, "top", 0.25, pin), "nut": (1, "bottom-right", 0.14, nut)}, "anomalous")
s_t, report = text_anomaly_map(q, bank)
print(report.to_dict())
print(s_t.values)

# %% A missing nut is painted where nuts usually sit.
q = scene("q2", {"pin": (3, "top", 0.15, pin)}, "anomalous")
s_t, report = text_anomaly_map(q, bank)
print([v.kind for v in report.violations])
print(s_t.values.astype(int))

# Relaxed mode only checks which classes are present.
print(text_anomaly_map(q, bank, relaxed=True)[1].violations)
