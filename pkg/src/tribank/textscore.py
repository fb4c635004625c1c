"""Class-level text anomaly scoring.

A query description is compared against the most similar stored description
(gestalt string similarity over canonical serializations). Each disagreement is
localized back into the image: the query's category mask for extra, miscounted,
misplaced or missized classes, and the bank occurrence mask for missing classes.
"""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .core import ImageText, ScoreMap, SceneBundle, resize_mask_nearest
from .textbank import TextBank, serialize_text, size_range

VIOLATION_KINDS = ("extra-class", "count", "position", "size-over", "size-under", "missing-class")


@dataclass(frozen=True)
class Violation:
    class_name: str
    kind: str
    alpha: float = 1.0


@dataclass(frozen=True)
class MatchReport:
    matched_image_id: str
    similarity: float
    violations: tuple[Violation, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "matched_image_id": self.matched_image_id,
            "similarity": self.similarity,
            "violations": [
                {"class_name": v.class_name, "kind": v.kind, "alpha": v.alpha}
                for v in self.violations
            ],
        }


def _longest_match(a, b2j, alo, ahi, blo, bhi):
    # Longest common block in a[alo:ahi] x b[blo:bhi]; ties go to the earliest start
    # in a, then the earliest start in b.
    best_i, best_j, best = alo, blo, 0
    lengths: dict[int, int] = {}
    for i in range(alo, ahi):
        positions = b2j.get(a[i])
        new_lengths = {}
        if positions:
            start = bisect.bisect_left(positions, blo)
            for j in positions[start:]:
                if j >= bhi:
                    break
                k = lengths.get(j - 1, 0) + 1
                new_lengths[j] = k
                if k > best:
                    best_i, best_j, best = i - k + 1, j - k + 1, k
        lengths = new_lengths
    return best_i, best_j, best


def matched_characters(a: str, b: str) -> int:
    """Total characters matched by recursive longest-common-substring splitting."""
    b2j = defaultdict(list)
    for j, ch in enumerate(b):
        b2j[ch].append(j)
    total = 0
    stack = [(0, len(a), 0, len(b))]
    while stack:
        alo, ahi, blo, bhi = stack.pop()
        i, j, k = _longest_match(a, b2j, alo, ahi, blo, bhi)
        if k:
            total += k
            if alo < i and blo < j:
                stack.append((alo, i, blo, j))
            if i + k < ahi and j + k < bhi:
                stack.append((i + k, ahi, j + k, bhi))
    return total


def gestalt_ratio(a: str, b: str) -> float:
    """Ratcliff-Obershelp similarity ``2M / (|a| + |b|)``; two empty strings score 1."""
    n = len(a) + len(b)
    if n == 0:
        return 1.0
    return 2.0 * matched_characters(a, b) / n


def _ratio_upper_bound(a: str, b: str) -> float:
    n = len(a) + len(b)
    if n == 0:
        return 1.0
    counts: dict[str, int] = {}
    for ch in b:
        counts[ch] = counts.get(ch, 0) + 1
    common = 0
    for ch in a:
        if counts.get(ch, 0) > 0:
            counts[ch] -= 1
            common += 1
    return 2.0 * common / n


def find_most_similar(bank: TextBank, query: ImageText) -> tuple[ImageText, float]:
    """Best gestalt match in the bank; ties go to the smallest image_id."""
    if not bank.entries:
        raise ValueError("text bank is empty")
    q = serialize_text(query)
    best: ImageText | None = None
    best_score = -1.0
    cache: dict[str, float] = {}
    for entry in bank.entries:
        s = serialize_text(entry)
        if s in cache:
            score = cache[s]
        else:
            # multiset bound prunes candidates that cannot reach the current best
            if _ratio_upper_bound(q, s) < best_score:
                continue
            score = cache[s] = gestalt_ratio(q, s)
        if score > best_score or (score == best_score and entry.image_id < best.image_id):
            best, best_score = entry, score
    return best, best_score


def size_alpha(size: float, s_min: float, s_max: float) -> float:
    """Normalized out-of-range size deviation, clamped to [0, 1]."""
    if s_min > s_max:
        raise ValueError(f"inverted size range ({s_min}, {s_max})")
    if s_min <= size <= s_max:
        return 0.0
    if s_max == s_min:
        return 1.0
    bound = s_max if size > s_max else s_min
    return min(1.0, abs(size - bound) / (s_max - s_min))


def text_anomaly_map(query: SceneBundle, bank: TextBank,
                     relaxed: bool = False) -> tuple[ScoreMap, MatchReport]:
    w, h = query.width, query.height
    for entry in query.text.entries:
        if entry.class_name not in query.category_masks:
            raise ValueError(f"query {query.image_id!r}: class {entry.class_name!r} "
                             "has no category mask")
    sim, similarity = find_most_similar(bank, query.text)

    score = np.zeros((h, w))
    violations: list[Violation] = []

    def hit(bits, name, kind, alpha=1.0):
        np.maximum(score, alpha * bits, out=score)
        violations.append(Violation(name, kind, alpha))

    for q in query.text.entries:
        bits = query.category_masks[q.class_name].bits
        ref = sim.get(q.class_name)
        if ref is None:
            hit(bits, q.class_name, "extra-class")
            continue
        if relaxed:
            continue
        if q.count != ref.count:
            hit(bits, q.class_name, "count")
        elif q.position != ref.position:
            hit(bits, q.class_name, "position")
        else:
            s_min, s_max = size_range(bank, q.class_name)
            alpha = size_alpha(q.size, s_min, s_max)
            if alpha > 0.0:
                kind = "size-over" if q.size > s_max else "size-under"
                hit(bits, q.class_name, kind, alpha)

    present = set(query.text.classes)
    for ref in sim.entries:
        if ref.class_name not in present:
            occ = resize_mask_nearest(bank.occurrence[ref.class_name], w, h)
            hit(occ.bits, ref.class_name, "missing-class")

    report = MatchReport(sim.image_id, similarity, tuple(violations))
    return ScoreMap(score), report
