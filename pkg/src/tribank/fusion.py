"""Weighted map fusion, image-level scores and AUROC evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .config import FusionConfig
from .core import ScoreMap

BANKS = ("text", "object", "patch")


class UndefinedMetricError(ValueError):
    """AUROC requested on data that lacks one of the two label classes."""


def fuse(s_text: ScoreMap, s_object: ScoreMap, s_patch: ScoreMap,
         cfg: FusionConfig | None = None) -> ScoreMap:
    cfg = cfg or FusionConfig()
    shapes = {s_text.values.shape, s_object.values.shape, s_patch.values.shape}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch between score maps: {sorted(shapes)}")
    out = (cfg.lambda_text * s_text.values
           + cfg.lambda_object * s_object.values
           + cfg.lambda_patch * s_patch.values)
    return ScoreMap.clamped(out)


def image_score(s_pixel: ScoreMap) -> float:
    return s_pixel.max()


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks: P(pos > neg) + P(pos == neg) / 2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class QueryRecord:
    image_id: str
    category: str
    label: str
    s_image: float
    s_text: float
    s_object: float
    s_patch: float


@dataclass(frozen=True)
class MetricsReport:
    image_auroc: float
    pixel_auroc: float | None
    bank_image_auroc: dict[str, float]
    bank_pixel_auroc: dict[str, float | None]
    records: tuple[QueryRecord, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["records"] = [asdict(r) for r in self.records]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = list(QueryRecord.__dataclass_fields__)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.records:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in (getattr(r, c) for c in cols)])
        return buf.getvalue()


def _pixel_auroc(maps: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float | None:
    if not maps:
        return None
    scores = np.concatenate([m.ravel() for m in maps])
    labels = np.concatenate([g.ravel() for g in gts]).astype(np.int8)
    if labels.min() == labels.max():
        return None
    return auroc(scores, labels)


def evaluate(banks, queries, cfg: FusionConfig | None = None,
             relaxed: bool | None = None) -> MetricsReport:
    """Score every query and report image/pixel AUROC for the fused map and each bank.

    Pixel AUROC pools pixels over all queries that carry ground truth; normal queries
    count as all-negative, anomalous queries without a mask are left out.
    """
    from .pipeline import score_query

    records = []
    per_bank_img = {b: [] for b in BANKS}
    fused_px, bank_px, gts = [], {b: [] for b in BANKS}, []
    for q in queries:
        sc = score_query(banks, q, cfg, relaxed)
        maps = {"text": sc.text_map, "object": sc.object_map, "patch": sc.patch_map}
        records.append(QueryRecord(q.image_id, q.category, q.label, sc.image_score,
                                   *(maps[b].max() for b in BANKS)))
        for b in BANKS:
            per_bank_img[b].append(maps[b].max())
        if q.label == "normal":
            gt = np.zeros((q.height, q.width), dtype=bool)
        elif q.gt_anomaly is not None:
            gt = q.gt_anomaly.bits
        else:
            continue
        gts.append(gt)
        fused_px.append(sc.pixel_map.values)
        for b in BANKS:
            bank_px[b].append(maps[b].values)

    labels = [1 if r.label == "anomalous" else 0 for r in records]
    return MetricsReport(
        image_auroc=auroc([r.s_image for r in records], labels),
        pixel_auroc=_pixel_auroc(fused_px, gts),
        bank_image_auroc={b: auroc(per_bank_img[b], labels) for b in BANKS},
        bank_pixel_auroc={b: _pixel_auroc(bank_px[b], gts) for b in BANKS},
        records=tuple(records),
    )
