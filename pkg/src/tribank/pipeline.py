"""Bank assembly and per-query scoring across the three banks."""

from __future__ import annotations

from dataclasses import dataclass

from .config import EngineConfig, FusionConfig
from .core import ScoreMap, SceneBundle
from .featbank import ObjectBank, PatchBank, build_object_bank, build_patch_bank, group_by_category
from .featscore import object_anomaly_map, patch_anomaly_map
from .fusion import fuse
from .textbank import TextBank, build_text_bank
from .textscore import MatchReport, text_anomaly_map


@dataclass(frozen=True)
class BankSet:
    """Text banks per image category plus the shared object and patch banks."""

    text_banks: dict[str, TextBank]
    object_bank: ObjectBank
    patch_bank: PatchBank
    config: EngineConfig

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(sorted(self.text_banks))

    def text_bank(self, category: str) -> TextBank:
        try:
            return self.text_banks[category]
        except KeyError:
            raise KeyError(f"no text bank for category {category!r}") from None


def build_banks(scenes, config: EngineConfig | None = None) -> BankSet:
    cfg = config or EngineConfig()
    for s in scenes:
        if s.label != "normal":
            raise ValueError(f"bank input {s.image_id!r} is labeled {s.label!r}; "
                             "banks are built from normal images only")
    groups = group_by_category(scenes)
    if not groups:
        raise ValueError("no scenes to build banks from")
    text = {cat: build_text_bank(g, cfg.bank_resolution) for cat, g in sorted(groups.items())}
    return BankSet(
        text_banks=text,
        object_bank=build_object_bank(groups, cfg.k_object, cfg.seed),
        patch_bank=build_patch_bank(groups, cfg.k_patch, cfg.seed),
        config=cfg,
    )


@dataclass(frozen=True)
class QueryScores:
    image_id: str
    category: str
    label: str
    text_map: ScoreMap
    object_map: ScoreMap
    patch_map: ScoreMap
    pixel_map: ScoreMap
    match: MatchReport

    @property
    def image_score(self) -> float:
        return self.pixel_map.max()


def score_query(banks: BankSet, query: SceneBundle, fusion: FusionConfig | None = None,
                relaxed: bool | None = None) -> QueryScores:
    fusion = fusion or banks.config.fusion
    relaxed = banks.config.relaxed if relaxed is None else relaxed
    cat = query.category
    s_t, report = text_anomaly_map(query, banks.text_bank(cat), relaxed=relaxed)
    s_o = object_anomaly_map(query, banks.object_bank, cat)
    s_p = patch_anomaly_map(query, banks.patch_bank, cat)
    return QueryScores(query.image_id, cat, query.label, s_t, s_o, s_p,
                       fuse(s_t, s_o, s_p, fusion), report)
