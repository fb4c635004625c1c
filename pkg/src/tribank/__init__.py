"""Three-bank anomaly scoring: class-level text, object features and patch features."""

from .config import ConfigError, EngineConfig, FusionConfig
from .core import (POSITIONS, CategoryText, FormatError, ImageText, Mask, PatchFeatureMap,
                   SceneBundle, ScoreMap, cosine_similarity, mask_area_fraction, pixelwise_max,
                   resize_mask_nearest, upsample_bilinear)
from .featbank import ObjectBank, PatchBank, build_object_bank, build_patch_bank, kmeans
from .featscore import object_anomaly_map, patch_anomaly_map
from .fusion import MetricsReport, UndefinedMetricError, auroc, evaluate, fuse, image_score
from .pipeline import BankSet, build_banks, score_query
from .textbank import TextBank, build_text_bank, serialize_text, size_range
from .textscore import MatchReport, find_most_similar, gestalt_ratio, size_alpha, text_anomaly_map

__version__ = "0.1.0"
