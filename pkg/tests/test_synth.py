import itertools
from dataclasses import replace

import numpy as np
import pytest

from tribank.core import mask_area_fraction
from tribank.featscore import patch_anomaly_map
from tribank.synth import (ANOMALY_KINDS, LayoutItem, WorldSpec, generate_normal_scene,
                           inject_anomaly, prototypes)
from tribank.textbank import build_text_bank
from tribank.textscore import text_anomaly_map


@pytest.fixture(scope="module")
def text_bank(suite):
    return build_text_bank(suite[0][:20], (64, 64))


def test_generation_is_deterministic(world):
    assert generate_normal_scene(world, 7) == generate_normal_scene(world, 7)
    assert generate_normal_scene(world, 7) != generate_normal_scene(world, 8)


def test_zero_noise_features_equal_prototypes(world):
    spec = replace(world, noise_sigma=0.0)
    scene = generate_normal_scene(spec, 3)
    protos = prototypes(spec)["object"]
    for feat, m in scene.objects:
        owner = [n for n, cm in scene.category_masks.items() if (cm.bits & m.bits).any()]
        assert np.array_equal(feat, protos[owner[0]].astype(np.float32))


def test_text_sizes_match_mask_area(world):
    scene = generate_normal_scene(world, 11)
    for e in scene.text.entries:
        assert e.size == mask_area_fraction(scene.category_masks[e.class_name])
    assert {e.class_name: e.count for e in scene.text.entries} == \
        {it.class_name: it.count for it in world.layout}
    assert {e.class_name: e.position for e in scene.text.entries} == \
        {it.class_name: it.cell for it in world.layout}


def test_prototypes_are_separated(world):
    for group in prototypes(world).values():
        vecs = list(group.values())
        for a, b in itertools.combinations(vecs, 2):
            assert float(a @ b) <= 0.3
        assert all(abs(np.linalg.norm(v) - 1) < 1e-12 for v in vecs)


def test_layout_overflow(world):
    crowded = (LayoutItem("pin", 5, "bottom", (6, 8), (6, 8)),)
    with pytest.raises(ValueError, match="do not fit"):
        generate_normal_scene(replace(world, layout=crowded), 2)


def test_extremes_at_indices_zero_and_one(suite):
    train = suite[0]
    bank = build_text_bank(train[:2], (64, 64))
    for scene in train[2:]:
        for e in scene.text.entries:
            lo, hi = bank.size_ranges[e.class_name]
            assert lo <= e.size <= hi


def test_normal_queries_score_zero(suite, text_bank):
    for q in suite[1][:50]:
        s_t, report = text_anomaly_map(q, text_bank)
        assert s_t.max() == 0.0 and report.violations == ()


def changed_fields(a, b):
    fields = ("text", "category_masks", "objects", "patches", "gt_anomaly", "label")
    out = set()
    for f in fields:
        if f == "objects":
            same = len(a.objects) == len(b.objects) and all(
                np.array_equal(x, y) and m == n for (x, m), (y, n) in zip(a.objects, b.objects))
        elif f == "text":
            same = a.text.entries == b.text.entries
        else:
            same = getattr(a, f) == getattr(b, f)
        if not same:
            out.add(f)
    return out


@pytest.mark.parametrize("kind", ANOMALY_KINDS)
def test_injection_edits_declared_fields(world, kind):
    src = generate_normal_scene(world, 300)
    out = inject_anomaly(src, kind, world, seed=1)
    assert out.label == "anomalous" and out.gt_anomaly is not None and out.gt_anomaly.bits.any()
    diff = changed_fields(src, out)
    if kind == "structural":
        assert diff == {"patches", "gt_anomaly", "label"}
    else:
        assert {"text", "category_masks", "objects", "gt_anomaly", "label"} <= diff
    assert inject_anomaly(src, kind, world, seed=1) == out


def test_missing_class_localizes_inside_gt(world, text_bank):
    q = inject_anomaly(generate_normal_scene(world, 301), "missing-class", world, 2)
    s_t, report = text_anomaly_map(q, text_bank)
    assert s_t.values[q.gt_anomaly.bits].max() > 0
    assert report.violations[0].kind == "missing-class"


def test_extra_count_adds_one_pin(world, text_bank):
    src = generate_normal_scene(world, 302)
    for seed in range(40):
        q = inject_anomaly(src, "extra-count", world, seed)
        grown = [e for e in q.text.entries if e.count != src.text.get(e.class_name).count]
        if grown and grown[0].class_name == "pin":
            break
    assert src.text.get("pin").count == 3 and q.text.get("pin").count == 4
    assert len(q.objects) == len(src.objects) + 1
    assert q.gt_anomaly == q.category_masks["pin"]
    s_t, _ = text_anomaly_map(q, text_bank)
    assert np.array_equal(s_t.values > 0, q.category_masks["pin"].bits)


def test_structural_leaves_text_alone(world, suite_banks, text_bank):
    q = inject_anomaly(generate_normal_scene(world, 303), "structural", world, 4)
    s_t, _ = text_anomaly_map(q, text_bank)
    assert s_t.max() == 0.0
    s_p = patch_anomaly_map(q, suite_banks.patch_bank)
    assert s_p.values[q.gt_anomaly.bits].max() > 0


def test_inapplicable_kinds(world):
    empty = replace(world, layout=())
    scene = generate_normal_scene(empty, 2)
    with pytest.raises(ValueError):
        inject_anomaly(scene, "missing-class", empty, 0)
    with pytest.raises(ValueError):
        inject_anomaly(generate_normal_scene(world, 2), "bogus", world, 0)
    with pytest.raises(ValueError):
        inject_anomaly(generate_normal_scene(replace(world, noise_sigma=0.0), 2), "structural",
                       replace(world, noise_sigma=0.0), 0)


def test_spec_json_round_trip(world):
    import json
    assert WorldSpec.from_dict(json.loads(json.dumps(world.to_dict()))) == world
