import numpy as np
import pytest

from tribank.config import EngineConfig
from tribank.core import CategoryText, ImageText, Mask, PatchFeatureMap, SceneBundle
from tribank.pipeline import build_banks
from tribank.synth import WorldSpec, generate_suite

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rect_mask(w, h, x0, y0, x1, y1):
    bits = np.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return Mask(bits)


def make_scene(image_id, classes, w=8, h=8, objects=(), patches=None, label="normal",
               category="default", gt=None):
    """Hand fixture: ``classes`` maps class_name -> (count, position, size, Mask)."""
    entries = tuple(CategoryText(n, c, p, s) for n, (c, p, s, _) in classes.items())
    masks = {n: m for n, (_, _, _, m) in classes.items()}
    if patches is None:
        patches = PatchFeatureMap((("l0", np.ones((1, 1, 2), dtype=np.float32)),))
    return SceneBundle(image_id, w, h, ImageText(image_id, entries), masks, tuple(objects),
                       patches, gt, label, category)


@pytest.fixture(scope="session")
def world():
    return WorldSpec()


@pytest.fixture(scope="session")
def suite(world):
    """200 training normals; 50 test normals then 25 anomalies of each kind."""
    return generate_suite(world, 200, 50, 25)


@pytest.fixture(scope="session")
def suite_banks(suite):
    train, _ = suite
    return build_banks(train, EngineConfig(seed=0))
