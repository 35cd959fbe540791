import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polsarclf import scenes  # noqa: E402
from polsarclf.pipeline import PipelineConfig, fit  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_class_scene():
    return scenes.two_class_fixture(48, seed=0)


@pytest.fixture(scope="session")
def two_class_fit(two_class_scene):
    image, labels = two_class_scene
    return fit(image, labels, PipelineConfig(seed=0))


@pytest.fixture(scope="session")
def five_class_scene():
    return scenes.five_class_fixture(64, seed=0)
