from pathlib import Path

import pytest
from hypothesis import settings

from sgfusion.geometry import CameraModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def cam():
    return CameraModel()
