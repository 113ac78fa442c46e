import shutil
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "golden"


@pytest.fixture
def golden_copy(tmp_path) -> Path:
    """Writable copy of the end-to-end fixture without any outputs."""
    dst = tmp_path / "fixture"
    shutil.copytree(FIXTURE_DIR, dst, ignore=shutil.ignore_patterns("out"))
    return dst
