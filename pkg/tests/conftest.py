import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

REPO_ROOT = Path(__file__).parent.parent
SCOPS = REPO_ROOT / "scops"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def scops_dir() -> Path:
    return SCOPS


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def gol16_path() -> Path:
    return SCOPS / "gol16.scop"
