import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from mixlab.testbed import build_testbed


@pytest.fixture(scope="session")
def tb16():
    """Shared small testbed (max_len=16) for tests that only read it."""
    return build_testbed(seed=0, max_len=16)
