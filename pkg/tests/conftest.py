from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import path_graph  # noqa: E402


@pytest.fixture
def p3():
    return path_graph(3)
