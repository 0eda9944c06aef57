import sys
from pathlib import Path

import numpy as np
import pytest

STUB = Path(__file__).parent / "stubs" / "objective_stub.py"


def stub_command(mode: str) -> tuple[str, ...]:
    return (sys.executable, str(STUB), mode)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
