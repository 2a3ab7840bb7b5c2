import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dmlseg import tensor


@pytest.fixture(autouse=True)
def reset_precision():
    yield
    tensor.set_precision("train32")


@pytest.fixture
def check64():
    tensor.set_precision("check64")
    yield
    tensor.set_precision("train32")
