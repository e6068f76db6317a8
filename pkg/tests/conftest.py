import numpy as np
import pytest
from hypothesis import settings

from mue.autodiff import set_debug

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _debug_checks():
    set_debug(True)
    yield
    set_debug(False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
