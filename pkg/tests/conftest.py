import pytest
import jax

from src.fields import Grid2
from src.material import Material


@pytest.fixture
def rng():
    return jax.random.PRNGKey(0)


@pytest.fixture
def mat():
    return Material()


@pytest.fixture
def grid():
    return Grid2(9, 9)
