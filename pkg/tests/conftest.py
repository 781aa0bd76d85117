import pytest

from hcvp.runtime import tune_allocator


@pytest.fixture(scope="session", autouse=True)
def _runtime():
    tune_allocator()
