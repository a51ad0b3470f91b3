import pytest

from metashap.dataset import DEFAULT_COUNTS, generate_bragg


@pytest.fixture(scope="session")
def bragg_dataset():
    """The default regenerated Bragg dataset (computed once per session)."""
    return generate_bragg(counts=DEFAULT_COUNTS)
