"""Shared fixtures.

The checkpoint cache lives inside the tests directory (gitignored) so the
expensive desk-scale pretrains are paid once per machine, not once per
pytest invocation. Checkpoints are content-addressed by task, model,
recipe, and seed, so stale entries cannot be picked up after a config
change.
"""

import pathlib

import pytest


@pytest.fixture(scope="session")
def desk_cache():
    cache = pathlib.Path(__file__).parent / "_cache"
    cache.mkdir(exist_ok=True)
    return cache
