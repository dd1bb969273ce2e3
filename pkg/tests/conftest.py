"""Shared fixtures; generators live in helpers.py."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def fast_endpoint():
    from docstruct.gateway import ModelEndpoint

    return ModelEndpoint(
        base_url="http://mock.test/v1",
        model_name="mock-model",
        backoff_base=0.001,
        timeout=5.0,
    )
