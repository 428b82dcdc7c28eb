import numpy as np
import pytest

from helpers import CHAIN_DOC, EXAMPLE_DOC, rule_base
from services.ingest_service import parse_model


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def example_rb():
    """Rules for a over b, c, d, e with uniform priors."""
    return rule_base(EXAMPLE_DOC)


@pytest.fixture
def chain_doc():
    return parse_model(CHAIN_DOC)


@pytest.fixture
def chain_rb(chain_doc):
    return chain_doc.to_rule_base()


@pytest.fixture
def model_file(tmp_path):
    """Write a model text to a temporary file and return its path."""

    def write(text: str, name: str = "model.txt") -> str:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return write
