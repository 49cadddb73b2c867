from importlib.resources import files

import pytest

from gridcheck.parser import parse_model
from gridcheck.statespace import build

FIXTURES = files("gridcheck") / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


@pytest.fixture(scope="session")
def tower_model():
    return parse_model(fixture_text("tower.sm"))


@pytest.fixture(scope="session")
def tower_space(tower_model):
    return build(tower_model)


@pytest.fixture(scope="session")
def compact_model():
    return parse_model(fixture_text("compact.sm"))


@pytest.fixture(scope="session")
def compact_space(compact_model):
    return build(compact_model)


@pytest.fixture(scope="session")
def line_model():
    return parse_model(fixture_text("line.sm"))


@pytest.fixture(scope="session")
def line_space(line_model):
    return build(line_model)
