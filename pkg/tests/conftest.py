import pytest

from synth import build_micro_corpus, build_micro_predictions, build_safe_corpus, oracle_predictions


@pytest.fixture(scope="session")
def micro_corpus():
    return build_micro_corpus()


@pytest.fixture(scope="session")
def micro_predictions():
    return build_micro_predictions()


@pytest.fixture(scope="session")
def safe_corpus():
    return build_safe_corpus()


@pytest.fixture(scope="session")
def safe_oracle(safe_corpus):
    return oracle_predictions(safe_corpus)
