import numpy as np
import pytest

from plugs.features import ObjectLabelTable
from plugs.model import init_params, preset
from plugs.text import train_bpe
from plugs.world import SyntheticWorld, make_corpus


@pytest.fixture(scope="session")
def world():
    return SyntheticWorld(seed=0, noise_p=0.15)


@pytest.fixture(scope="session")
def corpus(world):
    return make_corpus(world, 100, seed=1)


@pytest.fixture(scope="session")
def vocab(corpus):
    lines = [c for by_id in corpus.captions.values() for c in by_id.values()]
    return train_bpe(lines, 450)


@pytest.fixture(scope="session")
def table(world):
    return ObjectLabelTable.random(world.label_vocabulary(), 0)


@pytest.fixture
def tiny(vocab):
    cfg = preset("desk_tiny", len(vocab))
    return cfg, init_params(cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
