import numpy as np
import pytest

from mdphom.envs import BlocksWorld, PucksWorld, enumerate_model
from mdphom.envs.random_mdp import random_model


@pytest.fixture(scope="session")
def pucks():
    return PucksWorld(size=3, n_pucks=2, task="stack")


@pytest.fixture(scope="session")
def pucks_model(pucks):
    return enumerate_model(pucks)


@pytest.fixture(scope="session")
def pucks_experience(pucks_model):
    return pucks_model.to_experience()


@pytest.fixture(scope="session")
def blocks_model():
    return enumerate_model(BlocksWorld(0, 1, 2))


def random_models(n=20, seed=0, **kw):
    return [random_model(np.random.default_rng([seed, i]), **kw) for i in range(n)]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
