import warnings

import numpy as np
import pytest

from npga import oracle
from npga.graph import connected_erdos_renyi, mixing_matrix_laplacian
from npga.problem import (
    build_elastic_net_problem,
    build_logistic_problem,
    build_ridge_problem,
    partition_features,
    synthesize_dataset,
)


class Instance:
    def __init__(self, problem, graph, W):
        self.problem = problem
        self.graph = graph
        self.W = W
        self._sol = None

    @property
    def solution(self):
        if self._sol is None:
            self._sol = oracle.centralized_pga(self.problem)
        return self._sol

    @property
    def xl(self):
        return self.solution.x_star, self.solution.lambda_star


def _instance(problem, seed=0, prob=0.3):
    g, _ = connected_erdos_renyi(problem.n, prob, seed)
    return Instance(problem, g, mixing_matrix_laplacian(g, 1.0))


def ridge_instance():
    """13 agents, p=10 constraint rows, d=14 features."""
    X, Y = synthesize_dataset(10, 14, cond=2.0, seed=1)
    return _instance(build_ridge_problem(X, Y, partition_features(14, 13)))


def logistic_instance():
    """Six feature agents and one slack agent with slack regularization 1e-3."""
    X, Y = synthesize_dataset(10, 12, cond=2.0, seed=3, labels=True)
    return _instance(build_logistic_problem(X, Y, partition_features(12, 6), rho=0.1,
                                            slack_reg=1e-3))


def elastic_net_instance():
    X, Y = synthesize_dataset(10, 14, cond=2.0, seed=1, scale=5.0)
    return _instance(build_elastic_net_problem(X, Y, partition_features(14, 13), 1.0, 0.5))


def small_instance(seed=5):
    X, Y = synthesize_dataset(4, 7, cond=2.0, seed=seed)
    return _instance(build_ridge_problem(X, Y, [1, 1, 1, 2, 2]), seed=2, prob=0.5)


@pytest.fixture(scope="session")
def ridge():
    return ridge_instance()


@pytest.fixture(scope="session")
def logistic():
    return logistic_instance()


@pytest.fixture(scope="session")
def enet():
    return elastic_net_instance()


@pytest.fixture(scope="session")
def small():
    return small_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_mu_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*mu = 0.*")
        yield


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
