import numpy as np
import pytest

from moe_oco.gmm import ExpertPrediction


def random_prediction(rng, n_modes, horizon, with_precision=True, expert_id=None, scale=2.0):
    """A GMM with random means near the origin and moderately sharp modes."""
    w = rng.dirichlet(np.ones(n_modes))
    means = rng.normal(scale=scale, size=(n_modes, horizon, 3))
    means[..., 2] = rng.uniform(-np.pi, np.pi, size=(n_modes, horizon))
    prec = rng.uniform(0.2, 3.0, size=(n_modes, horizon, 3)) if with_precision else None
    return ExpertPrediction(w, means, prec, expert_id=expert_id)


def random_experts(rng, n, n_modes, horizon=3, **kw):
    return [random_prediction(rng, n_modes, horizon, expert_id=i, **kw) for i in range(n)]


def random_alpha(rng, n):
    return rng.dirichlet(np.ones(n))


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
