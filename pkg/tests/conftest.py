import numpy as np
import pytest

from pensionalm import ukmodel
from pensionalm.scenarios import Cohort, PipelineConfig


def small_pipeline(horizon=12, cohorts=None, sigma_scale=1.0, link_awe=False):
    x0 = ukmodel.initial_state()
    views = ukmodel.default_views(x0, link_awe=link_awe)
    model = ukmodel.build_model(views, x0, ukmodel.covariance_matrix() * sigma_scale, horizon)
    if cohorts is None:
        cohorts = [Cohort(65, "f", 100, 1.0), Cohort(70, "m", 50, 2.0)]
    return PipelineConfig(model, x0, horizon, cohorts=cohorts)


@pytest.fixture
def pipeline():
    return small_pipeline()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n, ok, detail):
        lines[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
