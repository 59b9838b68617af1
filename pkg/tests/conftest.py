import numpy as np
import pytest

from adaptdiag.adaptation import HistoryDependent
from adaptdiag.markov import flip_kernel, grid_family, two_state_family, uniform
from adaptdiag.scenarios import Scenario, build_scenario

GRID = (0.1, 0.3, 0.5)


@pytest.fixture
def flip_family():
    return two_state_family()


@pytest.fixture(params=["ToyFlip", "ToyFlipTo1", "AlternatingPI", "NonAdaptiveControl"])
def builtin(request):
    return build_scenario(request.param)


def _nudge_law(x, theta, stats):
    # move up the grid from state 0, down from state 1; odd visit parity halves the move rate
    i = GRID.index(theta)
    j = min(i + 1, len(GRID) - 1) if x == 0 else max(i - 1, 0)
    rate = 0.5 if stats == 0 else 0.25
    if j == i:
        return {theta: 1.0}
    return {GRID[j]: rate, theta: 1.0 - rate}


def _parity(stats, x_new):
    return (stats + x_new) % 2


@pytest.fixture
def nudge_family():
    return grid_family("flip-grid", {t: flip_kernel(t) for t in GRID}, uniform(2))


@pytest.fixture
def nudge_policy():
    return HistoryDependent(law_fn=_nudge_law, initial_stats=0, stats_fn=_parity, stats_values=frozenset({0, 1}),
                            name="nudge")


@pytest.fixture
def nudge_scenario(nudge_family, nudge_policy):
    return Scenario("Nudge", nudge_family, nudge_policy, 0, 0.1)


def _drift_update(x, theta, stats, rng):
    return float(np.clip(theta + (0.05 if x == 0 else -0.05) * rng.random(), 0.05, 0.5))


@pytest.fixture
def drift_policy():
    """Continuous-parameter history-dependent policy: sampling only."""
    return HistoryDependent(update=_drift_update, name="drift")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in rep.nodeid and rep.when == "call":
                lines.append((rep.nodeid.split("::")[-1], outcome.upper()))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{name}: {'PASS' if outcome == 'PASSED' else 'FAIL'}")
