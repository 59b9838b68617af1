"""Built-in experiment configurations.

Each scenario bundles a kernel family, an adaptation policy, a starting pair
and default grids.  Overrides can replace the starting pair and the policy
constants, never the construction itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .adaptation import AdaptationPolicy, ThetaRecursion, _check_start
from .errors import ScenarioError
from .markov import KernelFamily, flip_kernel, grid_family, two_state_family, uniform

DEFAULT_EPS = (0.05,)
DEFAULT_N_GRID = (10, 25, 50, 100, 250, 375, 500, 625, 750, 875, 1000)
DEFAULT_M_GRID = (1, 2, 4, 10, 100, 1000)
DEFAULT_CAP = 10_000
DEFAULT_R = 100


@dataclass(frozen=True)
class Scenario:
    id: str
    family: KernelFamily
    policy: AdaptationPolicy
    x0: int
    theta0: Any
    n_grid: tuple = DEFAULT_N_GRID
    M_grid: tuple = DEFAULT_M_GRID
    eps: tuple = DEFAULT_EPS
    cap: int = DEFAULT_CAP
    R: int = DEFAULT_R
    notes: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _check_start(self.x0, self.theta0, self.policy, self.family)
        if not (self.n_grid and self.M_grid and self.eps):
            raise ScenarioError(f"{self.id}: default grids must be nonempty")

    @property
    def pi(self) -> np.ndarray:
        return self.family.target

    def theta_path(self, n: int) -> list:
        """``[theta_0, ..., theta_n]`` for state-independent policies."""
        if not self.policy.state_independent:
            raise ScenarioError(f"{self.id}: parameter path depends on the chain")
        path = [self.theta0]
        for _ in range(n):
            path.append(self.policy.next_theta(self.x0, path[-1], None, None))
        return path


def _harmonic_step(theta: float) -> float:
    # theta/(1+theta) written so that theta = inf (that is, 1/0) maps to 1
    return 1.0 / (1.0 + 1.0 / theta)


def _mirror_harmonic_step(theta: float) -> float:
    return 1.0 / (2.0 - theta)


def _toy_flip(x0=0, theta0=math.inf) -> Scenario:
    return Scenario(
        id="ToyFlip",
        family=two_state_family(),
        policy=ThetaRecursion(_harmonic_step, name="theta/(1+theta)", start_values=(math.inf,)),
        x0=int(x0),
        theta0=theta0,
        notes=("Two-state flip chain with uniform target, flip probability theta_n = 1/n. "
               "theta_0 = inf stands for 1/0, so the first move uses theta_1 = 1. "
               "Diminishing Adaptation holds, Containment fails, marginals still converge."),
    )


def _toy_flip_to_one(x0=0, theta0=0.0) -> Scenario:
    return Scenario(
        id="ToyFlipTo1",
        family=two_state_family(),
        policy=ThetaRecursion(_mirror_harmonic_step, name="1/(2-theta)"),
        x0=int(x0),
        theta0=theta0,
        notes=("Mirror of ToyFlip: theta_n -> 1 with sum of (1 - theta_n) divergent; "
               "theta_0 = 0 gives theta_n = n/(n+1), avoiding a stalled identity first step."),
    )


def _alternating(x0=0, theta0="I", p_theta=0.5) -> Scenario:
    if not 0.0 < float(p_theta) < 1.0:
        raise ScenarioError(f"AlternatingPI: p_theta must lie in (0, 1), got {p_theta!r}")
    family = grid_family("P/I", {"P": flip_kernel(p_theta), "I": np.eye(2)}, uniform(2))
    swap = {"P": "I", "I": "P"}
    return Scenario(
        id="AlternatingPI",
        family=family,
        policy=ThetaRecursion(swap.__getitem__, name="alternate P/I"),
        x0=int(x0),
        theta0=theta0,
        notes=(f"Alternates a fixed kernel P (two-state flip, theta={p_theta}) with the identity I. "
               "Not diminishing; Containment fails on the identity, yet marginals converge."),
        params={"p_theta": float(p_theta)},
    )


def _non_adaptive(x0=0, theta0=None, theta=0.25) -> Scenario:
    theta = float(theta)
    if theta0 is not None and float(theta0) != theta:
        raise ScenarioError("NonAdaptiveControl: theta0 must equal the constant theta")
    return Scenario(
        id="NonAdaptiveControl",
        family=two_state_family(),
        policy=ThetaRecursion(lambda t: t, name="constant"),
        x0=int(x0),
        theta0=theta,
        notes=f"Ergodic nonadaptive control: constant two-state kernel theta={theta}.",
        params={"theta": theta},
    )


_BUILDERS: dict[str, tuple[Callable[..., Scenario], str, frozenset]] = {
    "ToyFlip": (_toy_flip, "two-state flip chain with theta_n = 1/n (adaptive, ergodic, not contained)",
                frozenset({"x0", "theta0"})),
    "ToyFlipTo1": (_toy_flip_to_one, "mirror two-state chain with theta_n -> 1",
                   frozenset({"x0", "theta0"})),
    "AlternatingPI": (_alternating, "alternation between a mixing kernel and the identity",
                      frozenset({"x0", "theta0", "p_theta"})),
    "NonAdaptiveControl": (_non_adaptive, "fixed two-state kernel theta = 0.25",
                           frozenset({"x0", "theta0", "theta"})),
}


def list_scenarios() -> list[tuple[str, str]]:
    return [(sid, desc) for sid, (_, desc, _) in _BUILDERS.items()]


def override_keys(scenario_id: str) -> frozenset:
    try:
        return _BUILDERS[scenario_id][2]
    except KeyError:
        raise ScenarioError(f"unknown scenario {scenario_id!r}; choose from {list(_BUILDERS)}") from None


def build_scenario(scenario_id: str, overrides: Mapping[str, Any] | None = None) -> Scenario:
    """Construct a built-in scenario, applying ``overrides`` to its constants."""
    overrides = dict(overrides or {})
    allowed = override_keys(scenario_id)
    unknown = sorted(set(overrides) - allowed)
    if unknown:
        raise ScenarioError(f"{scenario_id}: unknown override {unknown[0]!r}; allowed {sorted(allowed)}")
    builder = _BUILDERS[scenario_id][0]
    if "theta0" in overrides and isinstance(overrides["theta0"], str) and scenario_id != "AlternatingPI":
        overrides["theta0"] = float(overrides["theta0"])
    return builder(**overrides)
