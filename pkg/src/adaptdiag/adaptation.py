"""Adaptive processes ``(X_n, theta_n)`` on a finite state space.

Update order is parameter first: ``theta_{n+1}`` is chosen from
``(X_n, theta_n, stats)`` and then ``X_{n+1}`` is drawn from row ``X_n`` of
``P_{theta_{n+1}}``.  Restarting a process from a pair ``(x, theta)`` is
therefore well defined, which is what the adaptive convergence time needs.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Hashable, Iterator, Mapping

import numpy as np

from .errors import BudgetExceededError, NotPropagatableError, ScenarioError
from .markov import (
    ConvergenceTime,
    Grid,
    KernelFamily,
    _check_eps_cap,
    apply_kernel,
    point_mass,
    prob_vector,
    tv_distance,
)

# -- seeding -----------------------------------------------------------------


def stream_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream, index)``.

    Streams are separated through the ``spawn_key`` of a ``SeedSequence`` so
    that no two (stream, index) pairs share randomness.
    """
    if int(seed) < 0:
        raise ValueError("seed must be non-negative")
    key = (zlib.crc32(stream.encode()), int(index))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def subseed(seed: int, stream: str, index: int = 0) -> int:
    """Derived integer seed, for handing a seed to a nested estimator."""
    return int(stream_rng(seed, stream, index).integers(2**63))


def _sample_row(cum_row: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum_row, u, side="right")), cum_row.shape[0] - 1)


# -- policies ----------------------------------------------------------------


class AdaptationPolicy:
    """Rule producing ``theta_{n+1}`` from ``(X_n, theta_n, stats)``.

    Subclasses override :meth:`next_theta`; :meth:`law` returns the exact
    distribution of the next parameter when it is known.
    """

    state_independent = False
    initial_stats: Any = None

    def next_theta(self, x: int, theta, stats, rng: np.random.Generator | None):
        raise NotImplementedError

    def law(self, x: int, theta, stats) -> Mapping[Hashable, float] | None:
        return None

    def update_stats(self, stats, x_new: int):
        return stats

    def accepts_start(self, theta) -> bool:
        """Whether ``theta`` may serve as a starting value outside the kernel domain."""
        return False


@dataclass(frozen=True)
class ThetaRecursion(AdaptationPolicy):
    """Deterministic ``theta_{n+1} = g(theta_n)``, ignoring the chain."""

    g: Callable
    name: str = "recursion"
    start_values: tuple = ()

    state_independent = True

    def next_theta(self, x, theta, stats, rng):
        return self.g(theta)

    def law(self, x, theta, stats):
        return {self.g(theta): 1.0}

    def accepts_start(self, theta) -> bool:
        return theta in self.start_values


@dataclass(frozen=True)
class TimeSchedule(AdaptationPolicy):
    """Deterministic schedule ``n -> theta`` with an index-recovery rule.

    ``index_of(theta)`` returns the schedule index whose value is ``theta``;
    the next parameter is ``schedule(index_of(theta) + 1)``.
    """

    schedule: Callable[[int], Any]
    index_of: Callable[[Any], int]
    name: str = "schedule"

    state_independent = True

    def next_theta(self, x, theta, stats, rng):
        return self.schedule(self.index_of(theta) + 1)

    def law(self, x, theta, stats):
        return {self.next_theta(x, theta, stats, None): 1.0}


@dataclass(frozen=True)
class HistoryDependent(AdaptationPolicy):
    """Parameter update that may look at the state, statistics and randomness.

    Either ``update`` (a sampler) or ``law`` (the exact next-parameter
    distribution) must be given; with only ``law``, sampling draws from it.
    ``stats_values`` declares the finite set statistics live in, which exact
    propagation requires.
    """

    update: Callable | None = None
    law_fn: Callable | None = None
    initial_stats: Any = None
    stats_fn: Callable | None = None
    stats_values: frozenset | None = None
    name: str = "history-dependent"

    def __post_init__(self):
        if self.update is None and self.law_fn is None:
            raise ValueError("HistoryDependent needs an update sampler or a law")

    def next_theta(self, x, theta, stats, rng):
        if self.update is not None:
            return self.update(x, theta, stats, rng)
        items = list(self.law_fn(x, theta, stats).items())
        cum = np.cumsum([w for _, w in items])
        return items[_sample_row(cum, rng.random())][0]

    def law(self, x, theta, stats):
        return None if self.law_fn is None else self.law_fn(x, theta, stats)

    def update_stats(self, stats, x_new):
        return stats if self.stats_fn is None else self.stats_fn(stats, x_new)


def _check_start(x: int, theta, policy: AdaptationPolicy, family: KernelFamily) -> None:
    if not 0 <= int(x) < family.n_states:
        raise ScenarioError(f"state {x} out of range for {family.n_states} states")
    if not (family.admissible(theta) or policy.accepts_start(theta)):
        raise ScenarioError(f"starting parameter {theta!r} is not admissible for {family.name}")


# -- single trajectories -----------------------------------------------------


@dataclass(frozen=True)
class AdaptiveState:
    x: int
    theta: Any
    n: int = 0
    stats: Any = None
    rng: np.random.Generator | None = field(default=None, compare=False, repr=False)


def step(state: AdaptiveState, policy: AdaptationPolicy, family: KernelFamily) -> AdaptiveState:
    """Advance one iteration: new parameter first, then the move it governs."""
    theta = policy.next_theta(state.x, state.theta, state.stats, state.rng)
    if not family.admissible(theta):
        raise ScenarioError(f"policy produced inadmissible parameter {theta!r}")
    row = np.cumsum(family.kernel(theta)[state.x])
    x = _sample_row(row, state.rng.random())
    return replace(state, x=x, theta=theta, n=state.n + 1, stats=policy.update_stats(state.stats, x))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    params: tuple

    def __post_init__(self):
        if len(self.states) != len(self.params):
            raise ValueError("states and params must have equal length")

    @property
    def length(self) -> int:
        return len(self.states) - 1


def simulate(x0: int, theta0, policy: AdaptationPolicy, family: KernelFamily, n: int, seed: int,
             replicate: int = 0) -> Trajectory:
    """Run ``n`` iterations from ``(x0, theta0)``; deterministic given the seed."""
    if n < 0:
        raise ValueError("n must be >= 0")
    _check_start(x0, theta0, policy, family)
    state = AdaptiveState(int(x0), theta0, 0, policy.initial_stats, stream_rng(seed, "chain", replicate))
    states = [state.x]
    params = [state.theta]
    for _ in range(n):
        state = step(state, policy, family)
        states.append(state.x)
        params.append(state.theta)
    return Trajectory(np.array(states, dtype=int), tuple(params))


# -- replicate ensembles -----------------------------------------------------


class Ensemble:
    """A block of independent replicates advanced in lockstep.

    Replicate ``r`` draws from ``stream_rng(seed, stream, r)`` and follows
    exactly the path :func:`simulate` would produce for it, whatever the
    block layout.  State-independent policies take a vectorized path.
    """

    _CHUNK = 256

    def __init__(self, x0, theta0, policy, family, seed, replicates, stream: str = "chain"):
        _check_start(x0, theta0, policy, family)
        self.policy = policy
        self.family = family
        self.replicates = list(replicates)
        self.n = 0
        R = len(self.replicates)
        self.xs = np.full(R, int(x0), dtype=int)
        self._rngs = [stream_rng(seed, stream, r) for r in self.replicates]
        self._cum: dict = {}
        if policy.state_independent:
            self.theta = theta0
            self._buf = np.empty((R, 0))
            self._pos = 0
        else:
            self.thetas_list = [theta0] * R
            self.stats = [policy.initial_stats] * R

    @property
    def thetas(self) -> list:
        if self.policy.state_independent:
            return [self.theta] * len(self.replicates)
        return list(self.thetas_list)

    def _cumulative(self, theta) -> np.ndarray:
        cum = self._cum.get(theta)
        if cum is None:
            if not self.family.admissible(theta):
                raise ScenarioError(f"policy produced inadmissible parameter {theta!r}")
            cum = np.cumsum(self.family.kernel(theta), axis=1)
            self._cum[theta] = cum
        return cum

    def _uniforms(self) -> np.ndarray:
        if self._pos >= self._buf.shape[1]:
            self._buf = np.array([g.random(self._CHUNK) for g in self._rngs]).reshape(len(self._rngs), self._CHUNK)
            self._pos = 0
        u = self._buf[:, self._pos]
        self._pos += 1
        return u

    def step(self) -> None:
        if self.policy.state_independent:
            self.theta = self.policy.next_theta(None, self.theta, None, None)
            cum = self._cumulative(self.theta)
            rows = cum[self.xs]
            self.xs = np.minimum((self._uniforms()[:, None] >= rows).sum(axis=1), rows.shape[1] - 1)
        else:
            for i, g in enumerate(self._rngs):
                theta = self.policy.next_theta(int(self.xs[i]), self.thetas_list[i], self.stats[i], g)
                x = _sample_row(self._cumulative(theta)[self.xs[i]], g.random())
                self.xs[i] = x
                self.thetas_list[i] = theta
                self.stats[i] = self.policy.update_stats(self.stats[i], x)
        self.n += 1

    def advance_to(self, n: int) -> None:
        if n < self.n:
            raise ValueError("ensembles only move forward")
        while self.n < n:
            self.step()


def replicate_blocks(R: int, workers: int) -> list[range]:
    workers = max(1, min(int(workers), R))
    edges = np.linspace(0, R, workers + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_blocks(fn: Callable[[range], Any], R: int, workers: int = 1) -> list:
    """Apply ``fn`` to contiguous replicate blocks; results in block order."""
    blocks = replicate_blocks(R, workers)
    if len(blocks) == 1:
        return [fn(blocks[0])]
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        return list(pool.map(fn, blocks))


# -- exact marginals ---------------------------------------------------------


class ProductDistribution:
    """Joint law of ``(X_n, theta_n, stats_n)`` on a finite support."""

    def __init__(self, weights: Mapping[tuple, float]):
        total = sum(weights.values())
        if any(w < 0 for w in weights.values()) or abs(total - 1.0) > 1e-9:
            raise ValueError(f"joint weights must be nonnegative and sum to 1 (got {total!r})")
        self.weights = {k: w / total for k, w in weights.items() if w > 0}

    def marginal(self, n_states: int) -> np.ndarray:
        p = np.zeros(n_states)
        for (x, _, _), w in self.weights.items():
            p[x] += w
        return prob_vector(p)

    def step(self, policy: AdaptationPolicy, family: KernelFamily) -> "ProductDistribution":
        out: dict = {}
        for (x, theta, stats), w in self.weights.items():
            law = policy.law(x, theta, stats)
            for theta_new, q in law.items():
                if q <= 0:
                    continue
                row = family.kernel(theta_new)[x]
                for x_new in np.flatnonzero(row > 0):
                    x_new = int(x_new)
                    s = policy.update_stats(stats, x_new)
                    declared = getattr(policy, "stats_values", None)
                    if declared is not None and s not in declared:
                        raise NotPropagatableError(f"statistics value {s!r} outside the declared finite set")
                    key = (x_new, theta_new, s)
                    out[key] = out.get(key, 0.0) + w * q * row[x_new]
        return ProductDistribution(out)


def _propagatable(policy: AdaptationPolicy, family: KernelFamily) -> bool:
    if policy.state_independent:
        return True
    if not isinstance(family.domain, Grid):
        return False
    if isinstance(policy, HistoryDependent):
        return policy.law_fn is not None and (policy.stats_fn is None or policy.stats_values is not None)
    return type(policy).law is not AdaptationPolicy.law


def exact_marginals(x0: int, theta0, policy: AdaptationPolicy, family: KernelFamily) -> Iterator[np.ndarray]:
    """Yield the exact laws of ``X_1, X_2, ...`` given ``(X_0, theta_0) = (x0, theta0)``."""
    _check_start(x0, theta0, policy, family)
    if not _propagatable(policy, family):
        raise NotPropagatableError(
            f"policy {getattr(policy, 'name', policy)!r} cannot be propagated exactly; use marginal_estimate")
    if policy.state_independent:
        p = point_mass(x0, family.n_states)
        theta = theta0
        while True:
            theta = policy.next_theta(x0, theta, None, None)
            p = apply_kernel(p, family.kernel(theta))
            yield p
    joint = ProductDistribution({(int(x0), theta0, policy.initial_stats): 1.0})
    while True:
        joint = joint.step(policy, family)
        yield joint.marginal(family.n_states)


def marginal_exact(x0: int, theta0, policy: AdaptationPolicy, family: KernelFamily, n: int) -> np.ndarray:
    """Exact law of ``X_n`` for the process started at ``(x0, theta0)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        _check_start(x0, theta0, policy, family)
        return point_mass(x0, family.n_states)
    for m, p in enumerate(exact_marginals(x0, theta0, policy, family), start=1):
        if m == n:
            return p


def _final_states(x0, theta0, policy, family, n, seed, block) -> np.ndarray:
    ens = Ensemble(x0, theta0, policy, family, seed, block)
    ens.advance_to(n)
    return ens.xs


def marginal_estimate(x0: int, theta0, policy: AdaptationPolicy, family: KernelFamily, n: int, R: int,
                      seed: int, workers: int = 1) -> np.ndarray:
    """Empirical law of ``X_n`` over ``R`` independent replicates."""
    if R < 1:
        raise ValueError("R must be >= 1")
    parts = map_blocks(lambda b: _final_states(x0, theta0, policy, family, n, seed, b), R, workers)
    xs = np.concatenate(parts)
    return prob_vector(np.bincount(xs, minlength=family.n_states) / R)


# -- adaptive convergence time -----------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mode for :func:`m_eps_adaptive`."""

    R: int
    seed: int
    workers: int = 1


def m_eps_adaptive(x: int, theta, policy: AdaptationPolicy, family: KernelFamily, eps: float, cap: int,
                   mode: str | Estimate = "exact") -> ConvergenceTime:
    """Adaptive convergence time of the process restarted at ``(x, theta)``.

    ``mode="exact"`` propagates marginals exactly; an :class:`Estimate` uses
    empirical marginals of ``R`` replicates (biased upward by sampling noise
    in the distance).
    """
    _check_eps_cap(eps, cap)
    target = family.target
    if isinstance(mode, Estimate):
        return _m_eps_adaptive_estimate(x, theta, policy, family, eps, cap, mode)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")

    if policy.state_independent:
        # deterministic parameter path: detect a frozen (theta, law) pair
        _check_start(x, theta, policy, family)
        p = point_mass(x, family.n_states)
        for m in range(1, cap + 1):
            nxt_theta = policy.next_theta(x, theta, None, None)
            nxt = apply_kernel(p, family.kernel(nxt_theta))
            if tv_distance(nxt, target) <= eps:
                return ConvergenceTime.finite(m, cap)
            if nxt_theta == theta and np.array_equal(nxt, p):
                break
            p, theta = nxt, nxt_theta
        return ConvergenceTime.exceeds_cap(cap)

    for m, p in enumerate(exact_marginals(x, theta, policy, family), start=1):
        if tv_distance(p, target) <= eps:
            return ConvergenceTime.finite(m, cap)
        if m >= cap:
            break
    return ConvergenceTime.exceeds_cap(cap)


def _m_eps_adaptive_estimate(x, theta, policy, family, eps, cap, mode: Estimate) -> ConvergenceTime:
    if mode.R < 1:
        raise ValueError("R must be >= 1")
    blocks = replicate_blocks(mode.R, mode.workers)
    ensembles = [Ensemble(x, theta, policy, family, mode.seed, b) for b in blocks]
    pool = ThreadPoolExecutor(max_workers=len(ensembles)) if len(ensembles) > 1 else None
    try:
        for m in range(1, cap + 1):
            if pool is None:
                ensembles[0].step()
            else:
                list(pool.map(lambda e: e.step(), ensembles))
            xs = np.concatenate([e.xs for e in ensembles])
            pmf = np.bincount(xs, minlength=family.n_states) / mode.R
            if tv_distance(pmf, family.target) <= eps:
                return ConvergenceTime.finite(m, cap)
    finally:
        if pool is not None:
            pool.shutdown()
    return ConvergenceTime.exceeds_cap(cap)


def nested_budget_check(requested: int, budget: int | None) -> None:
    if budget is not None and requested > budget:
        raise BudgetExceededError(f"nested estimation needs {requested} replicate-steps, budget is {budget}")
