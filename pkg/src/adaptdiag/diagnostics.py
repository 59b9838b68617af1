"""Diagnostic functionals for adaptive chains.

Tail probabilities ``P(T(X_n, theta_n) > M)`` are estimated from replicate
frequencies over an ``(n, M)`` grid, where ``T`` is either the frozen-kernel
convergence time (Containment) or the adaptive one (AdapFail).  ``limsup_n``
is replaced by a maximum over a late window ``n >= n_burn`` of the grid.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .adaptation import (
    Ensemble,
    Estimate,
    ThetaRecursion,
    _propagatable,
    map_blocks,
    marginal_estimate,
    marginal_exact,
    m_eps_adaptive,
    nested_budget_check,
    subseed,
)
from .errors import BudgetExceededError, ScenarioError
from .markov import (
    ConvergenceTime,
    KernelFamily,
    kernel_product,
    m_eps,
    sup_kernel_distance,
    tv_distance,
)
from .scenarios import Scenario

FROZEN = "frozen"
ADAPTIVE = "adaptive"


def default_n_burn(n_grid) -> int:
    return max(n_grid) // 4


def _check_grid(name: str, grid) -> tuple:
    grid = tuple(int(v) for v in grid)
    if not grid:
        raise ScenarioError(f"{name} must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ScenarioError(f"{name} must be strictly increasing")
    if grid[0] < 1:
        raise ScenarioError(f"{name} entries must be >= 1")
    return grid


# -- Diminishing Adaptation --------------------------------------------------


@dataclass(frozen=True)
class DiminishingSeries:
    n: np.ndarray
    median: np.ndarray
    q95: np.ndarray
    R: int
    seed: int
    exact: bool


def _kernel_gap(family: KernelFamily, memo: dict, a, b) -> float:
    key = (a, b)
    if key not in memo:
        memo[key] = 0.0 if a == b else sup_kernel_distance(family.kernel(a), family.kernel(b))
    return memo[key]


def diminishing_series(policy, family: KernelFamily, x0: int, theta0, n_max: int, R: int = 1, seed: int = 0,
                       workers: int = 1) -> DiminishingSeries:
    """``D_n = sup_x ||P_{theta_{n+1}}(x, .) - P_{theta_n}(x, .)||`` for n = 1..n_max.

    The series starts at n = 1 because ``theta_0`` may be a start-only value
    that indexes no kernel.  Deterministic state-independent policies give the
    exact series from a single path, whatever ``R`` is.
    """
    if n_max < 1:
        raise ScenarioError("n_max must be >= 1")
    ns = np.arange(1, n_max + 1)
    memo: dict = {}
    if policy.state_independent:
        path = [theta0]
        for _ in range(n_max + 1):
            path.append(policy.next_theta(x0, path[-1], None, None))
        d = np.array([_kernel_gap(family, memo, path[n + 1], path[n]) for n in ns])
        return DiminishingSeries(ns, d, d.copy(), R, seed, exact=True)

    def block(reps):
        ens = Ensemble(x0, theta0, policy, family, seed, reps)
        ens.step()
        prev = ens.thetas
        rows = np.empty((len(reps), n_max))
        for j in range(n_max):
            ens.step()
            cur = ens.thetas
            rows[:, j] = [_kernel_gap(family, memo, c, p) for c, p in zip(cur, prev)]
            prev = cur
        return rows

    D = np.vstack(map_blocks(block, R, workers))
    return DiminishingSeries(ns, np.median(D, axis=0), np.quantile(D, 0.95, axis=0), R, seed, exact=False)


# -- visited pairs and convergence times ------------------------------------


def visited_pairs(scenario: Scenario, times, R: int, seed: int, workers: int = 1,
                  stream: str = "chain") -> list[list[tuple]]:
    """``out[i][r]`` is the pair ``(X_n, theta_n)`` of replicate r at ``n = times[i]``."""

    def block(reps):
        ens = Ensemble(scenario.x0, scenario.theta0, scenario.policy, scenario.family, seed, reps, stream=stream)
        rows = []
        for n in times:
            ens.advance_to(n)
            rows.append(list(zip(ens.xs.tolist(), ens.thetas)))
        return rows

    parts = map_blocks(block, R, workers)
    return [sum((p[i] for p in parts), []) for i in range(len(times))]


def _pair_key(x: int, theta) -> int:
    return zlib.crc32(repr((x, theta)).encode())


class _TimeTable:
    """Memoized convergence time at a pair ``(x, theta)``."""

    def __init__(self, fn: Callable[[int, Any], ConvergenceTime]):
        self.fn = fn
        self.values: dict = {}

    def __call__(self, x, theta) -> ConvergenceTime:
        key = (x, theta)
        if key not in self.values:
            self.values[key] = self.fn(x, theta)
        return self.values[key]


def frozen_time(scenario: Scenario, eps: float, cap: int) -> _TimeTable:
    return _TimeTable(lambda x, th: m_eps(x, th, scenario.family, eps, cap))


def adaptive_time(scenario: Scenario, eps: float, cap: int, mode: str | Estimate | None = None,
                  seed: int = 0) -> _TimeTable:
    """Adaptive time at restarted pairs.

    ``mode=None`` picks exact propagation when the policy allows it and a
    nested estimate with 1000 replicates otherwise; nested seeds are derived
    from ``seed`` and the pair, so results do not depend on visiting order.
    """
    policy, family = scenario.policy, scenario.family
    if mode is None:
        mode = "exact" if _propagatable(policy, family) else Estimate(1000, seed)

    def fn(x, theta):
        m = mode
        if isinstance(m, Estimate):
            m = Estimate(m.R, subseed(m.seed, "nested", _pair_key(x, theta)), m.workers)
        return m_eps_adaptive(x, theta, policy, family, eps, cap, m)

    return _TimeTable(fn)


# -- tail matrices -----------------------------------------------------------


@dataclass(frozen=True)
class TailMatrix:
    """``probs[i, j]`` estimates ``P(T(X_{n_i}, theta_{n_i}) > M_j)``."""

    n_grid: tuple
    M_grid: tuple
    probs: np.ndarray
    censored: np.ndarray
    eps: float
    R: int
    seed: int
    cap: int
    kind: str

    def __post_init__(self):
        if self.probs.shape != (len(self.n_grid), len(self.M_grid)):
            raise ValueError("probs shape does not match the grids")
        if self.probs.size and (self.probs.min() < 0 or self.probs.max() > 1):
            raise ValueError("tail probabilities must lie in [0, 1]")
        if np.any(np.diff(self.probs, axis=1) > 0):
            raise ValueError("tail rows must be non-increasing in M")
        if self.kind not in (FROZEN, ADAPTIVE):
            raise ValueError(f"unknown tail kind {self.kind!r}")

    def row(self, n: int) -> np.ndarray:
        return self.probs[self.n_grid.index(n)]

    def entry(self, n: int, M: int) -> float:
        return float(self.probs[self.n_grid.index(n), self.M_grid.index(M)])


def containment_tail(scenario: Scenario, eps: float, n_grid, M_grid, cap: int, R: int, seed: int, *,
                     kind: str = FROZEN, adaptive_mode: str | Estimate | None = None,
                     workers: int = 1) -> TailMatrix:
    """Tail matrix of convergence times at visited pairs.

    ``kind="frozen"`` uses ``M_eps(X_n, theta_n)`` (the Containment sequence);
    ``kind="adaptive"`` uses the restarted adaptive time, as AdapFail needs.
    A censored time counts as exceeding every threshold.
    """
    n_grid = _check_grid("n_grid", n_grid)
    M_grid = _check_grid("M_grid", M_grid)
    if not 0 < eps < 1:
        raise ScenarioError(f"eps must lie in (0, 1), got {eps!r}")
    if cap < M_grid[-1]:
        raise ScenarioError(f"cap {cap} is below max(M_grid) = {M_grid[-1]}")
    if R < 1:
        raise ScenarioError("R must be >= 1")
    if kind == FROZEN:
        time = frozen_time(scenario, eps, cap)
    elif kind == ADAPTIVE:
        time = adaptive_time(scenario, eps, cap, adaptive_mode, seed)
    else:
        raise ScenarioError(f"unknown tail kind {kind!r}")

    visits = visited_pairs(scenario, n_grid, R, seed, workers)
    probs = np.zeros((len(n_grid), len(M_grid)))
    censored = np.zeros(len(n_grid))
    for i, row in enumerate(visits):
        times = [time(x, th) for x, th in row]
        censored[i] = sum(not t.is_finite for t in times) / R
        for j, M in enumerate(M_grid):
            probs[i, j] = sum(t.exceeds(M) for t in times) / R
    return TailMatrix(n_grid, M_grid, probs, censored, float(eps), R, seed, cap, kind)


@dataclass(frozen=True)
class DeltaSeries:
    M_grid: tuple
    delta: np.ndarray
    delta_AF: float
    window: tuple
    monotone: bool
    kind: str = ADAPTIVE


def window_sup(tail: TailMatrix, n_burn: int) -> DeltaSeries:
    """Per-threshold maximum of the tail over grid rows with ``n >= n_burn``."""
    if not tail.n_grid[0] <= n_burn <= tail.n_grid[-1]:
        raise ScenarioError(f"n_burn {n_burn} outside the n_grid range [{tail.n_grid[0]}, {tail.n_grid[-1]}]")
    rows = [i for i, n in enumerate(tail.n_grid) if n >= n_burn]
    raw = tail.probs[rows].max(axis=0)
    delta = np.minimum.accumulate(raw)
    return DeltaSeries(tail.M_grid, delta, float(delta[-1]), (n_burn, tail.n_grid[-1]),
                       bool(np.array_equal(delta, raw)), tail.kind)


def adapfail_delta(tail: TailMatrix, n_burn: int) -> DeltaSeries:
    """Windowed estimate of ``delta_AF(M)`` from an adaptive-time tail matrix."""
    if tail.kind != ADAPTIVE:
        raise ScenarioError("adapfail_delta needs a tail matrix of adaptive convergence times")
    return window_sup(tail, n_burn)


# -- equivalence probes ------------------------------------------------------


@dataclass(frozen=True)
class ProbeSeries:
    n_grid: tuple
    freq: np.ndarray
    window_sup: float
    n_burn: int
    K: float


def _probe(n_grid, freq, n_burn, K) -> ProbeSeries:
    n_burn = default_n_burn(n_grid) if n_burn is None else n_burn
    window = [f for n, f in zip(n_grid, freq) if n >= n_burn]
    if not window:
        raise ScenarioError(f"no grid point at or after n_burn = {n_burn}")
    return ProbeSeries(n_grid, np.asarray(freq), float(max(window)), n_burn, K)


def equivalence_ii(scenario: Scenario, eps: float, ref_x: int, ref_theta, K: float, n_grid, cap: int, R: int,
                   seed: int, *, n_burn: int | None = None, adaptive_mode=None, workers: int = 1) -> ProbeSeries:
    """Frequency of ``M^A(X_n, theta_n) > K * M_eps(ref_x, ref_theta)`` along the grid."""
    n_grid = _check_grid("n_grid", n_grid)
    ref = m_eps(ref_x, ref_theta, scenario.family, eps, cap)
    if not ref.is_finite:
        raise BudgetExceededError(f"reference time M_eps({ref_x}, {ref_theta!r}) exceeds cap {cap}")
    threshold = K * ref.n
    time = adaptive_time(scenario, eps, cap, adaptive_mode, seed)
    visits = visited_pairs(scenario, n_grid, R, seed, workers)
    freq = [sum(time(x, th).exceeds(threshold) for x, th in row) / R for row in visits]
    return _probe(n_grid, freq, n_burn, K)


def paired_comparison_iii(scenario: Scenario, eps: float, theta_Y, y0: int, K: float, n_grid, cap: int, R: int,
                          seed: int, *, n_burn: int | None = None, adaptive_mode=None,
                          workers: int = 1) -> ProbeSeries:
    """Frequency of ``M^A(X_n, theta_n) > K * M_eps(Y_n, theta_Y)`` with an independent chain Y.

    Y follows ``P_{theta_Y}`` from ``y0`` on its own randomness stream.  When
    Y's time is censored the strict comparison cannot be established and the
    indicator is 0.
    """
    n_grid = _check_grid("n_grid", n_grid)
    family = scenario.family
    if not family.admissible(theta_Y):
        raise ScenarioError(f"theta_Y {theta_Y!r} is not admissible")
    y_chain = Scenario(f"{scenario.id}/Y", family, ThetaRecursion(lambda t: t, name="constant"), y0, theta_Y,
                       n_grid=n_grid)
    adaptive = adaptive_time(scenario, eps, cap, adaptive_mode, seed)
    frozen = frozen_time(y_chain, eps, cap)
    xs = visited_pairs(scenario, n_grid, R, seed, workers)
    ys = visited_pairs(y_chain, n_grid, R, seed, workers, stream="y-chain")
    freq = []
    for xrow, yrow in zip(xs, ys):
        hits = 0
        for (x, th), (y, thy) in zip(xrow, yrow):
            ty = frozen(y, thy)
            hits += ty.is_finite and adaptive(x, th).exceeds(K * ty.n)
        freq.append(hits / R)
    return _probe(n_grid, freq, n_burn, K)


# -- subsampling -------------------------------------------------------------


@dataclass(frozen=True)
class SubsampleResult:
    violation_freq: float
    per_pair: np.ndarray
    lag: int
    offset: int
    eps: float


def subsample_check(scenario: Scenario, eps: float, M: int, n_pairs: int, R: int, seed: int, *, offset: int = 0,
                    nested_R: int = 1000, budget: int | None = 10**8, workers: int = 1) -> SubsampleResult:
    """Fraction of lagged pairs whose conditional law stays farther than ``eps`` from the target.

    For each realized ``X_t`` at ``t = offset + k*M`` the law of ``X_{t+M}``
    given the pair ``(X_t, theta_t)`` is propagated exactly when possible and
    estimated with ``nested_R`` replicates otherwise.
    """
    if M < 1 or n_pairs < 1:
        raise ScenarioError("lag M and n_pairs must be >= 1")
    policy, family = scenario.policy, scenario.family
    times = [offset + k * M for k in range(n_pairs)]
    visits = visited_pairs(scenario, times, R, seed, workers)
    exact = _propagatable(policy, family)
    if not exact:
        unique = {pair for row in visits for pair in row}
        nested_budget_check(len(unique) * nested_R * M, budget)
    memo: dict = {}

    def distance(x, theta):
        if (x, theta) not in memo:
            if exact:
                law = marginal_exact(x, theta, policy, family, M)
            else:
                law = marginal_estimate(x, theta, policy, family, M, nested_R,
                                        subseed(seed, "nested", _pair_key(x, theta)))
            memo[(x, theta)] = tv_distance(law, family.target)
        return memo[(x, theta)]

    per_pair = np.array([sum(distance(x, th) > eps for x, th in row) / R for row in visits])
    return SubsampleResult(float(per_pair.mean()), per_pair, M, offset, float(eps))


# -- telescoping bound -------------------------------------------------------


def telescoping_bound(M: int, eta: float) -> float:
    """Bound on the product deviation when consecutive kernels differ by at most ``eta``.

    Swapping factor k for the base kernel costs at most ``k * eta`` because
    kernels contract total variation, so the total is ``M(M+1)/2 * eta``.
    """
    return M * (M + 1) / 2 * eta


@dataclass(frozen=True)
class TelescopingCheck:
    lhs: float
    eta: float
    bound: float
    ok: bool
    loose_bound: float
    M: int


def telescoping_verify(theta_seq, family: KernelFamily, base_index: int = 0) -> TelescopingCheck:
    """Compare the product of ``M+1`` kernels with the (M+1)-th power of the base kernel.

    ``loose_bound`` is the cruder sum ``sum_{k=1}^M (k+1) * eta``; it is
    reported alongside for comparison.
    """
    thetas = list(theta_seq)
    if len(thetas) < 2:
        raise ScenarioError("telescoping_verify needs at least two parameters")
    M = len(thetas) - 1
    kernels = [family.kernel(t) for t in thetas]
    base = kernels[base_index]
    lhs = sup_kernel_distance(kernel_product(kernels), kernel_product([base] * (M + 1)))
    eta = max(sup_kernel_distance(a, b) for a, b in zip(kernels, kernels[1:]))
    bound = telescoping_bound(M, eta)
    return TelescopingCheck(lhs, eta, bound, lhs <= bound + 1e-12, (M * (M + 1) / 2 + M) * eta, M)


# -- report ------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    """Verdict thresholds.

    ``eta_star=None`` derives the Diminishing Adaptation threshold from the
    data: ten times the power-law fit of the 0.95-quantile of ``D_n`` at the
    window end when that fit decays with exponent at least ``min_decay``,
    otherwise ten times ``eta_floor``.
    """

    delta_star: float = 0.05
    eta_star: float | None = None
    eta_floor: float = 1e-9
    min_decay: float = 0.25


def fitted_eta_star(dim: DiminishingSeries, n_burn: int, th: Thresholds) -> tuple[float, float | None]:
    """Return ``(eta_star, fitted_slope)`` for the window ``n >= n_burn``."""
    if th.eta_star is not None:
        return float(th.eta_star), None
    mask = (dim.n >= n_burn) & (dim.q95 > 0)
    if mask.sum() < 3:
        return 10 * th.eta_floor, None
    logn = np.log(dim.n[mask])
    slope, intercept = np.polyfit(logn, np.log(dim.q95[mask]), 1)
    if slope > -th.min_decay:
        return 10 * th.eta_floor, float(slope)
    tail = math.exp(intercept + slope * math.log(dim.n[-1]))
    return 10 * max(th.eta_floor, tail), float(slope)


@dataclass(frozen=True)
class DiagnosticsReport:
    scenario: str
    eps: float
    n_burn: int
    diminishing: DiminishingSeries
    containment: TailMatrix
    containment_delta: DeltaSeries
    adaptive_tail: TailMatrix
    adapfail: DeltaSeries
    thresholds: Thresholds
    eta_star: float
    fitted_slope: float | None
    verdicts: dict
    provenance: dict = field(default_factory=dict)

    def recompute_verdicts(self) -> dict:
        return _verdicts(self.diminishing, self.containment_delta, self.adapfail, self.eta_star,
                         self.thresholds.delta_star)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "eps": self.eps,
            "n_burn": self.n_burn,
            "verdicts": dict(self.verdicts),
            "thresholds": {**asdict(self.thresholds), "eta_star_used": self.eta_star,
                           "fitted_slope": self.fitted_slope},
            "diminishing": {
                "n_max": int(self.diminishing.n[-1]),
                "R": self.diminishing.R,
                "exact": self.diminishing.exact,
                "q95_at_window_end": float(self.diminishing.q95[-1]),
                "median_at_window_end": float(self.diminishing.median[-1]),
            },
            "containment": _tail_dict(self.containment, self.containment_delta),
            "adapfail": _tail_dict(self.adaptive_tail, self.adapfail),
            "provenance": dict(self.provenance),
        }


def _tail_dict(tail: TailMatrix, delta: DeltaSeries) -> dict:
    return {
        "kind": tail.kind,
        "n_grid": list(tail.n_grid),
        "M_grid": list(tail.M_grid),
        "probs": tail.probs.tolist(),
        "censored_frac": tail.censored.tolist(),
        "R": tail.R,
        "cap": tail.cap,
        "window": list(delta.window),
        "delta": delta.delta.tolist(),
        "delta_terminal": delta.delta_AF,
        "monotone": delta.monotone,
    }


def _verdicts(dim: DiminishingSeries, cont: DeltaSeries, af: DeltaSeries, eta_star: float, delta_star: float):
    return {
        "diminishing_ok": bool(dim.q95[-1] <= eta_star),
        "containment_ok": bool(cont.delta_AF <= delta_star),
        "adapfail_flag": bool(af.delta_AF > delta_star),
    }


def assemble_report(scenario: Scenario, diminishing: DiminishingSeries, containment: TailMatrix,
                    adaptive_tail: TailMatrix, n_burn: int, thresholds: Thresholds = Thresholds(),
                    provenance: dict | None = None) -> DiagnosticsReport:
    """Combine computed series into verdicts.

    Containment is judged on the windowed frozen-time tail at the largest
    threshold and AdapFail on the adaptive-time tail; both against
    ``delta_star``.
    """
    if containment.kind != FROZEN or adaptive_tail.kind != ADAPTIVE:
        raise ScenarioError("containment needs a frozen-time tail and AdapFail an adaptive-time tail")
    if containment.eps != adaptive_tail.eps:
        raise ScenarioError(f"inconsistent eps across inputs: {containment.eps} vs {adaptive_tail.eps}")
    cont = window_sup(containment, n_burn)
    af = adapfail_delta(adaptive_tail, n_burn)
    eta_star, slope = fitted_eta_star(diminishing, n_burn, thresholds)
    verdicts = _verdicts(diminishing, cont, af, eta_star, thresholds.delta_star)
    prov = {"seed": containment.seed, **(provenance or {})}
    return DiagnosticsReport(scenario.id, containment.eps, n_burn, diminishing, containment, cont, adaptive_tail,
                             af, thresholds, eta_star, slope, verdicts, prov)


def diagnose(scenario: Scenario, eps: float, n_grid=None, M_grid=None, cap: int | None = None,
             R: int | None = None, seed: int = 0, n_burn: int | None = None,
             thresholds: Thresholds = Thresholds(), workers: int = 1, provenance: dict | None = None,
             adaptive_mode=None) -> DiagnosticsReport:
    """Run every diagnostic for one scenario and tolerance."""
    n_grid = _check_grid("n_grid", n_grid or scenario.n_grid)
    M_grid = _check_grid("M_grid", M_grid or scenario.M_grid)
    cap = cap or scenario.cap
    R = R or scenario.R
    n_burn = default_n_burn(n_grid) if n_burn is None else n_burn
    dim = diminishing_series(scenario.policy, scenario.family, scenario.x0, scenario.theta0, n_grid[-1], R, seed,
                             workers)
    frozen = containment_tail(scenario, eps, n_grid, M_grid, cap, R, seed, kind=FROZEN, workers=workers)
    adaptive = containment_tail(scenario, eps, n_grid, M_grid, cap, R, seed, kind=ADAPTIVE,
                                adaptive_mode=adaptive_mode, workers=workers)
    return assemble_report(scenario, dim, frozen, adaptive, n_burn, thresholds, provenance)
