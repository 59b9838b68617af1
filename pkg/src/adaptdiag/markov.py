"""Exact finite-state Markov chain machinery.

Distributions are 1-d float arrays and kernels are row-stochastic 2-d arrays.
Both are validated on construction and returned read-only, so they can be
shared freely between threads.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ScenarioError

Theta = Hashable

SUM_ATOL = 1e-9
STATIONARITY_ATOL = 1e-10
DEFAULT_CAP = 100_000


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def prob_vector(weights, *, atol: float = SUM_ATOL) -> np.ndarray:
    """Validate ``weights`` as a distribution and renormalize it exactly.

    Entries may undershoot zero or the total may drift from one by at most
    ``atol`` (floating-point drift from long products); anything larger is an
    error rather than something to hide.
    """
    p = np.array(weights, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"probability vector must be 1-d and nonempty, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability vector has non-finite entries")
    if p.min() < -atol:
        raise ValueError(f"negative probability {p.min():.3g}")
    total = p.sum()
    if abs(total - 1.0) > atol:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    np.clip(p, 0.0, None, out=p)
    p /= p.sum()
    return _frozen(p)


def point_mass(x: int, n_states: int) -> np.ndarray:
    if not 0 <= x < n_states:
        raise ValueError(f"state {x} out of range for {n_states} states")
    p = np.zeros(n_states)
    p[x] = 1.0
    return _frozen(p)


def uniform(n_states: int) -> np.ndarray:
    return _frozen(np.full(n_states, 1.0 / n_states))


def transition_matrix(rows, *, atol: float = SUM_ATOL) -> np.ndarray:
    """Validate a square row-stochastic matrix; rows are renormalized."""
    P = np.array(rows, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValueError(f"transition matrix must be square and nonempty, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("transition matrix has non-finite entries")
    if P.min() < -atol:
        raise ValueError(f"negative transition probability {P.min():.3g}")
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ValueError(f"row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
    np.clip(P, 0.0, None, out=P)
    P /= P.sum(axis=1, keepdims=True)
    return _frozen(P)


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def tv_distance(p, q) -> float:
    """Total variation distance, computed as half the L1 distance."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_same_dim(p, q)
    return float(0.5 * np.abs(p - q).sum())


def apply_kernel(p, P) -> np.ndarray:
    """One step of the chain: the row vector ``p`` times ``P``."""
    p = np.asarray(p, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or p.shape[0] != P.shape[0]:
        raise ValueError(f"dimension mismatch: vector {p.shape} vs kernel {P.shape}")
    return prob_vector(p @ P)


def kernel_product(seq: Sequence) -> np.ndarray:
    """Ordered product ``seq[0] @ seq[1] @ ...``."""
    mats = [np.asarray(P, dtype=float) for P in seq]
    if not mats:
        raise ValueError("kernel_product needs at least one kernel")
    for P in mats[1:]:
        _check_same_dim(mats[0], P)
    return transition_matrix(reduce(np.matmul, mats))


def sup_kernel_distance(P, Q) -> float:
    """Largest total variation distance between corresponding rows."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    _check_same_dim(P, Q)
    return float(0.5 * np.abs(P - Q).sum(axis=1).max())


# -- kernel families ---------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Closed real interval of admissible parameters."""

    lo: float
    hi: float

    def contains(self, theta) -> bool:
        if isinstance(theta, bool) or not isinstance(theta, (int, float, np.floating, np.integer)):
            return False
        return self.lo <= float(theta) <= self.hi

    def parse(self, text: str) -> float:
        return float(text)

    def describe(self) -> str:
        return f"[{self.lo}, {self.hi}]"


@dataclass(frozen=True)
class Grid:
    """Explicit finite set of admissible parameters."""

    values: tuple

    def contains(self, theta) -> bool:
        try:
            return theta in self.values
        except TypeError:
            return False

    def parse(self, text: str):
        for v in self.values:
            if str(v) == text:
                return v
        raise ValueError(f"{text!r} is not one of {list(self.values)}")

    def describe(self) -> str:
        return "{" + ", ".join(map(str, self.values)) + "}"


@dataclass(frozen=True)
class KernelFamily:
    """Parameterized family of kernels sharing the stationary law ``target``."""

    name: str
    domain: Interval | Grid
    builder: Callable[[Theta], np.ndarray]
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", prob_vector(self.target))

    @property
    def n_states(self) -> int:
        return self.target.shape[0]

    def admissible(self, theta) -> bool:
        return self.domain.contains(theta)

    def kernel(self, theta) -> np.ndarray:
        if not self.admissible(theta):
            raise ScenarioError(f"parameter {theta!r} outside {self.name} domain {self.domain.describe()}")
        P = transition_matrix(self.builder(theta))
        if P.shape[0] != self.n_states:
            raise ScenarioError(f"{self.name}({theta!r}) has {P.shape[0]} states, expected {self.n_states}")
        drift = np.abs(self.target @ P - self.target).max()
        if drift > STATIONARITY_ATOL:
            raise ScenarioError(f"{self.name}({theta!r}) does not preserve the target (drift {drift:.3g})")
        return P

    def parse_theta(self, text: str):
        return self.domain.parse(text)


def flip_kernel(theta: float) -> np.ndarray:
    """Two-state kernel that switches state with probability ``theta``."""
    t = float(theta)
    return np.array([[1.0 - t, t], [t, 1.0 - t]])


def two_state_family() -> KernelFamily:
    return KernelFamily("two-state", Interval(0.0, 1.0), flip_kernel, uniform(2))


def grid_family(name: str, kernels: Mapping[Theta, np.ndarray], target) -> KernelFamily:
    """Family over a finite set of named kernels."""
    table = {k: transition_matrix(v) for k, v in kernels.items()}
    return KernelFamily(name, Grid(tuple(table)), table.__getitem__, target)


def mixture_family(name: str, A, B, target) -> KernelFamily:
    """``P_t = (1 - t) A + t B`` for t in [0, 1]; preserves any law both preserve."""
    A = transition_matrix(A)
    B = transition_matrix(B)
    return KernelFamily(name, Interval(0.0, 1.0), lambda t: (1.0 - t) * A + t * B, target)


def metropolis_kernel(pi, proposal) -> np.ndarray:
    """Metropolis-Hastings kernel for target ``pi`` with proposal matrix ``proposal``."""
    pi = prob_vector(pi)
    Q = transition_matrix(proposal)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (pi[None, :] * Q.T) / (pi[:, None] * Q)
    accept = np.where(Q > 0, np.minimum(1.0, np.nan_to_num(ratio, nan=0.0, posinf=1.0)), 0.0)
    P = Q * accept
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices_from(P)] = 1.0 - P.sum(axis=1)
    return transition_matrix(P)


# -- convergence times -------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceTime:
    """Either a finite time ``n`` or a censored value past ``cap``.

    ``n is None`` encodes the censored case.
    """

    n: int | None
    cap: int

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if self.n is not None and not 1 <= self.n <= self.cap:
            raise ValueError(f"finite time {self.n} outside [1, {self.cap}]")

    @classmethod
    def finite(cls, n: int, cap: int) -> "ConvergenceTime":
        return cls(int(n), int(cap))

    @classmethod
    def exceeds_cap(cls, cap: int) -> "ConvergenceTime":
        return cls(None, int(cap))

    @property
    def is_finite(self) -> bool:
        return self.n is not None

    def exceeds(self, threshold: float) -> bool:
        """Strictly greater than ``threshold``; a censored time exceeds everything."""
        return self.n is None or self.n > threshold

    def __str__(self) -> str:
        return str(self.n) if self.n is not None else f"EXCEEDS_CAP({self.cap})"


def _check_eps_cap(eps: float, cap: int) -> None:
    if not 0.0 < eps < 1.0:
        raise ScenarioError(f"eps must lie in (0, 1), got {eps!r}")
    if int(cap) < 1:
        raise ScenarioError(f"cap must be >= 1, got {cap!r}")


def first_passage(distributions: Iterable[np.ndarray], target, eps: float, cap: int) -> ConvergenceTime:
    """First index n >= 1 (the iterable yields n = 1, 2, ...) within ``eps`` of ``target``."""
    for n, p in enumerate(distributions, start=1):
        if n > cap:
            break
        if tv_distance(p, target) <= eps:
            return ConvergenceTime.finite(n, cap)
    return ConvergenceTime.exceeds_cap(cap)


def m_eps(x: int, theta, family: KernelFamily, eps: float, cap: int = DEFAULT_CAP) -> ConvergenceTime:
    """Frozen-kernel convergence time of ``P_theta`` started at ``x``."""
    _check_eps_cap(eps, cap)
    P = family.kernel(theta)
    p = point_mass(x, family.n_states)
    for n in range(1, cap + 1):
        nxt = apply_kernel(p, P)
        if tv_distance(nxt, family.target) <= eps:
            return ConvergenceTime.finite(n, cap)
        if np.array_equal(nxt, p):
            # fixed point away from the target: no later n can qualify
            break
        p = nxt
    return ConvergenceTime.exceeds_cap(cap)


@dataclass(frozen=True)
class Ergodicity:
    ergodic: bool
    reason: str

    def __bool__(self) -> bool:
        return self.ergodic


def ergodicity_check(P) -> Ergodicity:
    """Irreducibility and aperiodicity of a finite kernel from its support graph."""
    P = transition_matrix(P)
    k = P.shape[0]
    succ = [np.flatnonzero(P[i] > 0) for i in range(k)]

    level = [-1] * k
    level[0] = 0
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    if min(level) < 0:
        return Ergodicity(False, "reducible")
    # reverse reachability to state 0
    pred = [[] for _ in range(k)]
    for u in range(k):
        for v in succ[u]:
            pred[v].append(u)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in pred[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) < k:
        return Ergodicity(False, "reducible")

    period = 0
    for u in range(k):
        for v in succ[u]:
            period = math.gcd(period, level[u] + 1 - level[v])
    if period != 1:
        return Ergodicity(False, f"periodic (period {period})")
    return Ergodicity(True, "irreducible and aperiodic")
