"""Convergence diagnostics for adaptive MCMC on finite state spaces."""

from .adaptation import (
    AdaptationPolicy,
    AdaptiveState,
    Estimate,
    HistoryDependent,
    ThetaRecursion,
    TimeSchedule,
    Trajectory,
    marginal_estimate,
    marginal_exact,
    m_eps_adaptive,
    simulate,
    step,
)
from .diagnostics import (
    Thresholds,
    adapfail_delta,
    assemble_report,
    containment_tail,
    diagnose,
    diminishing_series,
    equivalence_ii,
    paired_comparison_iii,
    subsample_check,
    telescoping_verify,
)
from .markov import (
    ConvergenceTime,
    KernelFamily,
    apply_kernel,
    ergodicity_check,
    grid_family,
    kernel_product,
    m_eps,
    mixture_family,
    sup_kernel_distance,
    tv_distance,
    two_state_family,
)
from .scenarios import build_scenario, list_scenarios

__version__ = "0.1.0"
