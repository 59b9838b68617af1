"""Acceptance gate: one test per criterion, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import itertools
import math

import numpy as np
import pytest

from adaptdiag.adaptation import exact_marginals, m_eps_adaptive
from adaptdiag.config import RunConfig
from adaptdiag.diagnostics import (
    ADAPTIVE,
    adapfail_delta,
    assemble_report,
    containment_tail,
    diminishing_series,
    paired_comparison_iii,
    telescoping_bound,
    telescoping_verify,
    window_sup,
)
from adaptdiag.markov import flip_kernel, grid_family, m_eps, two_state_family, uniform
from adaptdiag.runner import run
from adaptdiag.scenarios import build_scenario

import oracles


def test_ac1_frozen_time_exactness():
    fam = two_state_family()
    thetas = [round(0.05 * i, 2) for i in range(1, 10)]
    for theta, eps in itertools.product(thetas, (0.1, 0.01, 0.001)):
        brute = oracles.matrix_power_meps(flip_kernel(theta), 0, np.array([0.5, 0.5]), eps, 10_000)
        assert brute == oracles.closed_form_meps(theta, eps)
        for x in (0, 1):
            assert m_eps(x, theta, fam, eps).n == brute
    assert m_eps(0, 0.1, fam, 0.01).n == 18


def test_ac2_toyflip_is_ergodic_exactly():
    sc = build_scenario("ToyFlip")
    laws = exact_marginals(sc.x0, sc.theta0, sc.policy, sc.family)
    assert np.max(np.abs(next(laws) - [0, 1])) <= 1e-12
    for _ in range(2, 1001):
        assert np.max(np.abs(next(laws) - [0.5, 0.5])) <= 1e-12


def test_ac3_toyflip_containment_fails():
    sc = build_scenario("ToyFlip")
    grid = (10, 100, 1000)
    tail = containment_tail(sc, 0.05, grid, grid, 10_000, R=100, seed=0)
    expected = [[float(oracles.closed_form_meps(1 / n, 0.05) > M) for M in grid] for n in grid]
    np.testing.assert_array_equal(tail.probs, expected)
    # once n >= 100 * M for the smallest exceeded M, every entry of that row is 1
    np.testing.assert_array_equal(tail.row(1000), [1, 1, 1])
    assert tail.entry(1000, 1000) == 1.0


def test_ac4_toyflip_adapfail_is_one():
    sc = build_scenario("ToyFlip")
    tail = containment_tail(sc, 0.05, sc.n_grid, sc.M_grid, 10_000, R=sc.R, seed=0, kind=ADAPTIVE)
    delta = adapfail_delta(tail, 250)
    assert tail.n_grid[-1] == 1000 and max(delta.M_grid) == 1000
    np.testing.assert_array_equal(delta.delta, 1.0)
    for n in (25, 50, 100):
        got = m_eps_adaptive(0, 1 / n, sc.policy, sc.family, 0.02, 10_000)
        assert got.n == oracles.toyflip_adaptive_time(n, 0.02)
        assert 3.5 <= got.n / n <= 4.5


def test_ac5_nonadaptive_control_is_contained():
    sc = build_scenario("NonAdaptiveControl")
    assert m_eps(0, 0.25, sc.family, 0.05).n == m_eps(1, 0.25, sc.family, 0.05).n == 4
    M_grid = (1, 2, 4, 10, 100, 1000)
    for kind in ("frozen", ADAPTIVE):
        tail = containment_tail(sc, 0.05, sc.n_grid, M_grid, 10_000, R=sc.R, seed=0, kind=kind)
        assert not tail.probs[:, 2:].any()
        np.testing.assert_array_equal(window_sup(tail, 250).delta[2:], 0.0)


def test_ac6_paired_probes():
    toy = build_scenario("ToyFlip")
    probe = paired_comparison_iii(toy, 0.05, 0.25, 0, 5, toy.n_grid, 10_000, R=toy.R, seed=0, n_burn=250)
    assert probe.window_sup == 1.0 and probe.freq[-1] == 1.0
    ctrl = build_scenario("NonAdaptiveControl")
    probe = paired_comparison_iii(ctrl, 0.05, 0.25, ctrl.x0, 1, ctrl.n_grid, 10_000, R=ctrl.R, seed=0)
    assert not probe.freq.any()


@pytest.mark.parametrize("sid, expected", [
    ("ToyFlip", {"diminishing_ok": True, "containment_ok": False, "adapfail_flag": True}),
    ("NonAdaptiveControl", {"diminishing_ok": True, "containment_ok": True, "adapfail_flag": False}),
    ("AlternatingPI", {"diminishing_ok": False, "containment_ok": False, "adapfail_flag": False}),
])
def test_ac7_verdicts(sid, expected):
    sc = build_scenario(sid)
    eps, cap, seed = 0.05, sc.cap, 0
    dim = diminishing_series(sc.policy, sc.family, sc.x0, sc.theta0, sc.n_grid[-1], sc.R, seed)
    frozen = containment_tail(sc, eps, sc.n_grid, sc.M_grid, cap, sc.R, seed)
    adaptive = containment_tail(sc, eps, sc.n_grid, sc.M_grid, cap, sc.R, seed, kind=ADAPTIVE)
    assert assemble_report(sc, dim, frozen, adaptive, 250).verdicts == expected


def _doubly_stochastic(rng, k):
    perms = [np.eye(k)[rng.permutation(k)] for _ in range(k + 1)]
    return sum(w * Q for w, Q in zip(rng.dirichlet(np.ones(k + 1)), perms))


def test_ac8_telescoping_bound():
    rng = np.random.default_rng(20240601)
    for trial in range(100):
        k = (2, 3, 5)[trial % 3]
        M = 2 + trial % 7
        spread = rng.random()
        kernels = {0: _doubly_stochastic(rng, k)}
        for i in range(1, M + 1):
            kernels[i] = (1 - spread) * kernels[i - 1] + spread * _doubly_stochastic(rng, k)
        chk = telescoping_verify(range(M + 1), grid_family("random", kernels, uniform(k)))
        P = oracles.product_of_kernels([kernels[i] for i in range(M + 1)])
        Q = np.linalg.matrix_power(kernels[0], M + 1)
        assert chk.lhs == pytest.approx(0.5 * np.abs(P - Q).sum(axis=1).max(), abs=1e-14)
        assert chk.bound == pytest.approx(M * (M + 1) / 2 * chk.eta, abs=1e-15)
        assert chk.ok
    for M in range(2, 200):
        eps_c = 0.1
        b = telescoping_bound(M, eps_c / (2 * M * M))
        assert math.isclose(b, (M + 1) * eps_c / (4 * M), abs_tol=1e-12)
        assert b < eps_c / 2


def test_ac9_runs_are_byte_identical(tmp_path):
    digests = []
    for workers in (1, 4):
        cfg = RunConfig("ToyFlip", seed=7, R=40, out_dir=str(tmp_path / f"w{workers}"), workers=workers,
                        eps=(0.05, 0.1))
        files = run(cfg)
        assert files.verify()
        digests.append(files.digests)
    assert digests[0] == digests[1]
    assert set(digests[0]) == {"report.json", "diminishing.csv", "containment.csv", "adapfail.csv",
                               "manifest.json"}
