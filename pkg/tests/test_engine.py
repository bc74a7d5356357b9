import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowbal.engine import (RunConfig, batch_means_ci, default_horizon, measure_delay_stream, run,
                            run_reference, trend_test, w_perp_sq)
from flowbal.model import (ArrivalLaw, ChannelLaw, ConfigError, FlowSizeLaw, SystemConfig,
                           default_setup)


class TestWPerp:
    def test_balanced(self):
        assert w_perp_sq([3, 3, 3]) == 0

    def test_two_aps(self):
        assert w_perp_sq([4, 0]) == 8

    @given(st.lists(st.integers(0, 10**6), min_size=1, max_size=20))
    def test_pythagoras(self, W):
        W = np.asarray(W, dtype=float)
        assert w_perp_sq(W) + W.sum() ** 2 / len(W) == pytest.approx(float(W @ W), rel=1e-9, abs=1e-6)


class TestRunConfig:
    def test_default_warmup(self):
        cfg = RunConfig(default_setup(), horizon=1000)
        assert cfg.warmup == 100 and cfg.batch_len == 45

    @pytest.mark.parametrize("kw", [dict(horizon=100, warmup=100), dict(horizon=100, batch_count=7),
                                    dict(horizon=100, batch_count=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(default_setup(), **kw)

    def test_default_horizon(self):
        assert default_horizon(0.02) == 10_000_000
        assert default_horizon(0.5) == 1_000_000


def test_no_traffic():
    cfg = SystemConfig(1, ChannelLaw.identical([0, 1, 5, 10], [0.1, 0.2, 0.5, 0.2], 1),
                       ArrivalLaw.bernoulli(0.0), FlowSizeLaw.two_point(5, 20), "jlw")
    r = run(RunConfig(cfg, horizon=10_000, seed=1))
    assert r.summary.mean_total_workload == 0
    assert r.summary.departures == 0
    assert r.summary.stability_flag == "stable"


def test_default_setup_finite_and_stable():
    r = run(RunConfig(default_setup(M=5, lam=0.9, w=5), horizon=1_000_000, seed=2))
    s = r.summary
    assert math.isfinite(s.mean_total_workload) and s.stability_flag == "stable"
    assert s.departures <= r.arrivals
    assert r.oracle_violations == 0


def test_equal_seeds_identical():
    cfg = RunConfig(default_setup(M=5, lam=0.9, w=5), horizon=200_000, seed=3)
    assert run(cfg).summary == run(cfg).summary


def test_coupled_arrivals_across_policies():
    # same seed: identical arrival and size paths, so the oracle level agrees exactly
    res = [run(RunConfig(default_setup(M=3, lam=0.5, w=5, policy=p), horizon=50_000, seed=4))
           for p in ("bcf", "rlb", "jlw")]
    assert len({r.arrivals for r in res}) == 1
    assert len({r.mean_phi for r in res}) == 1
    assert all(r.oracle_violations == 0 for r in res)


class TestDelays:
    def test_same_slot_service(self):
        # peak rate almost surely and size <= c_max: every flow leaves on arrival
        cfg = SystemConfig(1, ChannelLaw((0, 10), ((1e-12, 1 - 1e-12),)), ArrivalLaw.bernoulli(0.01),
                           FlowSizeLaw.bounded({10: 1.0}), "jlw")
        r = run(RunConfig(cfg, horizon=100_000, seed=5, record_delays=True))
        d = measure_delay_stream(r)
        assert d.size > 500 and set(d.tolist()) == {1}

    def test_requires_recording(self):
        r = run(RunConfig(default_setup(M=2, lam=0.3, w=5), horizon=1000, seed=0))
        with pytest.raises(ValueError):
            measure_delay_stream(r)

    def test_delay_stream_matches_summary(self):
        r = run(RunConfig(default_setup(M=3, lam=0.5, w=5), horizon=100_000, seed=6, record_delays=True))
        d = measure_delay_stream(r)
        assert d.size == r.summary.departures
        assert d.mean() == pytest.approx(r.summary.mean_delay)


def birth_death_mean_delay(lam, p, n_max=400):
    """Stationary solve of the single-AP, unit-size, ON-OFF chain.

    Each slot: one arrival w.p. lam, then one flow departs w.p. 1 - (1-p)**n
    where n counts flows after the arrival. Mean delay = E[flows after
    arrival] / lam (each flow is counted in every slot from arrival to
    departure, inclusive).
    """
    P = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for a, pa in ((0, 1 - lam), (1, lam)):
            n1 = min(n + a, n_max)
            q = 1 - (1 - p) ** n1 if n1 > 0 else 0.0
            P[n, n1 - 1 if n1 > 0 else 0] += pa * q
            P[n, n1] += pa * (1 - q)
    A = np.vstack([P.T - np.eye(n_max + 1), np.ones(n_max + 1)])
    b = np.zeros(n_max + 2)
    b[-1] = 1
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    n = np.arange(n_max + 1)
    return float(pi @ n + lam) / lam


def test_delay_against_markov_chain():
    lam, p = 0.6, 0.5
    exact = birth_death_mean_delay(lam, p)
    cfg = SystemConfig(1, ChannelLaw.on_off([p], c_max=1), ArrivalLaw.bernoulli(lam),
                       FlowSizeLaw.bounded({1: 1.0}), "jlw")
    means = [run(RunConfig(cfg, horizon=400_000, seed=s)).summary.mean_delay for s in range(8)]
    se = np.std(means, ddof=1) / np.sqrt(len(means))
    assert abs(np.mean(means) - exact) < 4 * se + 1e-3


def test_littles_law():
    r = run(RunConfig(default_setup(M=5, lam=0.8, w=5), horizon=2_000_000, seed=7))
    assert r.little_gap < 0.05


def test_guard_trips_on_overload():
    r = run(RunConfig(default_setup(M=2, lam=1.0, w=5), horizon=1_000_000, seed=8, guard=5_000))
    assert r.guard_tripped and r.summary.stability_flag == "suspected-unstable"
    assert r.slots_run < 1_000_000


def test_debug_invariants_hold():
    for p in ("bcf", "rlb", "jlw"):
        r = run(RunConfig(default_setup(M=3, lam=0.55, w=5, policy=p), horizon=100_000, seed=9, debug=True))
        assert r.identity_violations == 0 and r.oracle_violations == 0


def test_kernel_agrees_with_reference_path():
    cfg = default_setup(M=2, lam=0.3, w=5, policy="jlw")
    ref = [run_reference(RunConfig(cfg, horizon=6000, seed=s, warmup=1000, batch_count=10)) for s in range(6)]
    fast = [run(RunConfig(cfg, horizon=200_000, seed=100 + s)) for s in range(6)]
    assert all(r.identity_violations == 0 and r.oracle_violations == 0 for r in ref)
    a = np.array([r.summary.mean_total_workload for r in ref])
    b = np.array([r.summary.mean_total_workload for r in fast])
    se = math.hypot(a.std(ddof=1) / math.sqrt(a.size), b.std(ddof=1) / math.sqrt(b.size))
    assert abs(a.mean() - b.mean()) < 4 * se


class TestStatistics:
    def test_batch_ci(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        from scipy import stats
        assert batch_means_ci(x) == pytest.approx(stats.t.ppf(0.975, 3) * x.std(ddof=1) / 2)
        assert math.isnan(batch_means_ci([5.0]))

    def test_trend_flags_linear_growth(self):
        flagged, t = trend_test(np.arange(40) * 100.0 + np.random.default_rng(0).normal(0, 5, 40))
        assert flagged and t > 5

    def test_trend_ignores_stationary_noise(self):
        flagged, _ = trend_test(100 + np.random.default_rng(1).normal(0, 5, 40))
        assert not flagged
