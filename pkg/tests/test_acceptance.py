"""End-to-end acceptance criteria.

Every criterion runs at its stated tolerance and emits one PASS/FAIL line
(collected in the terminal summary). Seeds derive from ``BASE_SEED``, which
was fixed before any of these runs were looked at. Runs shared across
criteria are cached for the session.
"""
import time

import numpy as np
import pytest
from scipy import stats

from flowbal import analysis
from flowbal.engine import STABLE, UNSTABLE, RunConfig, run
from flowbal.model import ArrivalLaw, ChannelLaw, FlowSizeLaw, SystemConfig, default_setup
from flowbal.rng import point_seed

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

BASE_SEED = 1
_CACHE = {}
# criteria whose runs feed the oracle-dominance check
_COUPLED = ("c2", "c3", "c5")


def cached(tag, key, cfg):
    k = (tag, key)
    if k not in _CACHE:
        _CACHE[k] = run(cfg)
    return _CACHE[k]


def two_ap_onoff(lam, policy, p=(0.9, 0.4)):
    return SystemConfig(2, ChannelLaw((0, 10), tuple((1 - q, q) for q in p)), ArrivalLaw.bernoulli(lam),
                        FlowSizeLaw.two_point(5, 20), policy)


def heavy(M, eps, policy, beta=20):
    return default_setup(M=M, lam=(M - eps) / M, beta=beta, w=M, policy=policy)


# criterion 1 ---------------------------------------------------------------

def test_c1_bcf_join_probability(report):
    t0 = time.perf_counter()
    res = run(RunConfig(two_ap_onoff(0.25, "bcf"), horizon=4_400_000, seed=point_seed(BASE_SEED, "c1", 0, 0)))
    elapsed = time.perf_counter() - t0
    frac = res.routed[0] / res.routed.sum()
    ok = res.routed.sum() >= 1_000_000 and abs(frac - 0.75) <= 0.005 and elapsed < 10
    report("C1 BCF join probability", ok,
           f"fraction to AP1 {frac:.5f} over {res.routed.sum()} arrivals (target 0.75 +- 0.005), {elapsed:.1f}s")
    assert ok


# criterion 2 ---------------------------------------------------------------

def c2_runs():
    seed = point_seed(BASE_SEED, "c2", 0, 0)
    bcf = cached("c2", "bcf", RunConfig(two_ap_onoff(1.4 / 5, "bcf"), horizon=2_000_000, seed=seed))
    jlw = cached("c2", "jlw", RunConfig(two_ap_onoff(1.9 / 5, "jlw"), horizon=2_000_000, seed=seed))
    return bcf, jlw


def test_c2_bcf_throughput_loss(report):
    t0 = time.perf_counter()
    bcf, jlw = c2_runs()
    elapsed = time.perf_counter() - t0
    ok = bcf.summary.stability_flag == UNSTABLE and jlw.summary.stability_flag == STABLE and elapsed < 120
    report("C2 BCF throughput loss", ok,
           f"BCF rho=1.4: {bcf.summary.stability_flag} (trend t={bcf.trend_t:.1f}, guard={bcf.guard_tripped}); "
           f"JLW rho=1.9: {jlw.summary.stability_flag} (mean W {jlw.summary.mean_total_workload:.1f}); "
           f"{elapsed:.1f}s")
    assert ok


# criteria 3 and 4 ----------------------------------------------------------

C3_EPS = (0.1, 0.05, 0.02)
C3_REPS = 5


def c3_scaled(policy):
    """eps * mean total workload, averaged over replications, per eps."""
    out = []
    for i, eps in enumerate(C3_EPS):
        vals = []
        for rep in range(C3_REPS):
            cfg = RunConfig(heavy(5, eps, policy), horizon=10_000_000, seed=point_seed(BASE_SEED, "c3", i, rep))
            vals.append(eps * cached("c3", (policy, i, rep), cfg).summary.mean_total_workload)
        vals = np.array(vals)
        out.append((vals.mean(), stats.t.ppf(0.975, C3_REPS - 1) * vals.std(ddof=1) / np.sqrt(C3_REPS)))
    return out


def _fmt_sweep(vals):
    return ", ".join(f"eps={e}: {m:.2f}+-{h:.2f}" for e, (m, h) in zip(C3_EPS, vals))


def test_c3_jlw_heavy_traffic(report):
    jlw = c3_scaled("jlw")
    means = [m for m, _ in jlw]
    decreasing = all(a > b for a, b in zip(means, means[1:]))
    within = abs(means[-1] - 30) <= 0.15 * 30
    ok = decreasing and within
    report("C3 JLW heavy-traffic limit", ok,
           f"eps*E[W] {_fmt_sweep(jlw)}; decreasing={decreasing}; target 30 +-15% at eps=0.02")
    assert ok


def test_c4_rlb_heavy_traffic(report):
    rlb, jlw = c3_scaled("rlb"), c3_scaled("jlw")
    within = abs(rlb[-1][0] - 40) <= 0.15 * 40
    below = all(j[0] < r[0] for j, r in zip(jlw, rlb))
    ok = within and below
    report("C4 RLB heavy-traffic limit", ok,
           f"eps*E[W] {_fmt_sweep(rlb)}; target 40 +-15% at eps=0.02; JLW below RLB at every eps={below}")
    assert ok


# criterion 5 ---------------------------------------------------------------

C5_EPS = 0.006
C5_M = (5, 8, 12)
C5_HORIZON = 100_000_000


def test_c5_m_sweep(report):
    ok = True
    parts = []
    for i, M in enumerate(C5_M):
        seed = point_seed(BASE_SEED, "c5", i, 0)
        for policy, target in (("jlw", (21 * M - 20 - M * M) / 2), ("rlb", 10 * M - 10)):
            res = cached("c5", (policy, M), RunConfig(heavy(M, C5_EPS, policy), horizon=C5_HORIZON, seed=seed))
            val = C5_EPS * res.summary.mean_total_workload
            ci = C5_EPS * res.summary.ci_halfwidth
            hit = abs(val - target) <= 0.2 * target
            ok &= hit
            parts.append(f"{policy} M={M}: {val:.1f}+-{ci:.1f} vs {target:g} ({'ok' if hit else 'miss'})")
    report("C5 M-sweep at eps=0.006", ok, "; ".join(parts) + f"; {C5_HORIZON:.0e} slots, 95% batch-means CI")
    assert ok


# criterion 6 ---------------------------------------------------------------

def test_c6_oracle_dominance(report):
    # make sure every coupled run exists even if earlier criteria were deselected
    c2_runs()
    c3_scaled("jlw"), c3_scaled("rlb")
    for i, M in enumerate(C5_M):
        for policy in ("jlw", "rlb"):
            cached("c5", (policy, M), RunConfig(heavy(M, C5_EPS, policy), horizon=C5_HORIZON,
                                                seed=point_seed(BASE_SEED, "c5", i, 0)))
    runs = [r for (tag, _), r in _CACHE.items() if tag in _COUPLED]
    viol = sum(r.oracle_violations for r in runs)
    slots = sum(r.slots_run for r in runs)
    ok = viol == 0
    report("C6 oracle dominance", ok, f"{viol} violations over {len(runs)} runs, {slots:.3e} slots")
    assert ok


# criterion 7 ---------------------------------------------------------------

def test_c7_dynamics_identity(report):
    parts, ok = [], True
    for policy in ("bcf", "rlb", "jlw"):
        res = run(RunConfig(default_setup(M=5, lam=0.9, w=5, policy=policy), horizon=1_000_000,
                            seed=point_seed(BASE_SEED, "c7", 0, 0), debug=True))
        ok &= res.identity_violations == 0 and res.slots_run == 1_000_000
        parts.append(f"{policy}: {res.identity_violations} violations")
    report("C7 dynamics identity", ok, "; ".join(parts) + " over 1e6 debug slots each")
    assert ok


# criterion 8 ---------------------------------------------------------------

def test_c8_state_space_collapse(report):
    horizons = {0.1: 10_000_000, 0.01: 20_000_000}
    perp = {}
    for policy in ("jlw", "rlb"):
        for i, eps in enumerate(horizons):
            res = run(RunConfig(heavy(5, eps, policy), horizon=horizons[eps], seed=point_seed(BASE_SEED, "c8", i, 0)))
            perp[policy, eps] = res.summary.mean_w_perp_sq
    r_jlw = perp["jlw", 0.01] / perp["jlw", 0.1]
    r_rlb = perp["rlb", 0.01] / perp["rlb", 0.1]
    ok = 0.5 <= r_jlw <= 2 and r_rlb > 2
    report("C8 state-space collapse", ok,
           f"|W_perp|^2 ratio eps 0.01/0.1: JLW {r_jlw:.2f} ({perp['jlw', 0.1]:.1f} -> {perp['jlw', 0.01]:.1f}), "
           f"RLB {r_rlb:.2f} ({perp['rlb', 0.1]:.1f} -> {perp['rlb', 0.01]:.1f})")
    assert ok


# criterion 9 ---------------------------------------------------------------

def test_c9_delay_insensitivity(report):
    betas = np.array([10.0, 40.0, 100.0])
    reps = 3
    delay, work = [], []
    for i, b in enumerate(betas):
        cfgs = [RunConfig(default_setup(M=5, lam=0.9, beta=int(b), w=5, policy="jlw"), horizon=5_000_000,
                          seed=point_seed(BASE_SEED, "c9", i, r)) for r in range(reps)]
        res = [run(c).summary for c in cfgs]
        delay.append(np.mean([s.mean_delay for s in res]))
        work.append(np.mean([s.mean_total_workload for s in res]))
    delay, work = np.array(delay), np.array(work)
    spread = (delay.max() - delay.min()) / delay.mean()
    fit = stats.linregress(betas, work)
    monotone = bool(np.all(np.diff(work) > 0))
    ok = spread < 0.10 and monotone and fit.slope > 0 and fit.rvalue ** 2 > 0.9
    report("C9 delay insensitivity", ok,
           f"delay {np.round(delay, 3).tolist()} (spread {spread:.1%}); workload {np.round(work, 2).tolist()} "
           f"(slope {fit.slope:.4f}, R^2 {fit.rvalue ** 2:.3f})")
    assert ok


# criterion 10 --------------------------------------------------------------

def test_c10_closed_forms(report):
    t0 = time.perf_counter()
    checks = {
        "bcf_join(0.9,0.4)": (analysis.bcf_join_prob(0.9, 0.4), 0.75),
        "bcf_loss(0.9,0.4)": (analysis.bcf_throughput_loss(0.9, 0.4), 1 / 3),
        "bcf_loss(1,0)": (analysis.bcf_throughput_loss(1, 0), 0.5),
        "flow_variance(5,20)": (analysis.flow_size_variance(5, 20), 60.0),
        "rlb_limit(60,5)": (analysis.rlb_limit(60, 5).total, 40.0),
        "jlw_limit(60)": (analysis.jlw_limit(60), 30.0),
        "capacity(5)": (analysis.capacity_threshold(5), 5),
        "capacity(2)": (analysis.capacity_threshold(2), 2),
    }
    M = np.arange(5, 19)
    sweep_err = float(np.max(np.abs(analysis.jlw_limit_sweep(M) - (21 * M - 20 - M ** 2) / 2)))
    rlb_err = float(np.max(np.abs(analysis.rlb_limit_sweep(M) - (10 * M - 10))))
    errs = {k: abs(v - t) for k, (v, t) in checks.items()}
    errs["jlw sweep M=5..18"] = sweep_err
    errs["rlb sweep M=5..18"] = rlb_err
    elapsed = time.perf_counter() - t0
    bad = [k for k, e in errs.items() if e > 1e-12]
    ok = not bad and elapsed < 1
    report("C10 closed forms", ok, f"{len(errs)} values within 1e-12 (failing: {bad or 'none'}), {elapsed * 1e3:.1f}ms")
    assert ok


# relaxed workload-reduction check over the arrival-rate sweep -----------------

def test_lambda_sweep_jlw_below_rlb(report):
    lams = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
    gaps = []
    for i, lam in enumerate(lams):
        eps = 5 - 5 * lam
        horizon = 10_000_000 if eps <= 0.05 else 2_000_000
        seed = point_seed(BASE_SEED, "fig2", i, 0)
        w = {p: run(RunConfig(default_setup(M=5, lam=lam, w=5, policy=p), horizon=horizon, seed=seed))
             .summary.mean_total_workload for p in ("jlw", "rlb")}
        gaps.append(w["rlb"] - w["jlw"])
    gaps = np.array(gaps)
    below = bool(np.all(gaps > 0))
    widening = bool(np.all(np.diff(gaps) > 0))
    ok = below and widening
    report("Fig2 JLW below RLB over lambda", ok,
           f"RLB-JLW gap {np.round(gaps, 2).tolist()}; positive={below}, widening={widening}")
    assert ok
