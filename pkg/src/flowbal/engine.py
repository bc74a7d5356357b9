"""Seeded slotted simulation runs and steady-state estimation."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from flowbal import kernels
from flowbal import rng as rngmod
from flowbal.model import ConfigError, SystemConfig, SystemState, step, w_perp_sq
from flowbal.policies import LoadBalancer

__all__ = ["RunConfig", "RunSummary", "RunResult", "run", "run_reference", "w_perp_sq",
           "measure_delay_stream", "default_horizon", "batch_means_ci", "trend_test"]

STABLE = "stable"
UNSTABLE = "suspected-unstable"


def default_horizon(eps: float | None) -> int:
    """Relaxation scales like 1/eps**2, so heavy-traffic points run longer."""
    if eps is not None and eps <= 0.05:
        return 10_000_000
    return 1_000_000


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    horizon: int
    seed: int = 0
    warmup: int | None = None
    batch_count: int = 20
    guard: int = 10**9
    debug: bool = False
    record_delays: bool = False
    chunk: int = 1 << 16
    trend_bins: int = 40

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.horizon // 10)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0 <= self.warmup < self.horizon:
            raise ConfigError(f"warmup ({self.warmup}) must lie in [0, horizon={self.horizon})")
        if self.batch_count < 1 or (self.horizon - self.warmup) % self.batch_count:
            raise ConfigError(f"batch_count={self.batch_count} must divide horizon - warmup = "
                              f"{self.horizon - self.warmup}")
        if self.guard < 1:
            raise ConfigError("guard must be >= 1")

    @property
    def batch_len(self) -> int:
        return (self.horizon - self.warmup) // self.batch_count


@dataclass
class RunSummary:
    mean_total_workload: float
    ci_halfwidth: float
    mean_delay: float
    departures: int
    mean_w_perp_sq: float
    mean_unused: float
    stability_flag: str


@dataclass
class RunResult:
    summary: RunSummary
    slots_run: int
    arrivals: int
    oracle_violations: int
    identity_violations: int
    guard_tripped: bool
    mean_flows: float
    arrival_rate: float
    mean_phi: float
    batch_means: np.ndarray
    trend_means: np.ndarray
    trend_t: float
    routed: np.ndarray
    delays: np.ndarray | None = None
    backend: str = ""
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def little_gap(self) -> float:
        """Relative gap between mean flow count and arrival rate times mean delay."""
        lhs = self.mean_flows
        rhs = self.arrival_rate * self.summary.mean_delay
        return abs(lhs - rhs) / max(lhs, 1e-300)


def batch_means_ci(batch_means, level: float = 0.95) -> float:
    b = np.asarray(batch_means, dtype=np.float64)
    if b.size < 2:
        return math.nan
    return float(stats.t.ppf(0.5 + level / 2, b.size - 1) * b.std(ddof=1) / math.sqrt(b.size))


def trend_test(bin_means, t_threshold: float = 5.0, rel_growth: float = 0.2) -> tuple[bool, float]:
    """Regress the last half of the binned workload trace on time.

    Flags growth when the slope t-statistic exceeds ``t_threshold`` and the
    fitted rise over that half exceeds ``rel_growth`` of its mean level.
    Returns ``(flagged, t_statistic)``.
    """
    y = np.asarray(bin_means, dtype=np.float64)
    y = y[len(y) // 2:]
    if y.size < 3 or np.ptp(y) == 0:
        return False, 0.0
    x = np.arange(y.size, dtype=np.float64)
    fit = stats.linregress(x, y)
    t = math.inf if fit.stderr == 0 else fit.slope / fit.stderr
    rise = fit.slope * (y.size - 1)
    return bool(t > t_threshold and rise > rel_growth * max(y.mean(), 1e-300)), float(t)


def _bin_counts(horizon: int, bins: int) -> np.ndarray:
    b = np.arange(bins + 1, dtype=np.int64)
    edges = -(-(b * horizon) // bins)
    return np.diff(edges)


class _Inputs:
    """Pre-draws one chunk of randomness from the named substreams."""

    def __init__(self, config: RunConfig):
        sys_ = config.system
        self.sys = sys_
        self.streams = rngmod.make_streams(config.seed, sys_.M)
        self.bcf = sys_.policy == "bcf"

    def draw(self, n: int):
        s, M = self.streams, self.sys.M
        n_arr = self.sys.arrivals.sample(s["arrivals"], n)
        tot = int(n_arr.sum())
        sizes = self.sys.sizes.sample(s["sizes"], tot)
        tie_u = s["tie"].random(tot)
        bcf_u = s["bcf"].random(tot * M) if self.bcf else np.empty(0)
        chan = np.empty((n, M))
        pick = np.empty((n, M))
        for m in range(M):
            u = s[f"channel{m}"].random((n, 2))
            chan[:, m] = u[:, 0]
            pick[:, m] = u[:, 1]
        return n_arr, sizes, tie_u, bcf_u, chan, pick, tot


def run(config: RunConfig, backend: str | None = None) -> RunResult:
    """Simulate ``config.horizon`` slots and summarize the post-warm-up window.

    ``backend`` forces ``"numba"`` or ``"numpy"``; by default the module-level
    choice in :mod:`flowbal.kernels` is used.
    """
    if backend is None:
        loop, backend = kernels.slot_loop, kernels.backend()
    elif backend == "numba":
        if not kernels.USE_NUMBA:
            raise RuntimeError("numba backend disabled or unavailable")
        loop = kernels.slot_loop
    elif backend == "numpy":
        loop = kernels.slot_loop_py
    else:
        raise ValueError(f"unknown backend {backend!r}")

    t_start = time.perf_counter()
    sys_ = config.system
    M, c_max = sys_.M, sys_.c_max
    rates = np.asarray(sys_.channel.rates, dtype=np.int64)
    cdf = sys_.channel.cdf()
    with np.errstate(divide="ignore"):
        logcdf = np.log(cdf)
    logcdf[:, -1] = 0.0
    policy = kernels.POLICY_CODES[sys_.policy]

    cap = 64
    resid = np.zeros((M, cap), dtype=np.int64)
    arrived = np.zeros((M, cap), dtype=np.int64)
    count = np.zeros(M, dtype=np.int64)
    W = np.zeros(M, dtype=np.int64)
    phi = np.zeros(1, dtype=np.int64)
    fsum = np.zeros(kernels.N_FSUM)
    isum = np.zeros(kernels.N_ISUM, dtype=np.int64)
    batch_sum = np.zeros(config.batch_count)
    trend_sum = np.zeros(config.trend_bins)
    routed = np.zeros(M, dtype=np.int64)
    delay_chunks = []

    inputs = _Inputs(config)
    t = 0
    while t < config.horizon:
        n = min(config.chunk, config.horizon - t)
        n_arr, sizes, tie_u, bcf_u, chan, pick, tot = inputs.draw(n)
        need = int(count.max()) + tot
        if need > cap:
            cap = max(2 * cap, need)
            grown = np.zeros((M, cap), dtype=np.int64)
            grown[:, :resid.shape[1]] = resid
            resid = grown
            grown = np.zeros((M, cap), dtype=np.int64)
            grown[:, :arrived.shape[1]] = arrived
            arrived = grown
        delays = np.empty(n * M if config.record_delays else 0, dtype=np.int64)
        isum[kernels.I_DELAYS_WRITTEN] = 0
        done = loop(t, n, policy, M, c_max, rates, cdf, logcdf,
                    n_arr, sizes, tie_u, bcf_u, chan, pick,
                    resid, arrived, count, W, phi,
                    config.warmup, config.horizon, config.batch_len, config.trend_bins,
                    config.guard, config.debug,
                    fsum, isum, batch_sum, trend_sum, delays, routed)
        if config.record_delays:
            delay_chunks.append(delays[:isum[kernels.I_DELAYS_WRITTEN]].copy())
        t += int(done)
        if isum[kernels.I_GUARD]:
            break

    guard = bool(isum[kernels.I_GUARD])
    n_post = int(isum[kernels.I_POST])
    n_all = int(isum[kernels.I_ALL])
    if n_post:
        mean_w = fsum[kernels.F_SUM_W] / n_post
        mean_perp = fsum[kernels.F_SUM_WPERP] / n_post
        mean_unused = fsum[kernels.F_SUM_UNUSED] / n_post
        mean_flows = fsum[kernels.F_SUM_FLOWS] / n_post
        arrival_rate = isum[kernels.I_ARRIVALS_POST] / n_post
        mean_phi = fsum[kernels.F_SUM_PHI] / n_post
    else:
        # guard tripped inside warm-up: fall back to every observed slot
        mean_w = fsum[kernels.F_SUM_W_ALL] / max(n_all, 1)
        mean_perp = mean_unused = mean_flows = arrival_rate = mean_phi = 0.0
    n_meas = int(isum[kernels.I_DEPART_MEASURED])
    mean_delay = fsum[kernels.F_DELAY_SUM] / n_meas if n_meas else 0.0

    if guard:
        batch_means = np.zeros(0)
        ci = math.nan
        trend_means = np.zeros(0)
        flagged, t_stat = True, math.inf
    else:
        batch_means = batch_sum / config.batch_len
        ci = batch_means_ci(batch_means)
        trend_means = trend_sum / _bin_counts(config.horizon, config.trend_bins)
        flagged, t_stat = trend_test(trend_means)

    summary = RunSummary(
        mean_total_workload=float(mean_w),
        ci_halfwidth=float(ci),
        mean_delay=float(mean_delay),
        departures=n_meas,
        mean_w_perp_sq=float(mean_perp),
        mean_unused=float(mean_unused),
        stability_flag=UNSTABLE if flagged else STABLE,
    )
    return RunResult(
        summary=summary,
        slots_run=n_all,
        arrivals=int(isum[kernels.I_ARRIVALS]),
        oracle_violations=int(isum[kernels.I_ORACLE_VIOL]),
        identity_violations=int(isum[kernels.I_IDENTITY_VIOL]),
        guard_tripped=guard,
        mean_flows=float(mean_flows),
        arrival_rate=float(arrival_rate),
        mean_phi=float(mean_phi),
        batch_means=batch_means,
        trend_means=trend_means,
        trend_t=t_stat,
        routed=routed.copy(),
        delays=np.concatenate(delay_chunks) if config.record_delays else None,
        backend=backend,
        elapsed=time.perf_counter() - t_start,
    )


def measure_delay_stream(result: RunResult) -> np.ndarray:
    """Per-flow delays of departed flows that arrived after warm-up."""
    if result.delays is None:
        raise ValueError("run was made without record_delays=True")
    return result.delays


def run_reference(config: RunConfig) -> RunResult:
    """Slow path through :func:`flowbal.model.step` with one channel draw per flow.

    Meant for cross-checking the kernel on short horizons; per-slot invariants
    are always asserted here.
    """
    t_start = time.perf_counter()
    sys_ = config.system
    state = SystemState.initial(sys_, config.seed)
    lb = LoadBalancer(sys_.policy, state.streams["tie"])
    M = sys_.M
    batch_sum = np.zeros(config.batch_count)
    trend_sum = np.zeros(config.trend_bins)
    routed = np.zeros(M, dtype=np.int64)
    phi = 0
    sums = dict(phi=0.0, w=0.0, perp=0.0, unused=0.0, flows=0.0, n=0, arr=0, arr_post=0)
    delays = []
    identity_viol = oracle_viol = 0
    guard = False
    for t in range(config.horizon):
        sizes = state.draw_arrivals()
        n_before = sum(len(ap) for ap in state.aps)
        _, rec = step(state, lb, sizes)
        total = int(rec.workload_before.sum())
        trend_sum[t * config.trend_bins // config.horizon] += total
        for m in rec.destinations:
            routed[m] += 1
        sums["arr"] += len(sizes)
        ok = np.array_equal(rec.workload_after, rec.workload_before + rec.nu - rec.mu)
        ok &= bool(np.all((rec.mu >= rec.peak_rate_seen) & (rec.mu <= 1) & (rec.mu >= 0)))
        identity_viol += not ok
        if t >= config.warmup:
            sums["n"] += 1
            sums["w"] += total
            sums["phi"] += phi
            sums["perp"] += rec.w_perp_sq
            sums["unused"] += M - int(rec.mu.sum())
            sums["flows"] += n_before + len(sizes)
            sums["arr_post"] += len(sizes)
            batch_sum[(t - config.warmup) // config.batch_len] += total
        for _, d in rec.departures:
            if t - d + 1 >= config.warmup:
                delays.append(d)
        phi = max(phi + int(rec.nu.sum()) - M, 0)
        new_total = int(rec.workload_after.sum())
        oracle_viol += phi > new_total
        if new_total > config.guard:
            guard = True
            break
    n = max(sums["n"], 1)
    batch_means = batch_sum / config.batch_len
    trend_means = trend_sum / _bin_counts(config.horizon, config.trend_bins)
    flagged, t_stat = (True, math.inf) if guard else trend_test(trend_means)
    d = np.asarray(delays, dtype=np.int64)
    summary = RunSummary(
        mean_total_workload=sums["w"] / n,
        ci_halfwidth=batch_means_ci(batch_means),
        mean_delay=float(d.mean()) if d.size else 0.0,
        departures=int(d.size),
        mean_w_perp_sq=sums["perp"] / n,
        mean_unused=sums["unused"] / n,
        stability_flag=UNSTABLE if flagged else STABLE,
    )
    return RunResult(
        summary=summary, slots_run=state.slot, arrivals=sums["arr"],
        oracle_violations=oracle_viol, identity_violations=identity_viol, guard_tripped=guard,
        mean_flows=sums["flows"] / n, arrival_rate=sums["arr_post"] / n,
        mean_phi=sums["phi"] / n,
        batch_means=batch_means, trend_means=trend_means, trend_t=t_stat, routed=routed,
        delays=d if config.record_delays else None, backend="reference",
        elapsed=time.perf_counter() - t_start,
    )
