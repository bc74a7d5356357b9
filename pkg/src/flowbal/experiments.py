"""Grid expansion, per-point runs, and CSV rows for experiment sweeps."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from flowbal import analysis
from flowbal.config import ExperimentSpec
from flowbal.engine import RunConfig, RunResult, RunSummary, default_horizon, run
from flowbal.model import ArrivalLaw, ChannelLaw, ConfigError, FlowSizeLaw, SystemConfig
from flowbal.policies import route_bcf_batch
from flowbal.rng import point_seed, substream

SPEC_VERSION = "1"
HEADER = ["spec_version", "experiment", "policy", "M", "lambda", "eps", "beta", "w", "seed", "slots",
          "warmup", "mean_total_workload", "ci_halfwidth", "mean_delay", "departures",
          "mean_w_perp_sq", "mean_unused", "stability_flag"]
OVERLAY = ["eps_times_mean_workload", "analytic_jlw", "analytic_rlb", "analytic_rlb_system_eps"]
BCF_CURVE_HEADER = ["spec_version", "experiment", "p1", "p2", "diff", "join_prob", "join_prob_empirical",
                    "throughput_loss", "supported_region"]


@dataclass(frozen=True)
class Point:
    index: int
    system: SystemConfig

    @property
    def M(self) -> int:
        return self.system.M

    @property
    def lam(self) -> float:
        return self.system.arrivals.mean

    @property
    def eps(self) -> float:
        return self.M - self.system.rho

    @property
    def beta(self) -> float | None:
        return self.system.sizes.beta

    @property
    def w(self) -> float:
        return self.system.w


def _with_lambda(sys_: SystemConfig, lam: float, where: str) -> SystemConfig:
    if sys_.arrivals.kind != "bernoulli":
        raise ConfigError(f"{where}: sweeping the arrival rate needs bernoulli arrivals")
    try:
        return replace(sys_, arrivals=ArrivalLaw.bernoulli(lam))
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None


def _two_point_beta(sys_: SystemConfig, where: str) -> float:
    if sys_.sizes.kind != "two-point":
        raise ConfigError(f"{where}: needs a two-point flow_size law")
    return sys_.sizes.beta


def expand_points(spec: ExperimentSpec) -> list[Point]:
    base = spec.base
    mode, grid = spec.mode, spec.grid
    if mode == "single":
        return [Point(0, base)]
    if mode == "lambda-sweep":
        return [Point(i, _with_lambda(base, float(l), f"grid.lambda[{i}]")) for i, l in enumerate(grid["lambda"])]
    if mode == "eps-sweep":
        out = []
        for i, e in enumerate(grid["eps"]):
            e = float(e)
            if not 0 < e < base.M:
                raise ConfigError(f"grid.eps[{i}]: must lie in (0, M={base.M})")
            lam = (base.M - e) / base.w
            if lam > 1:
                raise ConfigError(f"grid.eps[{i}]: (M - eps)/w = {lam:.6g} exceeds 1 for bernoulli arrivals")
            out.append(Point(i, _with_lambda(base, lam, f"grid.eps[{i}]")))
        return out
    if mode == "m-sweep":
        eps = grid.get("eps")
        if not isinstance(eps, (int, float)) or eps <= 0:
            raise ConfigError("grid.eps: m-sweep needs one positive eps")
        beta = _two_point_beta(base, "system.flow_size")
        row = base.channel.probs_per_ap[0]
        out = []
        for i, M in enumerate(grid["M"]):
            if not isinstance(M, int) or M < 1:
                raise ConfigError(f"grid.M[{i}]: expected a positive integer")
            where = f"grid.M[{i}]"
            try:
                sizes = FlowSizeLaw.two_point(M, beta, base=base.c_max)
                chan = ChannelLaw.identical(base.channel.rates, row, M)
                sys_ = SystemConfig(M, chan, ArrivalLaw.bernoulli((M - eps) / M), sizes, base.policy)
            except ConfigError as e:
                raise ConfigError(f"{where}: {e}") from None
            out.append(Point(i, sys_))
        return out
    if mode == "beta-sweep":
        _two_point_beta(base, "system.flow_size")
        out = []
        for i, b in enumerate(grid["beta"]):
            try:
                sizes = FlowSizeLaw.two_point(base.sizes.w, b, base=base.sizes.values[0])
            except ConfigError as e:
                raise ConfigError(f"grid.beta[{i}]: {e}") from None
            out.append(Point(i, replace(base, sizes=sizes)))
        return out
    raise ConfigError(f"mode {mode!r} has no simulation points")


def run_config_for(spec: ExperimentSpec, point: Point, policy: str, rep: int) -> RunConfig:
    s = spec.run
    horizon = default_horizon(point.eps) if s.horizon == "auto" else int(s.horizon)
    seed = point_seed(s.seed, spec.name, point.index, rep)
    return RunConfig(replace(point.system, policy=policy), horizon=horizon, seed=seed,
                     warmup=s.warmup, batch_count=s.batch_count, guard=int(s.guard), debug=bool(s.debug))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def summary_row(spec: ExperimentSpec, point: Point, policy: str, cfg: RunConfig, res: RunResult) -> dict:
    s = res.summary
    return {
        "spec_version": SPEC_VERSION, "experiment": spec.name, "policy": policy,
        "M": point.M, "lambda": float(point.lam), "eps": float(point.eps),
        "beta": None if point.beta is None else float(point.beta), "w": float(point.w),
        "seed": cfg.seed, "slots": res.slots_run, "warmup": cfg.warmup,
        "mean_total_workload": s.mean_total_workload, "ci_halfwidth": s.ci_halfwidth,
        "mean_delay": s.mean_delay, "departures": s.departures, "mean_w_perp_sq": s.mean_w_perp_sq,
        "mean_unused": s.mean_unused, "stability_flag": s.stability_flag,
    }


def overlay(point: Point, row: dict) -> dict:
    sys_ = point.system
    out = {"eps_times_mean_workload": point.eps * row["mean_total_workload"],
           "analytic_jlw": None, "analytic_rlb": None, "analytic_rlb_system_eps": None}
    two_point = sys_.sizes.kind == "two-point" and sys_.sizes.values[0] == sys_.c_max
    if sys_.arrivals.kind == "bernoulli" and two_point and point.M / point.w <= 1 + 1e-12:
        sigma2 = analysis.arrival_workload_variance(min(point.M / point.w, 1.0), point.w, point.beta)
        out["analytic_jlw"] = analysis.jlw_limit(sigma2)
        out["analytic_rlb"] = analysis.rlb_limit(sigma2, point.M).total
        out["analytic_rlb_system_eps"] = analysis.rlb_limit_system_eps(sigma2, point.M)
    return out


def parse_row(row: dict) -> RunSummary:
    """Rebuild a :class:`RunSummary` from one CSV row (strings)."""
    return RunSummary(
        mean_total_workload=float(row["mean_total_workload"]),
        ci_halfwidth=float(row["ci_halfwidth"]),
        mean_delay=float(row["mean_delay"]),
        departures=int(row["departures"]),
        mean_w_perp_sq=float(row["mean_w_perp_sq"]),
        mean_unused=float(row["mean_unused"]),
        stability_flag=row["stability_flag"],
    )


def _task(args):
    spec, point, policy, rep = args
    cfg = run_config_for(spec, point, policy, rep)
    res = run(cfg)
    return summary_row(spec, point, policy, cfg, res), res.oracle_violations, res.identity_violations


def tasks(spec: ExperimentSpec):
    return [(spec, p, pol, rep) for p in expand_points(spec) for pol in spec.policies
            for rep in range(spec.replications)]


def run_rows(spec: ExperimentSpec, workers: int = 1, with_overlay: bool = True) -> list[dict]:
    """Run every (point, policy, replication) and return rows in grid order."""
    todo = tasks(spec)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_task, todo))
    else:
        results = [_task(t) for t in todo]
    rows = []
    for (_, point, _, _), (row, oracle_viol, ident_viol) in zip(todo, results):
        if with_overlay:
            row.update(overlay(point, row))
        rows.append(row)
    return rows


def write_csv(rows: list[dict], columns: list[str], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()


def bcf_loss_curve(spec: ExperimentSpec) -> list[dict]:
    """Analytic BCF throughput loss over a grid of channel-quality gaps, with an empirical join fraction."""
    p1 = float(spec.grid.get("p1", 1.0))
    draws = int(spec.grid.get("draws", 100_000))
    rows = []
    for i, d in enumerate(spec.grid["diff"]):
        d = float(d)
        p2 = p1 - d
        if not 0 <= p2 <= p1 <= 1:
            raise ConfigError(f"grid.diff[{i}]: p2 = p1 - diff = {p2:.6g} is outside [0, p1]")
        gen = substream(point_seed(spec.run.seed, spec.name, i, 0), "bcf")
        on = gen.random((draws, 2)) < np.array([p1, p2])
        dest = route_bcf_batch(on.astype(np.int64), gen.random(draws))
        rows.append({
            "spec_version": SPEC_VERSION, "experiment": spec.name, "p1": p1, "p2": p2, "diff": d,
            "join_prob": analysis.bcf_join_prob(p1, p2),
            "join_prob_empirical": float(np.mean(dest == 0)),
            "throughput_loss": analysis.bcf_throughput_loss(p1, p2),
            "supported_region": analysis.bcf_supported_region(p1, p2),
        })
    return rows


def any_unstable(rows) -> bool:
    return any(r.get("stability_flag") == "suspected-unstable" for r in rows)


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
