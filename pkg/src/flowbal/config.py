"""JSON experiment configs.

A config is one JSON document::

    {
      "name": "fig3a",
      "mode": "eps-sweep",
      "system": {
        "M": 5,
        "channel": {"rates": [0, 1, 5, 10], "probs": ["0.1", "0.2", "0.5", "0.2"]},
        "arrivals": {"kind": "bernoulli", "lambda": "0.9"},
        "flow_size": {"kind": "two-point", "w": 5, "beta": 20}
      },
      "policies": ["rlb", "jlw"],
      "grid": {"eps": [0.1, 0.05, 0.02]},
      "replications": 5,
      "run": {"horizon": 10000000, "batch_count": 20, "seed": 1}
    }

``channel.probs`` is either one vector shared by all APs or a list of per-AP
vectors under ``channel.probs_per_ap``. Probabilities may be decimal strings.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from flowbal.model import (POLICIES, ArrivalLaw, ChannelLaw, ConfigError, FlowSizeLaw,
                           SystemConfig)

MODES = ("single", "lambda-sweep", "eps-sweep", "m-sweep", "beta-sweep", "bcf-loss-curve")
SEED_ENV = "FLOWBAL_SEED"


def _get(d: dict, key: str, where: str, default=...):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}.{key}: missing required field")
        return default
    return d[key]


def _wrap(where: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_channel(d: dict, M: int, where: str = "system.channel") -> ChannelLaw:
    rates = _get(d, "rates", where)
    if "probs_per_ap" in d:
        rows = d["probs_per_ap"]
        if not isinstance(rows, list) or len(rows) != M:
            raise ConfigError(f"{where}.probs_per_ap: expected {M} per-AP vectors")
        return _wrap(where, ChannelLaw, tuple(rates), tuple(tuple(r) for r in rows))
    probs = _get(d, "probs", where)
    return _wrap(where, ChannelLaw.identical, rates, probs, M)


def parse_arrivals(d: dict, where: str = "system.arrivals") -> ArrivalLaw:
    kind = _get(d, "kind", where)
    if kind == "bernoulli":
        return _wrap(where, ArrivalLaw.bernoulli, _get(d, "lambda", where))
    if kind == "pmf":
        return _wrap(where, ArrivalLaw.bounded, _get(d, "pmf", where))
    raise ConfigError(f"{where}.kind: expected 'bernoulli' or 'pmf', got {kind!r}")


def parse_flow_size(d: dict, c_max: int, where: str = "system.flow_size") -> FlowSizeLaw:
    kind = _get(d, "kind", where)
    if kind == "two-point":
        base = _get(d, "base", where, c_max)
        return _wrap(where, FlowSizeLaw.two_point, _get(d, "w", where), _get(d, "beta", where), int(base))
    if kind == "pmf":
        return _wrap(where, FlowSizeLaw.bounded, _get(d, "pmf", where))
    raise ConfigError(f"{where}.kind: expected 'two-point' or 'pmf', got {kind!r}")


def parse_system(d: dict, policy: str = "jlw", where: str = "system") -> SystemConfig:
    M = _get(d, "M", where)
    if not isinstance(M, int) or M < 1:
        raise ConfigError(f"{where}.M: expected a positive integer, got {M!r}")
    channel = parse_channel(_get(d, "channel", where), M, f"{where}.channel")
    arrivals = parse_arrivals(_get(d, "arrivals", where), f"{where}.arrivals")
    sizes = parse_flow_size(_get(d, "flow_size", where), channel.c_max, f"{where}.flow_size")
    return SystemConfig(M, channel, arrivals, sizes, policy)


@dataclass
class RunSettings:
    horizon: int | str = "auto"
    warmup: int | None = None
    batch_count: int = 20
    seed: int = 1
    guard: int = 10**9
    debug: bool = False


@dataclass
class ExperimentSpec:
    name: str
    mode: str
    system: dict
    policies: list[str]
    grid: dict = field(default_factory=dict)
    replications: int = 1
    run: RunSettings = field(default_factory=RunSettings)
    fatal_instability: bool = False
    base: SystemConfig | None = None

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(self, run=replace(self.run, seed=seed))


def _check_policy(p, where):
    if p not in POLICIES:
        raise ConfigError(f"{where}: unknown policy {p!r}; expected one of {', '.join(POLICIES)}")
    return p


def parse_spec(doc: dict) -> ExperimentSpec:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    name = str(_get(doc, "name", "config", "experiment"))
    mode = _get(doc, "mode", "config", "single")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {mode!r}")
    if "policy" in doc:
        policies = [_check_policy(doc["policy"], "policy")]
    else:
        raw = _get(doc, "policies", "config", ["jlw"])
        if not isinstance(raw, list) or not raw:
            raise ConfigError("policies: expected a nonempty list")
        policies = [_check_policy(p, f"policies[{i}]") for i, p in enumerate(raw)]
    system = _get(doc, "system", "config")
    base = parse_system(system, policies[0])

    grid = doc.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("grid: expected an object")
    key = {"lambda-sweep": "lambda", "eps-sweep": "eps", "m-sweep": "M", "beta-sweep": "beta",
           "bcf-loss-curve": "diff"}.get(mode)
    if key is not None:
        vals = grid.get(key)
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"grid.{key}: {mode} needs a nonempty list")

    reps = doc.get("replications", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError(f"replications: expected an integer >= 1, got {reps!r}")

    rd = doc.get("run", {})
    settings = RunSettings()
    for k in ("horizon", "warmup", "batch_count", "seed", "guard", "debug"):
        if k in rd:
            setattr(settings, k, rd[k])
    if settings.horizon != "auto" and (not isinstance(settings.horizon, int) or settings.horizon < 1):
        raise ConfigError(f"run.horizon: expected a positive integer or 'auto', got {settings.horizon!r}")
    if not isinstance(settings.seed, int):
        raise ConfigError("run.seed: expected an integer")
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            settings.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: expected an integer, got {env_seed!r}") from None

    spec = ExperimentSpec(name, mode, system, policies, grid, reps, settings,
                          bool(doc.get("fatal_instability", False)), base)
    if mode in ("eps-sweep", "m-sweep"):
        from flowbal.experiments import expand_points  # validates eps / lambda feasibility
        expand_points(spec)
    return spec


def load_spec(path: str | os.PathLike) -> ExperimentSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return parse_spec(doc)
