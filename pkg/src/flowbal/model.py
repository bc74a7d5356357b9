"""Domain types and slotted-time dynamics of flows, channels and workloads.

The reference :func:`step` here draws one channel rate per present flow and is
written for clarity. The long-horizon engine uses the compiled kernel in
:mod:`flowbal.kernels`, which samples the same law more cheaply.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from flowbal import rng as rngmod


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


def _as_prob(x) -> float:
    # decimal strings are accepted so configs can carry exact probabilities
    return float(x)


@dataclass(frozen=True)
class ChannelLaw:
    """Per-flow channel rate distribution at each AP.

    ``rates`` are the packet rates ``c_0 < c_1 < ... < c_K`` with ``c_0 = 0``;
    ``probs_per_ap[m][k]`` is the probability a flow at AP ``m`` sees ``rates[k]``.
    """

    rates: tuple[int, ...]
    probs_per_ap: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        probs = tuple(tuple(_as_prob(p) for p in row) for row in self.probs_per_ap)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "probs_per_ap", probs)
        if len(rates) < 2:
            raise ConfigError("channel.rates needs at least two entries (0 and c_max)")
        if rates[0] != 0:
            raise ConfigError("channel.rates must start at 0")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError("channel.rates must be strictly increasing")
        if not probs:
            raise ConfigError("channel.probs must cover at least one AP")
        for m, row in enumerate(probs):
            if len(row) != len(rates):
                raise ConfigError(f"channel.probs[{m}] has {len(row)} entries, expected {len(rates)}")
            if any(p < 0 for p in row):
                raise ConfigError(f"channel.probs[{m}] has a negative entry")
            if abs(math.fsum(row) - 1.0) > 1e-12:
                raise ConfigError(f"channel.probs[{m}] sums to {math.fsum(row)!r}, not 1")
            if row[0] <= 0 or row[-1] <= 0:
                raise ConfigError(f"channel.probs[{m}]: outage and peak-rate probabilities must be > 0")

    @classmethod
    def identical(cls, rates: Sequence[int], probs: Sequence[float], M: int) -> "ChannelLaw":
        return cls(tuple(rates), tuple(tuple(probs) for _ in range(M)))

    @classmethod
    def on_off(cls, p_on: Sequence[float], c_max: int = 1) -> "ChannelLaw":
        """Two-state channel: rate ``c_max`` with probability ``p_on[m]`` at AP ``m``, else 0."""
        return cls((0, c_max), tuple((1.0 - p, p) for p in p_on))

    @property
    def M(self) -> int:
        return len(self.probs_per_ap)

    @property
    def c_max(self) -> int:
        return self.rates[-1]

    @property
    def K(self) -> int:
        return len(self.rates) - 1

    def cdf(self) -> np.ndarray:
        """(M, K+1) cumulative probabilities; last column forced to exactly 1."""
        c = np.cumsum(np.asarray(self.probs_per_ap, dtype=np.float64), axis=1)
        c[:, -1] = 1.0
        return c

    def sample(self, gen: np.random.Generator, ap: int, size: int) -> np.ndarray:
        idx = np.searchsorted(self.cdf()[ap], gen.random(size), side="right")
        return np.asarray(self.rates, dtype=np.int64)[idx]


@dataclass(frozen=True)
class ArrivalLaw:
    """Number of flows arriving per slot: Bernoulli or a bounded pmf on {0..A_max}."""

    kind: str
    pmf: tuple[float, ...]

    def __post_init__(self):
        pmf = tuple(_as_prob(p) for p in self.pmf)
        object.__setattr__(self, "pmf", pmf)
        if self.kind not in ("bernoulli", "pmf"):
            raise ConfigError(f"arrivals.kind must be 'bernoulli' or 'pmf', got {self.kind!r}")
        if any(p < 0 for p in pmf) or abs(math.fsum(pmf) - 1.0) > 1e-12:
            raise ConfigError("arrivals pmf must be nonnegative and sum to 1")
        if self.kind == "bernoulli" and len(pmf) != 2:
            raise ConfigError("bernoulli arrivals have support {0, 1}")

    @classmethod
    def bernoulli(cls, lam: float) -> "ArrivalLaw":
        lam = _as_prob(lam)
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"bernoulli arrival rate must lie in [0, 1], got {lam}")
        return cls("bernoulli", (1.0 - lam, lam))

    @classmethod
    def bounded(cls, pmf: Sequence[float]) -> "ArrivalLaw":
        return cls("pmf", tuple(pmf))

    @property
    def mean(self) -> float:
        return float(sum(k * p for k, p in enumerate(self.pmf)))

    @property
    def a_max(self) -> int:
        return len(self.pmf) - 1

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        u = gen.random(size)
        if self.kind == "bernoulli":
            return (u < self.pmf[1]).astype(np.int64)
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return np.searchsorted(c, u, side="right").astype(np.int64)


@dataclass(frozen=True)
class FlowSizeLaw:
    """Flow size in packets, as a finite pmf over ``values``."""

    values: tuple[int, ...]
    probs: tuple[float, ...]
    kind: str = "pmf"
    w: float | None = None
    beta: float | None = None

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        probs = tuple(_as_prob(p) for p in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if not values or len(values) != len(probs):
            raise ConfigError("flow size pmf needs matching, nonempty values and probs")
        if any(v < 1 for v in values):
            raise ConfigError("flow sizes must be >= 1 packet")
        if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ConfigError("flow size probabilities must be nonnegative and sum to 1")

    @classmethod
    def two_point(cls, w: float, beta: float, base: int = 10) -> "FlowSizeLaw":
        """Size ``base*beta`` with probability ``(w-1)/(beta-1)``, else ``base``.

        With ``base == c_max`` the per-flow workload is ``beta`` or 1 slots and
        has mean ``w``.
        """
        w, beta = float(w), float(beta)
        if beta < 2 or not (1 < w <= beta):
            raise ConfigError(f"two-point flow sizes need beta >= 2 and 1 < w <= beta (w={w}, beta={beta})")
        if beta != int(beta):
            raise ConfigError("two-point beta must be an integer")
        q = (w - 1.0) / (beta - 1.0)
        if q >= 1.0:
            return cls((base * int(beta),), (1.0,), kind="two-point", w=w, beta=beta)
        return cls((base, base * int(beta)), (1.0 - q, q), kind="two-point", w=w, beta=beta)

    @classmethod
    def bounded(cls, pmf: dict) -> "FlowSizeLaw":
        items = sorted((int(k), _as_prob(v)) for k, v in pmf.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    @property
    def f_max(self) -> int:
        return max(self.values)

    @property
    def mean(self) -> float:
        """Mean flow size in packets."""
        return float(sum(v * p for v, p in zip(self.values, self.probs)))

    def workload_pmf(self, c_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Law of ``ceil(F / c_max)``, the slots needed to serve a new flow."""
        v = -(-np.asarray(self.values, dtype=np.int64) // c_max)
        return v, np.asarray(self.probs, dtype=np.float64)

    def mean_workload(self, c_max: int) -> float:
        v, p = self.workload_pmf(c_max)
        return float(v @ p)

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        idx = np.searchsorted(c, gen.random(size), side="right")
        return np.asarray(self.values, dtype=np.int64)[idx]


POLICIES = ("bcf", "rlb", "jlw")


@dataclass(frozen=True)
class SystemConfig:
    M: int
    channel: ChannelLaw
    arrivals: ArrivalLaw
    sizes: FlowSizeLaw
    policy: str = "jlw"

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.channel.M != self.M:
            raise ConfigError(f"channel law covers {self.channel.M} APs, system has M={self.M}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")

    @property
    def c_max(self) -> int:
        return self.channel.c_max

    @property
    def w(self) -> float:
        return self.sizes.mean_workload(self.c_max)

    @property
    def rho(self) -> float:
        """Traffic intensity: mean new workload per slot."""
        return self.arrivals.mean * self.w


DEFAULT_RATES = (0, 1, 5, 10)
DEFAULT_PROBS = (0.1, 0.2, 0.5, 0.2)


def default_setup(M: int = 5, lam: float = 0.9, beta: float = 20, w: float | None = None,
                  policy: str = "jlw") -> SystemConfig:
    """Identical APs with rates 0/1/5/10, Bernoulli arrivals, two-point sizes, ``w = M`` by default."""
    w = M if w is None else w
    return SystemConfig(
        M=M,
        channel=ChannelLaw.identical(DEFAULT_RATES, DEFAULT_PROBS, M),
        arrivals=ArrivalLaw.bernoulli(lam),
        sizes=FlowSizeLaw.two_point(w, beta, base=DEFAULT_RATES[-1]),
        policy=policy,
    )


@dataclass(slots=True)
class Flow:
    id: int
    residual: int
    size: int
    arrival_slot: int
    ap: int


def workload(flows: Sequence[Flow], c_max: int) -> int:
    """Minimum number of slots needed to finish ``flows`` at rate ``c_max``."""
    if c_max < 1:
        raise ConfigError("c_max must be >= 1")
    return sum(-(-f.residual // c_max) for f in flows)


def mu_lower_bound_indicator(rates: Sequence[int], c_max: int) -> int:
    """1 iff some present flow drew the peak rate this slot."""
    return int(any(r == c_max for r in rates))


@dataclass
class SystemState:
    config: SystemConfig
    streams: dict[str, np.random.Generator]
    slot: int = 0
    aps: list[list[Flow]] = field(default_factory=list)
    next_id: int = 0

    @classmethod
    def initial(cls, config: SystemConfig, seed: int) -> "SystemState":
        return cls(config, rngmod.make_streams(seed, config.M), aps=[[] for _ in range(config.M)])

    def workloads(self) -> np.ndarray:
        c = self.config.c_max
        return np.array([workload(ap, c) for ap in self.aps], dtype=np.int64)

    def draw_arrivals(self) -> list[int]:
        """Flow sizes arriving this slot, from the arrival and size substreams."""
        n = int(self.config.arrivals.sample(self.streams["arrivals"], 1)[0])
        if n == 0:
            return []
        return [int(s) for s in self.config.sizes.sample(self.streams["sizes"], n)]


@dataclass
class SlotRecord:
    slot: int
    workload_before: np.ndarray
    workload_after: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    peak_rate_seen: np.ndarray
    departures: list[tuple[int, int]]
    delivered: int
    w_perp_sq: float
    destinations: list[int] = field(default_factory=list)


def step(state: SystemState, policy, arrivals: Sequence[int],
         channel_draws: dict[int, Sequence[int]] | None = None) -> tuple[SystemState, SlotRecord]:
    """Advance ``state`` by one slot with the given arriving flow sizes.

    Arrivals are routed on the pre-arrival workloads and are eligible for
    service in the same slot. ``mu`` is measured as the realized drop in
    workload, never drawn. ``state`` is updated in place and returned.

    ``channel_draws`` replays given per-flow rates for some APs (keyed by AP,
    one rate per flow present after arrivals) instead of drawing them.
    """
    from flowbal.policies import schedule_max_rate  # avoid import cycle

    cfg = state.config
    c = cfg.c_max
    t = state.slot
    W0 = state.workloads()

    flows = []
    for size in arrivals:
        flows.append(Flow(state.next_id, int(size), int(size), t, -1))
        state.next_id += 1
    bcf_draws = None
    if flows and policy.variant == "bcf":
        bcf_draws = [np.array([cfg.channel.sample(state.streams["bcf"], m, 1)[0] for m in range(cfg.M)])
                     for _ in flows]
    dest = policy.assign(len(flows), W0, bcf_draws)

    nu = np.zeros(cfg.M, dtype=np.int64)
    for f, m in zip(flows, dest):
        f.ap = int(m)
        state.aps[m].append(f)
        nu[m] += -(-f.size // c)

    mu = np.zeros(cfg.M, dtype=np.int64)
    peak = np.zeros(cfg.M, dtype=np.int64)
    departures = []
    delivered_total = 0
    for m, ap in enumerate(state.aps):
        if not ap:
            continue
        gen = state.streams[f"channel{m}"]
        if channel_draws is not None and m in channel_draws:
            rates = np.asarray(channel_draws[m], dtype=np.int64)
            if len(rates) != len(ap):
                raise ValueError(f"AP {m} has {len(ap)} flows but {len(rates)} replayed rates")
        else:
            rates = cfg.channel.sample(gen, m, len(ap))
        peak[m] = mu_lower_bound_indicator(rates, c)
        dec = schedule_max_rate([f.residual for f in ap], rates, gen.random())
        f = ap[dec.served]
        before = -(-f.residual // c)
        f.residual -= dec.delivered
        delivered_total += dec.delivered
        mu[m] = before - (-(-f.residual // c))
        if f.residual == 0:
            departures.append((f.id, t - f.arrival_slot + 1))
            ap.pop(dec.served)

    W1 = state.workloads()
    state.slot += 1
    rec = SlotRecord(t, W0, W1, nu, mu, peak, departures, delivered_total, w_perp_sq(W0),
                     [int(m) for m in dest])
    return state, rec


def w_perp_sq(W) -> float:
    """Squared norm of the workload vector's component orthogonal to all-ones."""
    W = np.asarray(W, dtype=np.float64)
    return float(np.sum((W - W.mean()) ** 2))
