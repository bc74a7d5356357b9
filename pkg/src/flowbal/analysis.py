"""Closed-form predictions and the single-server lower-bound queue.

These are the comparison targets for simulated runs. All functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from flowbal.model import ConfigError


def capacity_threshold(M: int) -> int:
    """Largest supportable traffic intensity: one slot of workload per AP per slot."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    return M


def _check_pair(p1: float, p2: float) -> None:
    if not (0.0 <= p2 <= 1.0 and 0.0 <= p1 <= 1.0):
        raise ValueError(f"probabilities must lie in [0, 1] (p1={p1}, p2={p2})")
    if p1 < p2:
        raise ValueError(f"expected p1 >= p2, got p1={p1} < p2={p2}")


def bcf_join_prob(p1: float, p2: float) -> float:
    """Probability an arriving flow joins the better ON-OFF AP under BCF."""
    _check_pair(p1, p2)
    return (1.0 + p1 - p2) / 2.0


def bcf_throughput_loss(p1: float, p2: float) -> float:
    """Fraction of the capacity region BCF cannot support with two ON-OFF APs."""
    _check_pair(p1, p2)
    d = p1 - p2
    return d / (1.0 + d)


def bcf_supported_region(p1: float, p2: float) -> float:
    """Largest traffic intensity BCF keeps stable with two ON-OFF APs."""
    _check_pair(p1, p2)
    return 2.0 / (1.0 + p1 - p2)


def _check_w_beta(w: float, beta: float) -> None:
    if beta < 2 or not (1 < w <= beta):
        raise ValueError(f"need beta >= 2 and 1 < w <= beta (w={w}, beta={beta})")


def flow_size_variance(w: float, beta: float) -> float:
    """Variance of a new flow's workload under the two-point size law."""
    _check_w_beta(w, beta)
    return (w - 1.0) * beta - w * (w - 1.0)


def workload_second_moment(w: float, beta: float) -> float:
    # workload is beta w.p. (w-1)/(beta-1), else 1
    q = (w - 1.0) / (beta - 1.0)
    return (1.0 - q) + q * beta * beta


def arrival_workload_variance(lam: float, w: float, beta: float, kind: str = "bernoulli") -> float:
    """Variance of the new workload per slot with Bernoulli(lam) flow arrivals."""
    if kind != "bernoulli":
        raise NotImplementedError("closed form only for Bernoulli arrivals; estimate other laws by simulation")
    _check_w_beta(w, beta)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"Bernoulli rate must lie in [0, 1], got {lam}")
    return lam * workload_second_moment(w, beta) - (lam * w) ** 2


class RlbLimit(NamedTuple):
    total: float
    per_ap: float


def rlb_limit(sigma2: float, M: int) -> RlbLimit:
    """Heavy-traffic constants for random routing as stated by the original analysis.

    ``total = (sigma2 + M(M-1))/2`` and ``per_ap = (sigma2/M + M - 1)/2``. Both
    are limits of the workload scaled by the per-AP distance to capacity,
    ``eps / M``, not by ``eps`` itself; see :func:`rlb_limit_system_eps`.
    """
    if sigma2 < 0 or M < 1:
        raise ValueError("need sigma2 >= 0 and M >= 1")
    return RlbLimit(0.5 * (sigma2 + M * (M - 1)), 0.5 * (sigma2 / M + M - 1))


def rlb_limit_system_eps(sigma2: float, M: int) -> float:
    """Limit of ``eps * E[total workload]`` under random routing.

    Each AP sees load ``1 - eps/M``, so scaling by the system-wide ``eps``
    multiplies :func:`rlb_limit` by ``M``.
    """
    return M * rlb_limit(sigma2, M).total


def jlw_limit(sigma2: float) -> float:
    """Limit of ``eps * E[total workload]`` under least-workload routing (and lower bound for any policy)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    return sigma2 / 2.0


def jlw_limit_sweep(M, beta: float = 20) -> np.ndarray:
    """Least-workload limit when ``w = M``; equals ``(21M - 20 - M**2)/2`` at ``beta = 20``."""
    M = np.asarray(M, dtype=np.float64)
    return ((M - 1.0) * beta - M * (M - 1.0)) / 2.0


def rlb_limit_sweep(M, beta: float = 20) -> np.ndarray:
    """Random-routing constant when ``w = M``; equals ``10M - 10`` at ``beta = 20``."""
    M = np.asarray(M, dtype=np.float64)
    return (M - 1.0) * beta / 2.0


@dataclass(frozen=True)
class HeavyTrafficSpec:
    M: int
    w: float
    beta: float
    eps: float

    def __post_init__(self):
        if not 0 < self.eps < self.M:
            raise ConfigError(f"eps must lie in (0, M={self.M}), got {self.eps}")
        _check_w_beta(self.w, self.beta)
        if self.lam > 1.0:
            raise ConfigError(f"Bernoulli arrivals need (M - eps)/w <= 1, got {self.lam}")

    @property
    def lam(self) -> float:
        return (self.M - self.eps) / self.w

    @property
    def rho(self) -> float:
        return self.M - self.eps

    @property
    def sigma2(self) -> float:
        """Limiting arrival-workload variance, taken at the capacity boundary ``lam = M/w``."""
        return arrival_workload_variance(min(self.M / self.w, 1.0), self.w, self.beta)

    def jlw(self) -> float:
        return jlw_limit(self.sigma2)

    def rlb(self) -> float:
        return rlb_limit(self.sigma2, self.M).total


def oracle_step(phi: int, nu_total: int, M: int) -> int:
    """One slot of a single server with service ``M``; never exceeds total workload on a shared arrival path."""
    if phi < 0:
        raise ValueError("queue level must be >= 0")
    return max(phi + nu_total - M, 0)


class OracleQueue:
    def __init__(self, M: int, level: int = 0):
        self.M = M
        self.level = level

    def step(self, nu_total: int) -> int:
        self.level = oracle_step(self.level, nu_total, self.M)
        return self.level

    def run(self, nu_trace) -> np.ndarray:
        """Levels after each slot of ``nu_trace``."""
        out = np.empty(len(nu_trace), dtype=np.int64)
        for i, v in enumerate(nu_trace):
            out[i] = self.step(int(v))
        return out
