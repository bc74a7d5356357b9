"""Load-balancing rules (BCF, RLB, JLW) and the per-AP max-rate scheduler.

Every random choice goes through :func:`pick_uniform`, which maps one uniform
variate to a member of a tie set. The compiled kernel uses the same mapping,
so the reference path and the kernel break ties identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

VARIANTS = ("bcf", "rlb", "jlw")


def pick_uniform(k: int, u: float) -> int:
    """Index in ``range(k)`` chosen by ``u`` in [0, 1)."""
    j = int(u * k)
    return j if j < k else k - 1


def _argext(values, u: float, largest: bool) -> int:
    v = np.asarray(values)
    target = v.max() if largest else v.min()
    ties = np.flatnonzero(v == target)
    return int(ties[pick_uniform(len(ties), u)])


def route_bcf(draws: Sequence[int], rng: np.random.Generator) -> int:
    """AP with the best channel draw for this flow; ties uniform."""
    return _argext(draws, rng.random(), largest=True)


def route_rlb(M: int, rng: np.random.Generator) -> int:
    return pick_uniform(M, rng.random())


def route_jlw(workloads: Sequence[int], rng: np.random.Generator, n_flows: int = 1) -> int:
    """AP with the least pre-arrival workload; the whole batch goes there.

    ``n_flows`` does not change the answer: concentrating the batch on one
    minimizer is optimal for the linear routing cost.
    """
    return _argext(workloads, rng.random(), largest=False)


def route_bcf_batch(draws: np.ndarray, tie_u: np.ndarray) -> np.ndarray:
    """Vectorized BCF over ``n`` flows: ``draws`` is (n, M), ``tie_u`` is (n,)."""
    draws = np.asarray(draws)
    is_max = draws == draws.max(axis=1, keepdims=True)
    k = is_max.sum(axis=1)
    pick = np.minimum((tie_u * k).astype(np.int64), k - 1)
    # position of the pick-th True in each row
    rank = np.cumsum(is_max, axis=1) - 1
    return np.argmax(is_max & (rank == pick[:, None]), axis=1)


class LoadBalancer:
    """Routing rule plus its dedicated tie-break stream."""

    def __init__(self, variant: str, tie_rng: np.random.Generator):
        if variant not in VARIANTS:
            raise ValueError(f"unknown policy {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.tie_rng = tie_rng

    def __repr__(self):
        return f"LoadBalancer({self.variant!r})"

    def assign(self, n_flows: int, workloads: Sequence[int], bcf_draws=None) -> list[int]:
        """Destination AP for each of ``n_flows`` flows arriving in one slot."""
        if n_flows == 0:
            return []
        M = len(workloads)
        if self.variant == "jlw":
            return [route_jlw(workloads, self.tie_rng, n_flows)] * n_flows
        if self.variant == "rlb":
            return [route_rlb(M, self.tie_rng) for _ in range(n_flows)]
        if bcf_draws is None or len(bcf_draws) != n_flows:
            raise ValueError("bcf needs one per-AP rate vector per arriving flow")
        return [route_bcf(d, self.tie_rng) for d in bcf_draws]


@dataclass(frozen=True)
class SchedulerDecision:
    served: int | None
    rate: int
    delivered: int


def schedule_max_rate(residuals: Sequence[int], rates: Sequence[int], u: float) -> SchedulerDecision:
    """Serve one flow with the highest drawn rate, ties broken by ``u``.

    When every draw is 0 a flow is still selected but nothing is delivered.
    """
    if len(residuals) == 0:
        return SchedulerDecision(None, 0, 0)
    j = _argext(rates, u, largest=True)
    rate = int(rates[j])
    return SchedulerDecision(j, rate, min(rate, int(residuals[j])))
