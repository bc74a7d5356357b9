"""Hot slot loop, compiled with numba when available.

Set ``FLOWBAL_DISABLE_NUMBA=1`` to run the identical loop as plain Python over
numpy arrays. Both paths consume the same pre-drawn random inputs and produce
bit-identical results.

Service at an AP with ``n`` flows does not draw ``n`` channel rates. Rates are
i.i.d. across flows, so the best rate has CDF ``F(c)**n`` and, by
exchangeability, the flow holding it is uniform over the ``n`` flows. One
uniform picks the rate by inverting ``F**n`` in log space, another picks the
flow. This is the same joint law as per-flow draws at O(1) cost per AP.
"""
from __future__ import annotations

import math
import os

import numpy as np

DISABLE_ENV = "FLOWBAL_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes")

POLICY_CODES = {"bcf": 0, "rlb": 1, "jlw": 2}

# float accumulator slots
(F_SUM_W, F_SUM_WPERP, F_SUM_UNUSED, F_SUM_FLOWS, F_SUM_W_ALL, F_DELAY_SUM, F_SUM_W2,
 F_SUM_PHI) = range(8)
N_FSUM = 8
# integer accumulator slots
(I_POST, I_ALL, I_DEPART, I_DEPART_MEASURED, I_ARRIVALS, I_ORACLE_VIOL,
 I_IDENTITY_VIOL, I_DELAYS_WRITTEN, I_GUARD, I_ARRIVALS_POST) = range(10)
N_ISUM = 10


def _best_rate_index(logcdf_row, n, u):
    """Index of the best of ``n`` i.i.d. rate draws, from one uniform ``u`` in [0, 1)."""
    lv = math.log(1.0 - u) / n
    r = 0
    last = logcdf_row.shape[0] - 1
    while r < last and lv > logcdf_row[r]:
        r += 1
    return r


if USE_NUMBA:
    best_rate_index = numba.njit(cache=True)(_best_rate_index)
else:
    best_rate_index = _best_rate_index


def _slot_loop(t0, n_slots, policy, M, c_max, rates, cdf, logcdf,
               n_arr, sizes, tie_u, bcf_u, chan_u, pick_u,
               resid, arrived, count, W, phi,
               warmup, horizon, batch_len, trend_bins, guard, debug,
               fsum, isum, batch_sum, trend_sum, delays, routed):
    K1 = rates.shape[0]
    p = 0
    for i in range(n_slots):
        t = t0 + i
        total = 0
        for m in range(M):
            total += W[m]
        post = t >= warmup

        # statistics at the pre-arrival boundary W[t]
        isum[I_ALL] += 1
        fsum[F_SUM_W_ALL] += total
        trend_sum[t * trend_bins // horizon] += total
        if post:
            isum[I_POST] += 1
            fsum[F_SUM_W] += total
            fsum[F_SUM_W2] += float(total) * total
            batch_sum[(t - warmup) // batch_len] += total
            mean = total / M
            wp = 0.0
            for m in range(M):
                dlt = W[m] - mean
                wp += dlt * dlt
            fsum[F_SUM_WPERP] += wp
            fsum[F_SUM_PHI] += phi[0]

        # routing on pre-arrival workloads
        a = n_arr[i]
        nu_sum = 0
        if a > 0:
            jlw_ap = -1
            if policy == 2:
                wmin = W[0]
                for m in range(1, M):
                    if W[m] < wmin:
                        wmin = W[m]
                k = 0
                for m in range(M):
                    if W[m] == wmin:
                        k += 1
                pick = int(tie_u[p] * k)
                if pick >= k:
                    pick = k - 1
                for m in range(M):
                    if W[m] == wmin:
                        if pick == 0:
                            jlw_ap = m
                            break
                        pick -= 1
            for j in range(a):
                f = p + j
                if policy == 2:
                    ap = jlw_ap
                elif policy == 1:
                    ap = int(tie_u[f] * M)
                    if ap >= M:
                        ap = M - 1
                else:
                    best = -1
                    k = 0
                    for m in range(M):
                        u = bcf_u[f * M + m]
                        r = 0
                        while r < K1 - 1 and u >= cdf[m, r]:
                            r += 1
                        if r > best:
                            best = r
                            k = 1
                        elif r == best:
                            k += 1
                    pick = int(tie_u[f] * k)
                    if pick >= k:
                        pick = k - 1
                    ap = -1
                    for m in range(M):
                        u = bcf_u[f * M + m]
                        r = 0
                        while r < K1 - 1 and u >= cdf[m, r]:
                            r += 1
                        if r == best:
                            if pick == 0:
                                ap = m
                                break
                            pick -= 1
                size = sizes[f]
                v = (size + c_max - 1) // c_max
                c = count[ap]
                resid[ap, c] = size
                arrived[ap, c] = t
                count[ap] = c + 1
                W[ap] += v
                nu_sum += v
                routed[ap] += 1
            p += a
            isum[I_ARRIVALS] += a
            if post:
                isum[I_ARRIVALS_POST] += a

        nflows = 0
        for m in range(M):
            nflows += count[m]

        # service
        mu_sum = 0
        for m in range(M):
            n = count[m]
            if n == 0:
                continue
            r = best_rate_index(logcdf[m], n, chan_u[i, m])
            rate = rates[r]
            j = int(pick_u[i, m] * n)
            if j >= n:
                j = n - 1
            res = resid[m, j]
            d = rate if rate < res else res
            before = (res + c_max - 1) // c_max
            res -= d
            after = (res + c_max - 1) // c_max
            mu = before - after
            W[m] -= mu
            mu_sum += mu
            if debug:
                if mu < 0 or mu > 1 or (r == K1 - 1 and mu != 1):
                    isum[I_IDENTITY_VIOL] += 1
            if res == 0:
                delay = t - arrived[m, j] + 1
                isum[I_DEPART] += 1
                if arrived[m, j] >= warmup:
                    isum[I_DEPART_MEASURED] += 1
                    fsum[F_DELAY_SUM] += delay
                    q = isum[I_DELAYS_WRITTEN]
                    if q < delays.shape[0]:
                        delays[q] = delay
                        isum[I_DELAYS_WRITTEN] = q + 1
                last = n - 1
                resid[m, j] = resid[m, last]
                arrived[m, j] = arrived[m, last]
                count[m] = last
            else:
                resid[m, j] = res

        if debug:
            for m in range(M):
                s = 0
                for j in range(count[m]):
                    s += (resid[m, j] + c_max - 1) // c_max
                if s != W[m]:
                    isum[I_IDENTITY_VIOL] += 1

        if post:
            fsum[F_SUM_UNUSED] += M - mu_sum
            fsum[F_SUM_FLOWS] += nflows

        # hypothetical single-server queue with service M per slot
        ph = phi[0] + nu_sum - M
        if ph < 0:
            ph = 0
        phi[0] = ph
        new_total = 0
        for m in range(M):
            new_total += W[m]
        if ph > new_total:
            isum[I_ORACLE_VIOL] += 1
        if new_total > guard:
            isum[I_GUARD] = 1
            return i + 1
    return n_slots


slot_loop_py = _slot_loop
if USE_NUMBA:
    slot_loop = numba.njit(cache=True, nogil=True)(_slot_loop)
else:
    slot_loop = _slot_loop


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
