"""Compare the numba and pure-numpy slot kernels.

Both backends consume the same pre-drawn random inputs, so their summaries
must agree exactly; the script checks that and reports slots per second.

    python benchmarks/bench_kernels.py --slots 200000 --policies jlw rlb
"""
import argparse
import time

from flowbal import kernels
from flowbal.engine import RunConfig, run
from flowbal.model import default_setup


def time_backend(cfg, backend, repeat):
    best, res = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = run(cfg, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--M", type=int, default=5)
    ap.add_argument("--lam", type=float, default=0.9)
    ap.add_argument("--policies", nargs="+", default=["bcf", "rlb", "jlw"])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if not kernels.USE_NUMBA:
        raise SystemExit(f"numba backend disabled via {kernels.DISABLE_ENV}; unset it to benchmark")
    print(f"{'policy':<6} {'numba s':>9} {'numpy s':>9} {'speedup':>8} {'slots/s (numba)':>16} identical")
    for policy in args.policies:
        cfg = RunConfig(default_setup(M=args.M, lam=args.lam, w=args.M, policy=policy), horizon=args.slots, seed=1)
        run(RunConfig(cfg.system, horizon=1000, seed=0), backend="numba")  # compile / load cache
        t_nb, r_nb = time_backend(cfg, "numba", args.repeat)
        t_np, r_np = time_backend(cfg, "numpy", 1)
        same = r_nb.summary == r_np.summary
        print(f"{policy:<6} {t_nb:9.3f} {t_np:9.3f} {t_np / t_nb:8.1f} {args.slots / t_nb:16.3e} {same}")


if __name__ == "__main__":
    main()
