"""Throughput of the exact simulator: numba kernel against the numpy lockstep kernel.

    python3 benchmarks/bench_ssa.py [--M 400] [--N 100] [--t-end 5] [--repeat 3]

Both kernels consume the same random streams, so the script also checks that
they produce identical ensembles before timing them.
"""
import argparse
import time

import numpy as np

from pdpnet import _backend
from pdpnet.model import classify, reference_model
from pdpnet.ssa import Simulator, run_ensemble

CASES = [("GENE1", "A", None), ("GENE1F", "C", None), ("BURST1", "D", 0.01)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--M", type=int, default=400)
    ap.add_argument("--N", type=int, default=100)
    ap.add_argument("--t-end", type=float, default=5.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    if not _backend.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"M={args.M} N={args.N} t_end={args.t_end}, best of {args.repeat}")
    print(f"{'model':<8} {'method':<12} {'events':>10} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for name, regime, eps in CASES:
        cl = classify(reference_model(name), regime)
        for method in ("direct", "time_change"):
            sims = {b: Simulator.build(cl, args.N, eps, args.t_end, method, backend=b)
                    for b in ("numba", "numpy")}
            run_ensemble(sims["numba"], 2, [args.t_end], args.seed)  # compile outside the timing
            results = {}
            for b, sim in sims.items():
                results[b] = best_of(lambda: run_ensemble(sim, args.M, [args.t_end], args.seed),
                                     args.repeat)
            (t_nb, a), (t_np, b) = results["numba"], results["numpy"]
            if not np.array_equal(a.samples, b.samples, equal_nan=True):
                raise SystemExit(f"backends disagree on {name}/{method}")
            print(f"{name:<8} {method:<12} {int(a.jump_counts.sum()):>10} {t_nb:>9.3f} "
                  f"{t_np:>9.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
