"""Wall-clock comparison of the numba kernels against the numpy fallbacks.

Usage: python benchmarks/bench_backends.py [--repeat 3] [--pbs-us 100]

Each case is warmed up once per backend (JIT compilation and cache loading
are excluded) and the best of ``--repeat`` timings is reported.
"""

import argparse
import time
import warnings

from synapse_ssd import core, oracle, pbs, ssd


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--pbs-us", type=float, default=100.0, help="PBS horizon in us")
    args = parser.parse_args(argv)
    warnings.simplefilter("ignore")

    cfg = core.validate(core.table1_config(t_end=3000.0))
    cfg_pbs = core.validate(core.table1_config(t_end=args.pbs_us))
    grid = oracle.FdGrid(M=256, dt_fd=0.0375)
    cases = {
        "ssd (Q=100, 10^4 steps)": lambda b: ssd.run(cfg, backend=b),
        "oracle (M=256, dt=0.0375)": lambda b: oracle.solve(cfg, grid, backend=b),
        f"pbs (1 run, {args.pbs_us:g} us)": lambda b: pbs.simulate_run(cfg_pbs, seed=1, backend=b),
    }
    print(f"{'case':<30} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}")
    for name, fn in cases.items():
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<30} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}")


if __name__ == "__main__":
    main()
