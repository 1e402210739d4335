"""Compare the compiled trial engine against the pure-Python fallback.

Runs the same trials on both backends, checks they agree bit-for-bit, and
reports per-trial wall time and the speedup.  Usage:

    python benchmarks/benchmark_backends.py [--ticks N] [--trials K]
"""

import argparse
import time

from repeaterchain.engine import available_backends, run_trial_raw

CASES = [
    ("synthetic stressed, sequential",
     dict(lengths=(10.0,) * 4, tc_ext=2500e-6, protocol="sequential",
          mode="synthetic")),
    ("synthetic stressed, simultaneous",
     dict(lengths=(10.0,) * 4, tc_ext=2500e-6, protocol="simultaneous",
          mode="synthetic")),
    ("synthetic relaxed, sequential",
     dict(lengths=(10.0,) * 4, tc_ext=2.0, protocol="sequential",
          mode="synthetic")),
    ("scripted relaxed, sequential",
     dict(lengths=(10.0,) * 4, tc_ext=0.5, protocol="sequential",
          mode="scripted", tc_int=2500e-6, f_gen=0.9575)),
]


def time_backend(backend, case, T_sim, trials):
    t0 = time.perf_counter()
    results = []
    for k in range(trials):
        results.append(run_trial_raw(T_sim=T_sim, seed=k, backend=backend, **case))
    return (time.perf_counter() - t0) / trials, results


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ticks", type=int, default=20000, help="ticks per trial")
    ap.add_argument("--trials", type=int, default=3)
    args = ap.parse_args()

    if "compiled" not in available_backends():
        raise SystemExit("compiled backend not built; run pip install -e .")

    T_sim = args.ticks * 50e-6
    print(f"{args.trials} trials x {args.ticks} ticks per case\n")
    print(f"{'case':40s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}  agree")
    for name, case in CASES:
        t_py, r_py = time_backend("python", case, T_sim, args.trials)
        t_c, r_c = time_backend("compiled", case, T_sim, args.trials)
        agree = all(
            a[:4] == b[:4] for a, b in zip(r_py, r_c)
        )
        print(f"{name:40s} {t_py*1e3:9.1f}ms {t_c*1e3:9.1f}ms "
              f"{t_py/t_c:7.1f}x  {agree}")
    print("\n'agree' = bit-identical aggregates between backends")


if __name__ == "__main__":
    main()

