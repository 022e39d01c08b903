"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--scale 1.0] [--json out.json]
"""
import argparse
import json

from microtrack import kernels
from microtrack.bench import kernel_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="input size factor")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the raw report here")
    args = ap.parse_args()

    rep = kernel_benchmark(
        seed=args.seed,
        n_lines=max(1, int(2000 * args.scale)),
        n_points=max(1, int(4000 * args.scale)),
        bnb_nodes=max(1, int(20000 * args.scale)),
        repeat=args.repeat,
    )
    if "cython" not in kernels.backends():
        print("compiled kernels unavailable; only the fallback was timed")
    cols = ("evid_sum_s", "nms_suppress_s", "bnb_search_s")
    print(f"inputs: {rep['inputs']}")
    print(f"{'backend':<8}" + "".join(f"{c[:-2]:>16}" for c in cols))
    rows = {r["backend"]: r for r in rep["results"]}
    for name, r in sorted(rows.items()):
        print(f"{name:<8}" + "".join(f"{r[c]:>15.4f}s" for c in cols))
    if {"cython", "python"} <= set(rows):
        print(f"{'speedup':<8}" + "".join(f"{rows['python'][c] / rows['cython'][c]:>15.1f}x" for c in cols))
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rep, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
