"""Compare the compiled kernels with the pure-numpy fallback.

Part one times each kernel in-process on representative sizes. Part two
solves the same LPAC-OPF in two subprocesses, one per backend, and reports
wall time and objective.

    python3 bench/bench_kernels.py [--repeat 200] [--case case39_epri]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from topocand._kernels import _py

try:
    from topocand._kernels import _ckernels
except ImportError:
    _ckernels = None

SOLVE = """
import json, time
from topocand import _kernels
from topocand.grid import load_case, resolve_case
from topocand.lpac import solve_lpac_opf
g = load_case(resolve_case({case!r}))
t = time.perf_counter()
sol = solve_lpac_opf(g)
print(json.dumps({{"backend": _kernels.BACKEND, "seconds": time.perf_counter() - t, "objective": sol.objective}}))
"""


def kernel_inputs(rng, n=2000, m=400, k=40):
    d = rng.normal(size=n)
    state = rng.integers(0, 4, n).astype(np.int8)
    x = rng.uniform(0, 1, m)
    lo, hi = np.zeros(m), np.ones(m)
    delta = rng.normal(size=m)
    eta_rows = rng.integers(0, m, k).astype(np.int64)
    eta_mat = np.ascontiguousarray(rng.normal(size=(k, m)) * 0.01)
    w = rng.normal(size=m)
    alpha = rng.normal(size=n)
    rows = np.ascontiguousarray(rng.integers(-1, 2, (6, 12)).astype(float))
    rhs = np.ones(6)
    sense = np.full(6, -1, dtype=np.int8)
    return {
        "price": lambda mod: mod.price(d, state, 1e-9, False),
        "primal_ratio": lambda mod: mod.primal_ratio(x, lo, hi, delta, 1e-9, 1e-9, False),
        "dual_ratio": lambda mod: mod.dual_ratio(d, alpha, state, 1, 1e-9, 1e-9),
        "ftran_etas": lambda mod: mod.ftran_etas(w.copy(), eta_rows, eta_mat, k),
        "btran_etas": lambda mod: mod.btran_etas(w.copy(), eta_rows, eta_mat, k),
        "binary_screen": lambda mod: mod.binary_screen(rows, rhs, sense, 12),
    }


def bench_kernels(repeat: int) -> None:
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    calls = kernel_inputs(np.random.default_rng(0))
    print(f"{'kernel':<14} {'python us':>10} {'cython us':>10} {'speedup':>8}")
    for name, fn in calls.items():
        tp = min(timeit.repeat(lambda: fn(_py), number=repeat, repeat=3)) / repeat * 1e6
        tc = min(timeit.repeat(lambda: fn(_ckernels), number=repeat, repeat=3)) / repeat * 1e6
        print(f"{name:<14} {tp:>10.1f} {tc:>10.1f} {tp / tc:>7.1f}x")


def bench_solve(case: str) -> None:
    print(f"\nLPAC-OPF on {case}")
    for pure in ("1", "0"):
        env = dict(os.environ, TOPOCAND_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SOLVE.format(case=case)], env=env, capture_output=True,
                             text=True, check=True)
        r = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"  {r['backend']:<7} {r['seconds']:8.2f} s  objective {r['objective']:.6f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--case", default="case39_epri")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_solve(args.case)


if __name__ == "__main__":
    main()
