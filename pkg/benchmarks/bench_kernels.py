"""Compare the compiled and pure-Python chain kernels.

Times the multiprecision damped iteration, one Newton polish, the
double-precision warm-up and a complete hybrid solve, and checks that the
multiprecision results of the two backends are bit-identical.

Usage:
    python3 benchmarks/bench_kernels.py [--L 25 100 250] [--w 1 4] [--precision 30 64]
"""

from __future__ import annotations

import argparse
import time

import gmpy2

from cwchain.core import ChainModel
from cwchain.kernels import available_backends
from cwchain.precision import clamp_margin, working_precision
from cwchain.solver import Ensemble, SolverConfig, _kernel, solve_grand_canonical
from cwchain._kernel_common import KernelState


def _time(fn, repeat: int):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_case(J: str, L: int, w: int, digits: int, sweeps: int, repeat: int) -> list[dict]:
    model = ChainModel.build(J, L, w, "triangular", precision=digits)
    rows = []
    results = {}
    for backend in ("python", "c"):
        with working_precision(digits):
            k = _kernel(model, Ensemble.GRAND, digits, backend)
            ml, mr = k.boundary(0)
            m0 = [gmpy2.mpfr("0.05")] * model.size
            st = KernelState(m0, gmpy2.mpfr(0), ml, mr)
            target = gmpy2.mpfr("0.05")
            t_pic, pic = _time(lambda: k.picard(st, target, gmpy2.mpfr("0.9"), gmpy2.mpfr(0), sweeps,
                                                clamp_margin(digits)), repeat)
            t_new, new = _time(lambda: k.newton(pic.state, target, gmpy2.mpfr(10) ** (5 - digits), 50), repeat)
            t_dbl, _ = _time(lambda: k.picard_double([0.05] * model.size, 0.0, float(ml), float(mr), 0.05, 0.9,
                                                     1e-9, 10**6), repeat)
            t_sol, _ = _time(lambda: solve_grand_canonical(model, "0.05", SolverConfig(precision=digits),
                                                           backend=backend), 1)
        results[backend] = (pic, new)
        rows.append(dict(backend=backend, L=L, w=w, digits=digits, picard=t_pic / sweeps, newton=t_new,
                         double=t_dbl, solve=t_sol))
    (pp, pn), (cp, cn) = results["python"], results["c"]
    identical = pp.state.m == cp.state.m and pp.state.h == cp.state.h and pn.state.m == cn.state.m
    for r in rows:
        r["identical"] = identical
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--J", default="1.05")
    parser.add_argument("--L", type=int, nargs="+", default=[25, 100, 250])
    parser.add_argument("--w", type=int, nargs="+", default=[1, 4])
    parser.add_argument("--precision", type=int, nargs="+", default=[30, 64])
    parser.add_argument("--sweeps", type=int, default=50, help="damped sweeps timed per case")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if "c" not in available_backends():
        parser.error("compiled kernel not built; run 'pip install -e . --no-build-isolation' first")
    head = f"{'L':>5} {'w':>3} {'digits':>6} {'backend':>7} {'sweep[ms]':>10} {'newton[s]':>10} " \
           f"{'double[s]':>10} {'solve[s]':>9} {'speedup':>8} {'identical':>9}"
    print(head)
    for L in args.L:
        for w in args.w:
            for d in args.precision:
                py, c = bench_case(args.J, L, w, d, args.sweeps, args.repeat)
                for r in (py, c):
                    speed = py["solve"] / r["solve"]
                    print(f"{r['L']:>5} {r['w']:>3} {r['digits']:>6} {r['backend']:>7} {1e3 * r['picard']:>10.3f} "
                          f"{r['newton']:>10.4f} {r['double']:>10.4f} {r['solve']:>9.3f} {speed:>8.1f} "
                          f"{str(r['identical']):>9}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
