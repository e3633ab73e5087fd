"""Time the compiled kernels against their plain-numpy sources.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each compiled kernel keeps the original function as ``.py_func``; both are
timed on the same inputs after one warm-up call.  With MIXREG_NUMBA=0 the
two columns time the same code.
"""

import argparse
import time

import numpy as np

from gmmixreg import _kernels
from gmmixreg._accel import backend
from gmmixreg.core import EstimatorSpec, EstimatorKind, FitConfig, initial_params
from gmmixreg.psi import PsiKernel, scale_constant_a
from gmmixreg.scatter import subset_size
from gmmixreg.simulation import ScenarioSpec, generate


def best_of(fn, repeat):
    fn()  # warm-up / compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    data, _ = generate(ScenarioSpec(1, "I", 400, seed=3), 0)
    X, y = data.design, data.response
    spec = EstimatorSpec(EstimatorKind.GM_MALLOWS, PsiKernel.huber())
    init = initial_params(data, 2, np.random.default_rng(7), 1e-4)
    a = scale_constant_a(spec.kernel, data.n, data.p)
    lev = np.ones(data.n)
    hist = np.zeros((1001, 8))

    def em(k):
        return lambda: k(X, y, lev, 1, 0, 1.345, a, init.coefficients, init.scales, init.mixing,
                         1e-6, 1000, 1e-4, 1e-8 * data.n, hist)

    def estep(k):
        return lambda: k(X, y, init.coefficients, init.scales, init.mixing)

    rng = np.random.default_rng(0)
    Xm = rng.standard_normal((400, 3))
    starts = np.array([rng.permutation(400)[:28] for _ in range(500)], dtype=np.int64)
    h = subset_size(400, 3)

    def mcd(k):
        return lambda: k(Xm, starts, h, 2)

    return [("em_run (n=400)", _kernels.em_run, em),
            ("e_step (n=400, g=2)", _kernels.e_step, estep),
            ("mcd_starts (500 x n=400, p=3)", _kernels.mcd_starts, mcd)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"backend: {backend()}")
    print(f"{'kernel':32s} {'numpy [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, kernel, make in cases():
        t_py = best_of(make(kernel.py_func), args.repeat)
        t_jit = best_of(make(kernel), args.repeat)
        print(f"{name:32s} {1e3 * t_py:12.2f} {1e3 * t_jit:14.2f} {t_py / t_jit:8.1f}x")


if __name__ == "__main__":
    main()
