"""Compare the compiled reservoir kernels against the pure numpy fallback.

Run:  python benchmarks/bench_kernels.py [--n 100] [--steps 20000]
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from teach._kernels import _pyref

try:
    from teach._kernels import _core
except ImportError:
    _core = None


def make_problem(n: int, density: float, steps: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    w = sp.csr_matrix(np.where(rng.random((n, n)) < density,
                               rng.uniform(-1, 1, (n, n)), 0.0))
    # scale to a contracting spectral radius like a real reservoir
    rho = float(np.max(np.abs(np.linalg.eigvals(w.toarray()))))
    if rho > 0:
        w = (w * (0.9 / rho)).tocsr()
    w_in = np.ascontiguousarray(rng.uniform(-0.5, 0.5, (n, 3)))
    u_seq = np.ascontiguousarray(rng.normal(size=(steps, 2)))
    x0 = np.zeros(n)
    return (w_in, np.ascontiguousarray(w.data),
            np.ascontiguousarray(w.indices, dtype=np.int32),
            np.ascontiguousarray(w.indptr, dtype=np.int32),
            0.2, u_seq, x0)


def bench(label, fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=100, help="reservoir size")
    parser.add_argument("--density", type=float, default=0.1)
    parser.add_argument("--steps", type=int, default=20000)
    args = parser.parse_args()

    w_in, data, indices, indptr, alpha, u_seq, x0 = make_problem(
        args.n, args.density, args.steps)

    print(f"reservoir n={args.n} density={args.density} steps={args.steps}")
    t_pure, out_pure = bench("pure", lambda: _pyref.esn_harvest(
        w_in, data, indices, indptr, alpha, u_seq, x0))
    rate_pure = args.steps / t_pure
    print(f"  pure numpy : {t_pure * 1e3:8.1f} ms  ({rate_pure:,.0f} steps/s)")
    if _core is None:
        print("  compiled   : not built (pip install -e . to build the extension)")
        return
    t_core, out_core = bench("core", lambda: _core.esn_harvest(
        w_in, data, indices, indptr, alpha, u_seq, x0))
    rate_core = args.steps / t_core
    print(f"  compiled   : {t_core * 1e3:8.1f} ms  ({rate_core:,.0f} steps/s)")
    print(f"  speedup    : {t_pure / t_core:6.1f}x")
    diff = float(np.max(np.abs(out_pure - out_core)))
    print(f"  max |diff| : {diff:.3e}")
    # single-step latency (streaming path)
    t_step_pure, _ = bench("sp", lambda: _pyref.esn_step(
        w_in, data, indices, indptr, alpha, x0, u_seq[0]), repeats=2000)
    t_step_core, _ = bench("sc", lambda: _core.esn_step(
        w_in, data, indices, indptr, alpha, x0, u_seq[0]), repeats=2000)
    print(f"  single step: pure {t_step_pure * 1e6:6.1f} us, "
          f"compiled {t_step_core * 1e6:6.1f} us")


if __name__ == "__main__":
    main()
