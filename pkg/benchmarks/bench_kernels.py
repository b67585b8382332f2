"""Time the compiled and pure-Python kernels on the same branch walks.

    python3 benchmarks/bench_kernels.py --dim 6 --m 3 --depth 40 --repeats 200
"""

import argparse
import time

import numpy as np

from wrflow import _kernel_py
from wrflow.operators import EPS_PSD, SQRT_FLOOR

try:
    from wrflow import _kernel_c
except ImportError:  # extension not built
    _kernel_c = None


def instance(d, m, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    r0 = g @ g.conj().T
    r0 /= np.trace(r0).real
    q, _ = np.linalg.qr(rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    projs = np.stack([q[:, idx] @ q[:, idx].conj().T for idx in np.array_split(np.arange(d), m)])
    x = np.ones(d, dtype=np.complex128) / np.sqrt(d)
    return r0, projs, x


def time_walks(kernel, r0, projs, x, depth, repeats, seed):
    m = projs.shape[0]
    q = np.full(m, 1.0 / m)
    rng = np.random.default_rng(seed)
    uniforms = rng.random((repeats, depth))
    steps = 0
    start = time.perf_counter()
    for u in uniforms:
        # stop_scale 0 keeps every walk at full depth
        steps += kernel.walk_branch(r0, projs, x, kernel.ENERGY, u, q, 0.0, 0.0,
                                    EPS_PSD, SQRT_FLOOR, False)[0]
    elapsed = time.perf_counter() - start
    return elapsed, steps


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=6)
    parser.add_argument("--m", type=int, default=3)
    parser.add_argument("--depth", type=int, default=40)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    r0, projs, x = instance(args.dim, args.m, args.seed)
    backends = [("python", _kernel_py)]
    if _kernel_c is not None:
        backends.append(("compiled", _kernel_c))
    else:
        print("compiled kernel not available; timing the Python kernel only")
    per_step = {}
    for name, kernel in backends:
        elapsed, steps = time_walks(kernel, r0, projs, x, args.depth, args.repeats, args.seed)
        per_step[name] = elapsed / steps
        print(f"{name:9s} {steps:7d} steps  {elapsed:8.3f} s  {1e6 * per_step[name]:8.2f} us/step")
    if len(per_step) == 2:
        print(f"speedup   {per_step['python'] / per_step['compiled']:.1f}x")


if __name__ == "__main__":
    main()
