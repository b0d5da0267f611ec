"""Compare the numba and pure-numpy kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeats 5] [--sizes 10 50 200]

Both implementations are always importable; ``ASRQE_DISABLE_JIT`` only picks
which one the public dispatchers use, so a single process can time both.
Numba compile time is excluded by a warm-up call.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from asrqe import kernels
from asrqe._jit import JIT_ENABLED


def _cases(n: int, rng: np.random.Generator):
    ref = rng.integers(0, 50, n)
    hyp = ref.copy()
    flip = rng.random(n) < 0.2
    hyp[flip] = rng.integers(0, 50, int(flip.sum()))
    x = rng.integers(0, 5, 4 * n).astype(np.float64)
    y = x + rng.normal(0, 1, x.shape)
    return {
        "edit_counts": (kernels.edit_counts_jit, kernels.edit_counts_numpy, (ref, hyp)),
        "kendall_counts": (kernels.kendall_counts_jit, kernels.kendall_counts_numpy, (x, y)),
    }


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 200])
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"dispatcher uses {'numba' if JIT_ENABLED else 'numpy'}")
    print(f"{'kernel':<16}{'n':>6}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for n in args.sizes:
        for name, (jit, npy, inputs) in _cases(n, rng).items():
            assert tuple(jit(*inputs)) == tuple(npy(*inputs))
            number = max(1, 2000 // n)
            t_jit = min(timeit.repeat(lambda: jit(*inputs), number=number, repeat=args.repeats)) / number
            t_npy = min(timeit.repeat(lambda: npy(*inputs), number=number, repeat=args.repeats)) / number
            print(f"{name:<16}{n:>6}{1e6 * t_jit:>12.1f}{1e6 * t_npy:>12.1f}{t_npy / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
