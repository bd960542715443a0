"""Compare the compiled and pure-Python kernels on the simulation hot path.

Usage: python benchmarks/bench_kernel.py [--n 20000] [--p 4] [--d 1] [--repeat 3]
"""

import argparse
import time

import numpy as np

from avlm import _kernel_py

try:
    from avlm import _kernel as _compiled
except ImportError:
    _compiled = None


def run(mod, W, y, d, phi, block=256):
    k = W.shape[1]
    st = [np.zeros((k, k)), np.zeros((k, k)), np.zeros(k), np.zeros(k), np.zeros(2)]
    logdet = float(np.linalg.slogdet(phi)[1])
    out = [np.zeros(block, dtype=np.int8), np.zeros((block, d)), np.zeros(block), np.zeros((block, d, d)),
           np.zeros(block), np.zeros(block)]
    for s in range(0, W.shape[0], block):
        Wb, yb = W[s:s + block], y[s:s + block]
        m = Wb.shape[0]
        mod.trace(*st, s, Wb, yb, d, phi, logdet, np.zeros(d), 1e-10, *(o[:m] for o in out))
    return out[5][:m].copy()


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    k = args.p + args.d
    W = np.ascontiguousarray(np.column_stack([np.ones(args.n), rng.normal(size=(args.n, k - 1))]))
    y = np.ascontiguousarray(W @ rng.normal(size=k) + rng.normal(size=args.n))
    phi = np.eye(args.d)

    print(f"rows={args.n} p={args.p} d={args.d}")
    t_py = best_of(lambda: run(_kernel_py, W, y, args.d, phi), args.repeat)
    print(f"python   {t_py:8.3f} s  {args.n / t_py:12.0f} rows/s")
    if _compiled is None:
        print("compiled extension not built")
        return
    t_c = best_of(lambda: run(_compiled, W, y, args.d, phi), args.repeat)
    print(f"compiled {t_c:8.3f} s  {args.n / t_c:12.0f} rows/s")
    print(f"speedup  {t_py / t_c:8.1f}x")
    a, b = run(_kernel_py, W, y, args.d, phi), run(_compiled, W, y, args.d, phi)
    print(f"max |log B| difference on last block: {np.max(np.abs(a - b)):.3g}")


if __name__ == "__main__":
    main()
