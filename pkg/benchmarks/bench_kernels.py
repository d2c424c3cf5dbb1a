"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from mfckge import _pykernels, kernels

try:
    from mfckge import _ckernels
except ImportError:
    _ckernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--entities", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=200)
    ap.add_argument("--batch", type=int, default=1024)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    n, d = args.entities, args.dim
    mat = rng.normal(size=(n, d)).astype(np.float32)
    q = rng.normal(size=d)
    ent = rng.normal(size=(n, d))
    rel = rng.normal(size=(50, d))
    pos = np.stack([rng.integers(0, n, args.batch), rng.integers(0, 50, args.batch), rng.integers(0, n, args.batch)], 1)
    neg = pos.copy()
    neg[:, 2] = rng.integers(0, n, args.batch)

    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels is not None else [])
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':<14}{'p':>3}{'backend':>9}{'ms':>10}")
    for p in (1, 2):
        ref = None
        for name, impl in impls:
            t = _best(lambda: kernels.distances(q, mat, p, impl=impl), args.repeat)
            out = kernels.distances(q, mat, p, impl=impl)
            ref = out if ref is None else ref
            assert np.allclose(out, ref, rtol=1e-6, atol=1e-6)
            print(f"{'distances':<14}{p:>3}{name:>9}{1e3 * t:>10.3f}")
        ref = None
        for name, impl in impls:
            ge, gr = np.zeros_like(ent), np.zeros_like(rel)

            def run():
                ge.fill(0.0)
                gr.fill(0.0)
                return kernels.transe_hinge(ent, rel, pos, neg, 2.0, p, ge, gr, impl=impl)
            t = _best(run, args.repeat)
            loss = run()
            ref = (loss, ge.copy()) if ref is None else ref
            assert np.isclose(loss, ref[0], rtol=1e-9) and np.allclose(ge, ref[1], atol=1e-9)
            print(f"{'transe_hinge':<14}{p:>3}{name:>9}{1e3 * t:>10.3f}")


if __name__ == "__main__":
    main()
