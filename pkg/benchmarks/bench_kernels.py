"""Time the compiled convolution kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--dtype float32|float64]

Both backends are imported directly, so the result does not depend on
HINAS_PURE_PYTHON. Outputs are checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from hinas.autodiff import _pykernels as py

try:
    from hinas.autodiff import _ckernels as cy
except ImportError:
    cy = None

# (label, batch, channels, size, kernel, dilation) drawn from the desk search shapes
SHAPES = [
    ("3x3 conv, 8ch 32px", 8, 8, 32, 3, 1),
    ("5x5 dil-2, 16ch 32px", 8, 16, 32, 5, 2),
    ("3x3 conv, 32ch 64px", 4, 32, 64, 3, 1),
]


def cases(rng, dtype):
    for label, n, c, size, k, dil in SHAPES:
        pad = dil * (k - 1) // 2
        x = rng.standard_normal((n, c, size, size)).astype(dtype)
        w = rng.standard_normal((c, 1, k, k)).astype(dtype)
        g = rng.standard_normal((n, c, size, size)).astype(dtype)
        cols = py.im2col(x, k, dil, pad, size, size)
        yield label, {
            "im2col": lambda m: m.im2col(x, k, dil, pad, size, size),
            "col2im": lambda m: m.col2im(cols, c, size, size, k, dil, pad, size, size),
            "depthwise_forward": lambda m: m.depthwise_forward(x, w, dil, pad, size, size),
            "depthwise_backward": lambda m: m.depthwise_backward(x, w, g, dil, pad),
        }


def same(a, b, dtype):
    tol = 1e-4 if dtype == np.float32 else 1e-10
    if isinstance(a, tuple):
        return all(same(p, q, dtype) for p, q in zip(a, b))
    return np.allclose(a, b, rtol=tol, atol=tol)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    dtype = np.dtype(args.dtype).type
    rng = np.random.default_rng(0)
    print(f"{'shape':<24}{'kernel':<20}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for label, kernels in cases(rng, dtype):
        for name, call in kernels.items():
            if not same(call(py), call(cy), dtype):
                raise SystemExit(f"{name} disagrees between backends on {label}")
            t_py = min(timeit.repeat(lambda: call(py), number=1, repeat=args.repeat)) * 1e3
            t_cy = min(timeit.repeat(lambda: call(cy), number=1, repeat=args.repeat)) * 1e3
            print(f"{label:<24}{name:<20}{t_py:>10.2f}{t_cy:>11.2f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
