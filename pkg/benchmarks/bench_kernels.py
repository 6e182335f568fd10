#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Runs the two hot paths at the shapes the ConvLSTM trainer and the GBDT
grower actually use, prints a table, and cross-checks the outputs.

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from droughtcast._kernels import _numpy_impl

try:
    from droughtcast._kernels import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, *args, repeat=50):
    fn(*args)  # warm-up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(backend, dtype, batch, cin, cout, hw, k=3):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, cin, hw, hw)).astype(dtype)
    w = rng.standard_normal((cout, cin, k, k)).astype(dtype)
    b = rng.standard_normal(cout).astype(dtype)
    gy = rng.standard_normal((batch, cout, hw, hw)).astype(dtype)
    fwd = timeit(backend.conv2d_forward, x, w, b)
    gw = timeit(backend.conv2d_grad_weights, x, gy, k)
    flops = 2 * batch * cout * cin * k * k * hw * hw
    return fwd, gw, flops


def bench_split(backend, n):
    rng = np.random.default_rng(1)
    values = np.sort(np.round(rng.standard_normal(n), 2))
    grads = rng.standard_normal(n)
    hess = np.abs(rng.standard_normal(n)) + 0.1
    return timeit(lambda: backend.split_scan(values, grads, hess, 1.0, 0.0, 1.0), repeat=200)


def main():
    backends = [("numpy", _numpy_impl)]
    if _ckernels is not None:
        backends.append(("compiled", _ckernels))
    else:
        print("compiled extension not built; showing numpy fallback only")

    print(f"{'kernel':<46}{'backend':<10}{'best ms':>10}{'GFLOP/s':>9}")
    conv_cases = [
        ("gates conv 4x(32->64) 16x16 f32", np.float32, 4, 32, 64, 16),
        ("gates conv 8x(32->64) 16x16 f32", np.float32, 8, 32, 64, 16),
        ("gates conv 1x(32->64) 64x64 f32", np.float32, 1, 32, 64, 64),
        ("gates conv 4x(32->64) 16x16 f64 (gradcheck)", np.float64, 4, 32, 64, 16),
    ]
    for label, dtype, batch, cin, cout, hw in conv_cases:
        for name, backend in backends:
            fwd, gw, flops = bench_conv(backend, dtype, batch, cin, cout, hw)
            print(f"{label + ' fwd':<46}{name:<10}{fwd * 1e3:>10.3f}{flops / fwd / 1e9:>9.1f}")
            print(f"{label + ' gradw':<46}{name:<10}{gw * 1e3:>10.3f}{flops / gw / 1e9:>9.1f}")

    for n in (1_000, 100_000):
        for name, backend in backends:
            best = bench_split(backend, n)
            print(f"{f'split_scan n={n}':<46}{name:<10}{best * 1e3:>10.3f}{'':>9}")

    if _ckernels is not None:
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 32, 16, 16)).astype(np.float32)
        w = rng.standard_normal((64, 32, 3, 3)).astype(np.float32)
        b = rng.standard_normal(64).astype(np.float32)
        delta = np.abs(
            _ckernels.conv2d_forward(x, w, b) - _numpy_impl.conv2d_forward(x, w, b)
        ).max()
        values = np.sort(np.round(rng.standard_normal(5000), 2))
        grads = rng.standard_normal(5000)
        hess = np.abs(rng.standard_normal(5000)) + 0.1
        same = _ckernels.split_scan(values, grads, hess, 1.0, 0.0, 1.0) == _numpy_impl.split_scan(
            values, grads, hess, 1.0, 0.0, 1.0
        )
        print(f"\ncross-check: conv max |diff| = {delta:.2e}; split_scan identical = {same}")


if __name__ == "__main__":
    main()
