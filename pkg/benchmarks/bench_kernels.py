"""Compare the compiled and pure-numpy convolution/pooling kernels.

Runs each kernel on representative digit-sized batches and reports the
median wall time per call for both backends, plus the speedup. The numba
path is warmed up first so JIT compilation is excluded from the timings.

Usage: python3 benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from graphda.kernels import numpy_ops

try:
    from graphda.kernels import numba_ops
except ImportError:
    numba_ops = None


CASES = {
    "conv_forward_small": dict(batch=16, cin=1, hw=28, cout=6, k=5, stride=1),
    "conv_forward_deep": dict(batch=16, cin=6, hw=12, cout=16, k=5, stride=1),
    "conv_forward_strided": dict(batch=32, cin=3, hw=32, cout=8, k=3, stride=2),
}


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_conv(mod, case, rng, repeats):
    x = rng.standard_normal((case["batch"], case["cin"], case["hw"], case["hw"]))
    w = rng.standard_normal((case["cout"], case["cin"], case["k"], case["k"]))
    b = rng.standard_normal(case["cout"])
    fwd = median_time(lambda: mod.conv2d_forward(x, w, b, case["stride"]), repeats)
    dout = np.asarray(mod.conv2d_forward(x, w, b, case["stride"]))
    bwd = median_time(lambda: mod.conv2d_backward(x, w, dout, case["stride"]), repeats)
    return fwd, bwd

def bench_pool(mod, rng, repeats):
    x = rng.standard_normal((32, 16, 24, 24))
    fwd = median_time(lambda: mod.maxpool2d_forward(x, 2), repeats)
    y, argmax = mod.maxpool2d_forward(x, 2)
    dout = np.asarray(y)
    bwd = median_time(lambda: mod.maxpool2d_backward(x, 2, dout, argmax), repeats)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    if numba_ops is not None:
        # trigger compilation outside the timed region
        warm = rng.standard_normal((2, 1, 8, 8))
        wk = rng.standard_normal((2, 1, 3, 3))
        out = numba_ops.conv2d_forward(warm, wk, np.zeros(2), 1)
        numba_ops.conv2d_backward(warm, wk, np.asarray(out), 1)
        y, am = numba_ops.maxpool2d_forward(warm, 2)
        numba_ops.maxpool2d_backward(warm, 2, np.asarray(y), am)

    header = f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))

    def row(name, np_time, nb_time):
        if nb_time is None:
            print(f"{name:<28} {np_time * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>8}")
        else:
            print(f"{name:<28} {np_time * 1e3:>8.2f}ms {nb_time * 1e3:>8.2f}ms "
                  f"{np_time / nb_time:>7.2f}x")

    for name, case in CASES.items():
        np_fwd, np_bwd = bench_conv(numpy_ops, case, rng, args.repeats)
        nb_fwd = nb_bwd = None
        if numba_ops is not None:
            nb_fwd, nb_bwd = bench_conv(numba_ops, case, rng, args.repeats)
        row(name, np_fwd, nb_fwd)
        row(name.replace("forward", "backward"), np_bwd, nb_bwd)

    np_fwd, np_bwd = bench_pool(numpy_ops, rng, args.repeats)
    nb_fwd = nb_bwd = None
    if numba_ops is not None:
        nb_fwd, nb_bwd = bench_pool(numba_ops, rng, args.repeats)
    row("maxpool_forward", np_fwd, nb_fwd)
    row("maxpool_backward", np_bwd, nb_bwd)


if __name__ == "__main__":
    main()
