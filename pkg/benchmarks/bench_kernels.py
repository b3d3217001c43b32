"""Timing comparison of the two dilated-convolution backends.

Run as: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from tailgnn.kernels import fallback

try:
    from tailgnn.kernels import _core
except ImportError:
    _core = None


def _case(rng, batch, length, c_in, c_out, kernel, dilation):
    pad = (kernel - 1) // 2 * dilation
    xpad = np.zeros((batch, length + 2 * pad, c_in))
    xpad[:, pad:pad + length, :] = rng.standard_normal((batch, length, c_in))
    w = rng.standard_normal((kernel, c_in, c_out))
    bias = rng.standard_normal(c_out)
    g = rng.standard_normal((batch, length, c_out))
    return np.ascontiguousarray(xpad), w, bias, g


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    shapes = [
        # (batch, length, c_in, c_out, kernel, dilation)
        (1, 200, 16, 16, 3, 1),
        (32, 200, 16, 16, 3, 4),
        (32, 300, 64, 128, 3, 8),
        (8, 1000, 128, 256, 3, 16),
    ]
    backends = [("numpy", fallback)]
    if _core is not None:
        backends.append(("cython", _core))
    else:
        print("compiled extension not built; timing numpy backend only")

    header = f"{'shape':<34} {'pass':<8}" + "".join(
        f"{name:>12}" for name, _ in backends)
    print(header)
    print("-" * len(header))
    for shape in shapes:
        xpad, w, bias, g = _case(rng, *shape)
        dilation = shape[-1]
        label = f"B{shape[0]} L{shape[1]} {shape[2]}->{shape[3]} d{dilation}"
        for passname, call in (
            ("forward", lambda m: m.conv1d_forward(xpad, w, bias, dilation)),
            ("backward", lambda m: m.conv1d_backward(xpad, w, g, dilation)),
        ):
            times = [_time(lambda m=mod: call(m), repeats=5)
                     for _, mod in backends]
            row = f"{label:<34} {passname:<8}" + "".join(
                f"{t * 1e3:>10.2f}ms" for t in times)
            if len(times) == 2:
                row += f"   ({times[0] / times[1]:.1f}x)"
            print(row)

    if _core is not None:
        # agreement check alongside the timings
        out_a = fallback.conv1d_forward(xpad, w, bias, dilation)
        out_b = _core.conv1d_forward(xpad, w, bias, dilation)
        print(f"\nmax forward discrepancy: {np.abs(out_a - out_b).max():.2e}")


if __name__ == "__main__":
    main()
