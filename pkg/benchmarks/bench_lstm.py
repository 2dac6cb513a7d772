"""Time the LSTM recurrence kernels of every importable backend.

    python3 benchmarks/bench_lstm.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from taskattn.kernels import available_backends

# (sequence length, input width, hidden width)
SIZES = [(10, 8, 8), (20, 32, 32), (50, 64, 64), (30, 200, 200)]


def bench(impl, T, D, H, repeat):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(T, D))
    W, U, b = rng.normal(size=(4 * H, D)) * 0.1, rng.normal(size=(4 * H, H)) * 0.1, np.zeros(4 * H)
    dH = rng.normal(size=(T, H))
    hs, gates, cs = impl.lstm_forward(X, W, U, b)
    number = max(1, 2000 // (T * max(1, H // 16)))
    fwd = min(timeit.repeat(lambda: impl.lstm_forward(X, W, U, b), number=number,
                            repeat=repeat)) / number
    bwd = min(timeit.repeat(lambda: impl.lstm_backward(dH, X, W, U, hs, gates, cs),
                            number=number, repeat=repeat)) / number
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = available_backends()
    names = sorted(backends)
    header = f"{'T':>4} {'D':>4} {'H':>4}  " + "  ".join(
        f"{n + ' fwd':>12} {n + ' bwd':>12}" for n in names)
    if "cython" in backends:
        header += f"  {'speedup fwd':>11} {'speedup bwd':>11}"
    print(header)
    for T, D, H in SIZES:
        times = {n: bench(backends[n], T, D, H, args.repeat) for n in names}
        row = f"{T:>4} {D:>4} {H:>4}  " + "  ".join(
            f"{times[n][0] * 1e6:>10.1f}us {times[n][1] * 1e6:>10.1f}us" for n in names)
        if "cython" in times:
            row += (f"  {times['python'][0] / times['cython'][0]:>10.1f}x"
                    f" {times['python'][1] / times['cython'][1]:>10.1f}x")
        print(row)


if __name__ == "__main__":
    main()
