"""Compiled (Cython) vs numpy kernel timings.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse

from regtrack.bench import kernel_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':<18} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for r in kernel_benchmark(args.repeats):
        print(f"{r.kernel:<18} {r.compiled_ms:10.4f} {r.numpy_ms:10.4f} {r.speedup:8.2f}x")


if __name__ == "__main__":
    main()
