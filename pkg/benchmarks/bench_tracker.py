"""Tracker-loop latency (crop + forward + decode, eval mode, one thread).

    python3 benchmarks/bench_tracker.py [--frames N] [--widths 64,128,256,512]

Set REGTRACK_KERNELS=python to time the numpy fallback instead of the compiled core.
"""

import argparse

from regtrack import kernels
from regtrack.bench import fc_width_scaling, tracker_latency


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=300)
    ap.add_argument("--widths", default="64,128,256,512,1024")
    args = ap.parse_args()
    print(f"kernels: {kernels.BACKEND}")
    print("default NetConfig:", tracker_latency(frames=args.frames).line())
    print(f"{'fc width':>8} {'params':>10} {'ms/frame':>10} {'std':>8}")
    for r in fc_width_scaling(tuple(int(w) for w in args.widths.split(",")), frames=args.frames // 2):
        print(f"{r.fc_width:8d} {r.parameters:10d} {r.mean_ms:10.3f} {r.std_ms:8.3f}")


if __name__ == "__main__":
    main()
