"""Latency harnesses: the tracker loop and the compiled vs numpy kernels."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, replace

import numpy as np

from . import _pykernels, kernels
from .net import NetConfig, Network, count_parameters
from .synthetic import SyntheticSceneConfig, generate_synthetic_video
from .tracker import Tracker


@dataclass
class LatencyReport:
    frames: int
    mean_ms: float
    std_ms: float
    crop_ms: float
    forward_ms: float

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms

    def line(self) -> str:
        return (f"{self.fps:8.1f} fps  {self.mean_ms:.3f} +/- {self.std_ms:.3f} ms/frame "
                f"(crop {self.crop_ms:.3f} ms, forward {self.forward_ms:.3f} ms, {self.frames} frames)")


def _single_thread():
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def tracker_latency(net_cfg: NetConfig = NetConfig(), frames: int = 300, warmup: int = 20, seed: int = 0,
                    width: int = 320, height: int = 240) -> LatencyReport:
    """Per-frame crop + forward + decode time of the tracking loop, eval mode, one thread."""
    net = Network(net_cfg)
    net.eval()
    seq = generate_synthetic_video(SyntheticSceneConfig(width=width, height=height, num_frames=60, seed=seed))
    tracker = Tracker(net)
    with _single_thread():
        state = tracker.init(seq.frame(0), seq.annotations[0].box)
        # cycle through the clip; a fresh init on wrap keeps the box on the object
        for i in range(1, frames + warmup + 1):
            j = i % len(seq)
            if j == 0:
                timing = state.timing
                state = tracker.init(seq.frame(0), seq.annotations[0].box)
                state.timing = timing
                continue
            tracker.step(state, seq.frame(j))
    # drop warm-up frames from the statistics
    total = state.timing.total[warmup:]
    crop = state.timing.crop[warmup:]
    fwd = state.timing.forward[warmup:]
    return LatencyReport(len(total), 1e3 * statistics.fmean(total), 1e3 * statistics.pstdev(total),
                         1e3 * statistics.fmean(crop), 1e3 * statistics.fmean(fwd))


@dataclass
class WidthRow:
    fc_width: int
    parameters: int
    mean_ms: float
    std_ms: float


def fc_width_scaling(widths=(64, 128, 256, 512, 1024), frames: int = 150, seed: int = 0) -> list[WidthRow]:
    rows = []
    for w in widths:
        cfg = replace(NetConfig(), fc_width=w)
        r = tracker_latency(cfg, frames=frames, seed=seed)
        rows.append(WidthRow(w, count_parameters(cfg)["total"], r.mean_ms, r.std_ms))
    return rows


def _time(fn, repeats: int) -> float:
    fn()
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    return 1e3 * min(best)


@dataclass
class KernelRow:
    kernel: str
    compiled_ms: float
    numpy_ms: float

    @property
    def speedup(self) -> float:
        return self.numpy_ms / self.compiled_ms


def kernel_benchmark(repeats: int = 20, seed: int = 0) -> list[KernelRow]:
    """Best-of-``repeats`` time of each kernel in both implementations on tracker-sized inputs."""
    ext = kernels._ext
    if ext is None:
        raise RuntimeError("compiled kernels are not available; build the extension first")
    rng = np.random.default_rng(seed)
    frame = rng.integers(0, 256, (240, 320, 3), dtype=np.uint8)
    x = rng.standard_normal((16, 2, 32, 32)).astype(np.float32)
    cols = _pykernels.im2col(x, 3, 3, 1, 1)
    pooled, arg = _pykernels.maxpool2_forward(x)
    pad = np.zeros(3)
    cases = {
        "crop_resize": (lambda: ext.crop_resize(frame, 40.5, 30.25, 150.0, 140.0, 64, 64, pad),
                        lambda: _pykernels.crop_resize(frame, 40.5, 30.25, 150.0, 140.0, 64, 64, pad)),
        "im2col": (lambda: ext.im2col(x, 3, 3, 1, 1), lambda: _pykernels.im2col(x, 3, 3, 1, 1)),
        "col2im": (lambda: ext.col2im(cols, 16, 2, 32, 32, 3, 3, 1, 1),
                   lambda: _pykernels.col2im(cols, 16, 2, 32, 32, 3, 3, 1, 1)),
        "maxpool2_forward": (lambda: ext.maxpool2_forward(x), lambda: _pykernels.maxpool2_forward(x)),
        "maxpool2_backward": (lambda: ext.maxpool2_backward(pooled, arg, 32, 32),
                              lambda: _pykernels.maxpool2_backward(pooled, arg, 32, 32)),
    }
    with _single_thread():
        return [KernelRow(name, _time(c, repeats), _time(p, repeats)) for name, (c, p) in cases.items()]
