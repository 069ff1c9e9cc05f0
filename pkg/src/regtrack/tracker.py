"""Frame-to-frame tracking loop."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import BoundingBox, DegenerateBoxError, crop_and_resize, decode_output, image_mean, make_search_region

log = logging.getLogger(__name__)

MIN_BOX_SIZE = 2.0


@dataclass
class Timing:
    crop: list[float] = field(default_factory=list)
    forward: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, float]:
        out = {}
        for name in ("crop", "forward", "total"):
            v = getattr(self, name)
            out[f"{name}_mean_ms"] = 1e3 * statistics.fmean(v) if v else 0.0
            out[f"{name}_std_ms"] = 1e3 * statistics.pstdev(v) if len(v) > 1 else 0.0
        return out


@dataclass
class TrackerState:
    box: BoundingBox
    frame: np.ndarray
    index: int = 0
    timing: Timing = field(default_factory=Timing)
    warnings: list[str] = field(default_factory=list)
    # padding colour of ``frame``, reused when it becomes the target frame
    frame_mean: np.ndarray | None = None


@dataclass(frozen=True)
class TrackerConfig:
    context: float = 2.0
    min_box: float = MIN_BOX_SIZE


class Tracker:
    """Wraps a network with the crop / forward / decode loop.

    The network only needs ``cfg.input_size``, ``cfg.output_scale`` and a
    ``forward(target_crops, search_crops)`` method returning ``(N, 4)``.
    """

    def __init__(self, net, cfg: TrackerConfig = TrackerConfig()):
        self.net = net
        self.cfg = cfg

    def init(self, frame: np.ndarray, box: BoundingBox, index: int = 0) -> TrackerState:
        h, w = frame.shape[:2]
        state = TrackerState(box, frame, index)
        if not box.inside(w, h):
            state.box = box.clamped(w, h, self.cfg.min_box)
            state.warnings.append(f"frame {index}: initial box clamped to the image")
            log.warning(state.warnings[-1])
        return state

    def step(self, state: TrackerState, frame: np.ndarray) -> tuple[BoundingBox, bool]:
        """Advance ``state`` to ``frame``. Returns ``(box, fell_back)``."""
        t0 = time.perf_counter()
        size, k = self.net.cfg.input_size, self.cfg.context
        prev = state.box
        region = make_search_region(prev, k)
        if state.frame_mean is None:
            state.frame_mean = image_mean(state.frame)
        mean = image_mean(frame)
        target = crop_and_resize(state.frame, region, size, state.frame_mean)
        search = crop_and_resize(frame, region, size, mean)
        t1 = time.perf_counter()
        code = self.net.forward(target[None], search[None])[0]
        t2 = time.perf_counter()
        h, w = frame.shape[:2]
        fell_back = False
        try:
            if not np.all(np.isfinite(code)):
                raise DegenerateBoxError("non-finite network output")
            box = decode_output(code, region, self.net.cfg.output_scale).clamped(w, h, self.cfg.min_box)
        except DegenerateBoxError:
            box, fell_back = prev, True
        state.box, state.frame, state.index, state.frame_mean = box, frame, state.index + 1, mean
        t3 = time.perf_counter()
        state.timing.crop.append(t1 - t0)
        state.timing.forward.append(t2 - t1)
        state.timing.total.append(t3 - t0)
        return box, fell_back


@dataclass
class TrackRecord:
    """Per-frame tracker output aligned with the sequence's ground truth."""

    sequence_id: str
    tracker_id: str
    predictions: np.ndarray  # (T, 4), NaN where the frame was not processed
    ground_truth: np.ndarray  # (T, 4), NaN where unlabeled
    flags: list = field(default_factory=list)
    fallbacks: list[int] = field(default_factory=list)
    failures: list[int] = field(default_factory=list)
    reinits: list[int] = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    error: str | None = None

    def __post_init__(self):
        if len(self.predictions) != len(self.ground_truth):
            raise ValueError("predictions and ground truth must be length-aligned")


# called as hook(frame_index, predicted_box) -> replacement box or None
ReinitHook = Callable[[int, BoundingBox], "BoundingBox | None"]


def track_sequence(net, sequence, init_box: BoundingBox | None = None, tracker_id: str = "tracker",
                   hook: ReinitHook | None = None, start: int = 0, cfg: TrackerConfig = TrackerConfig()) -> TrackRecord:
    """Track ``sequence`` from frame ``start``.

    ``hook`` sees every prediction and may return a box to re-initialize
    from at that frame (used by the reinitialization protocol).
    """
    n = len(sequence)
    if n == 0:
        raise ValueError(f"sequence {sequence.seq_id} has no frames")
    gt = sequence.dense_boxes()
    if init_box is None:
        if not np.all(np.isfinite(gt[start])):
            raise ValueError(f"sequence {sequence.seq_id}: no ground truth at frame {start} to initialize from")
        init_box = BoundingBox(*gt[start])
    preds = np.full((n, 4), np.nan)
    rec = TrackRecord(sequence.seq_id, tracker_id, preds, gt, sequence.dense_flags())
    tracker = Tracker(net, cfg)
    timing = Timing()
    try:
        state = tracker.init(sequence.frame(start), init_box, start)
        state.timing = timing
        preds[start] = state.box.as_array()
        for i in range(start + 1, n):
            frame = sequence.frame(i)
            box, fell_back = tracker.step(state, frame)
            if fell_back:
                rec.fallbacks.append(i)
            preds[i] = box.as_array()
            new = hook(i, box) if hook is not None else None
            if new is not None:
                state = tracker.init(frame, new, i)
                state.timing = timing
                preds[i] = state.box.as_array()
    except (OSError, ValueError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.error("sequence %s aborted: %s", sequence.seq_id, rec.error)
    rec.timing = timing.summary()
    return rec


class IdentityNet:
    """Oracle network that always predicts the centred code: boxes never move."""

    def __init__(self, input_size: int = 64, output_scale: float = 10.0, context: float = 2.0):
        from .net import NetConfig

        self.cfg = NetConfig(input_size=input_size, output_scale=output_scale)
        lo = output_scale * (0.5 - 0.5 / context)
        hi = output_scale * (0.5 + 0.5 / context)
        self.code = np.array([lo, lo, hi, hi])

    def forward(self, target, search):
        return np.tile(self.code, (np.asarray(search).shape[0], 1))


def write_predictions(path, record: TrackRecord, header: dict | None = None, timing: bool = False) -> None:
    """corner4 file: one predicted box per processed frame after a '#' header.

    Timing is wall-clock and therefore left out unless ``timing`` is set,
    which keeps the file byte-identical across reruns.
    """
    from .datasets import Annotation, format_corner4

    meta = {"sequence": record.sequence_id, "tracker": record.tracker_id}
    meta.update(header or {})
    if timing:
        meta.update({k: f"{v:.4f}" for k, v in record.timing.items()})
    lines = [f"{k}={v}" for k, v in meta.items()]
    anns = [
        Annotation(i, BoundingBox(*row))
        for i, row in enumerate(record.predictions)
        if np.all(np.isfinite(row))
    ]
    Path(path).write_text(format_corner4(anns, lines))
