"""Accuracy/robustness scoring with failure and reinitialization.

A frame whose prediction overlaps the ground truth by at most the failure
threshold is a failure. The next ``reinit_delay - 1`` frames are skipped and
the tracker restarts from ground truth ``reinit_delay`` frames after the
failure. Accuracy is the mean IoU over the remaining annotated frames;
robustness maps the failure rate into [0, 1] as ``exp(-S * failures / frames)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .datasets import ATTRIBUTES, NO_ATTRIBUTE
from .geometry import BoundingBox, DegenerateBoxError, iou_arrays
from .motion import make_rng
from .tracker import Timing, Tracker, TrackerConfig, TrackRecord

ALL = "all"
RANK_ATTRIBUTES = ATTRIBUTES + (NO_ATTRIBUTE,)
ROBUSTNESS_SENSITIVITY = 30.0


def robustness_score(failures: int, evaluated_frames: int, sensitivity: float = ROBUSTNESS_SENSITIVITY) -> float:
    if evaluated_frames < 1:
        raise ValueError("evaluated_frames must be >= 1")
    return math.exp(-sensitivity * failures / evaluated_frames)


def overall_error(accuracy: float, robustness: float) -> float:
    return 1.0 - (accuracy + robustness) / 2.0


@dataclass(frozen=True)
class ProtocolConfig:
    failure_threshold: float = 0.0
    reinit_delay: int = 5
    sensitivity: float = ROBUSTNESS_SENSITIVITY

    def __post_init__(self):
        if self.reinit_delay < 1:
            raise ValueError("reinit_delay must be >= 1")


@dataclass
class SequenceScore:
    sequence_id: str
    # per attribute (plus "all"): IoU values of evaluated frames and failure count
    overlaps: dict[str, list[float]] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    failure_frames: list[int] = field(default_factory=list)

    def accuracy(self, attr: str = ALL) -> float:
        v = self.overlaps.get(attr, [])
        return _mean(v) if v else float("nan")

    def n_frames(self, attr: str = ALL) -> int:
        # failure frames count as evaluated frames for robustness
        return len(self.overlaps.get(attr, [])) + self.failures.get(attr, 0)


def score_sequence(record: TrackRecord, cfg: ProtocolConfig = ProtocolConfig()) -> SequenceScore:
    """Score a record under the failure/reinitialization rule.

    Frames are scanned in order. A failure at frame ``f`` excludes frames
    ``f .. f + delay - 1``; scanning resumes at ``f + delay``.
    """
    gt = np.asarray(record.ground_truth, dtype=np.float64)
    pred = np.asarray(record.predictions, dtype=np.float64)
    labeled = np.all(np.isfinite(gt), axis=1)
    if not labeled.any():
        raise ValueError(f"record {record.sequence_id} has no ground truth")
    ious = np.zeros(len(gt))
    valid = labeled & np.all(np.isfinite(pred), axis=1)
    if valid.any():
        ious[valid] = iou_arrays(pred[valid], gt[valid])
    flags = record.flags or [frozenset([NO_ATTRIBUTE])] * len(gt)
    score = SequenceScore(record.sequence_id)
    first = int(np.argmax(labeled))
    # frames the live protocol re-initialized from ground truth
    inits = set(record.reinits)
    i = first
    while i < len(gt):
        if not labeled[i]:
            i += 1
            continue
        attrs = (ALL,) + tuple(flags[i])
        if i not in inits and ious[i] <= cfg.failure_threshold:
            score.failure_frames.append(i)
            for a in attrs:
                score.failures[a] = score.failures.get(a, 0) + 1
            i += cfg.reinit_delay
            continue
        for a in attrs:
            score.overlaps.setdefault(a, []).append(float(ious[i]))
        i += 1
    return score


def _jitter_box(box: BoundingBox, rng, center: float, scale: float, width: float, height: float) -> BoundingBox:
    """Perturbed copy of ``box``; degenerate or off-image draws are resampled."""
    if center == 0 and scale == 0:
        return box
    for _ in range(1000):
        cx = box.cx + rng.normal(0.0, center) * box.width
        cy = box.cy + rng.normal(0.0, center) * box.height
        w = box.width * (1.0 + rng.normal(0.0, scale))
        h = box.height * (1.0 + rng.normal(0.0, scale))
        try:
            out = BoundingBox.from_center(cx, cy, w, h)
        except DegenerateBoxError:
            continue
        if out.x2 > 0 and out.y2 > 0 and out.x1 < width and out.y1 < height:
            return out
    raise RuntimeError("could not draw a valid jittered initialization")


def run_protocol(net, sequence, cfg: ProtocolConfig = ProtocolConfig(), tracker_id: str = "tracker",
                 init_rng=None, center_jitter: float = 0.0, scale_jitter: float = 0.0,
                 tracker_cfg: TrackerConfig = TrackerConfig()) -> TrackRecord:
    """Track ``sequence`` live, reinitializing from ground truth after each failure.

    With an ``init_rng`` every (re)initialization is jittered by the given
    relative center and scale standard deviations.
    """
    gt = sequence.dense_boxes()
    n = len(gt)
    labeled = np.all(np.isfinite(gt), axis=1)
    if n == 0 or not labeled.any():
        raise ValueError(f"sequence {sequence.seq_id} has no ground truth")
    preds = np.full((n, 4), np.nan)
    rec = TrackRecord(sequence.seq_id, tracker_id, preds, gt, sequence.dense_flags())
    tracker = Tracker(net, tracker_cfg)
    timing = Timing()
    i = int(np.argmax(labeled))
    state = None
    first = True
    while i < n:
        if state is None:
            if not labeled[i]:
                i += 1
                continue
            frame = sequence.frame(i)
            box = BoundingBox(*gt[i])
            if init_rng is not None:
                box = _jitter_box(box, init_rng, center_jitter, scale_jitter, frame.shape[1], frame.shape[0])
            state = tracker.init(frame, box, i)
            state.timing = timing
            preds[i] = state.box.as_array()
            if not first:
                rec.reinits.append(i)
            first = False
            i += 1
            continue
        box, fell_back = tracker.step(state, sequence.frame(i))
        if fell_back:
            rec.fallbacks.append(i)
        preds[i] = box.as_array()
        if labeled[i] and iou_arrays(preds[i : i + 1], gt[i : i + 1])[0] <= cfg.failure_threshold:
            rec.failures.append(i)
            state = None
            i += cfg.reinit_delay
            continue
        i += 1
    rec.timing = timing.summary()
    return rec


@dataclass
class ScoreTable:
    """Per-attribute accuracy and robustness for one tracker over a set of sequences."""

    tracker_id: str
    accuracy: dict[str, float] = field(default_factory=dict)
    robustness: dict[str, float] = field(default_factory=dict)
    failures: dict[str, float] = field(default_factory=dict)
    frames: dict[str, int] = field(default_factory=dict)
    fps: float = float("nan")

    def accuracy_error(self, attr: str = ALL) -> float:
        return 1.0 - self.accuracy[attr]

    def robustness_error(self, attr: str = ALL) -> float:
        return 1.0 - self.robustness[attr]

    def overall_error(self, attr: str = ALL) -> float:
        return overall_error(self.accuracy[attr], self.robustness[attr])

    def attributes(self) -> list[str]:
        return [a for a in self.accuracy if a != ALL]


def _mean(values) -> float:
    # shifted mean: exact when all values are equal
    x = np.asarray(values, dtype=np.float64)
    return float(x[0] + np.mean(x - x[0]))


def aggregate(tracker_id: str, scores: Sequence[SequenceScore], sensitivity: float = ROBUSTNESS_SENSITIVITY,
              runs: int = 1) -> ScoreTable:
    """Combine per-sequence scores.

    Accuracy: per-frame mean within a sequence, then mean over sequences.
    Robustness: failures and frames pooled over sequences. ``runs`` > 1
    reports failures as a mean per run.
    """
    table = ScoreTable(tracker_id)
    attrs = sorted({a for s in scores for a in list(s.overlaps) + list(s.failures)})
    for a in attrs:
        accs = [s.accuracy(a) for s in scores if s.overlaps.get(a)]
        fails = sum(s.failures.get(a, 0) for s in scores)
        frames = sum(s.n_frames(a) for s in scores)
        table.accuracy[a] = _mean(accs) if accs else 0.0
        table.robustness[a] = robustness_score(fails, frames, sensitivity)
        table.failures[a] = fails / runs
        table.frames[a] = frames
    return table


def evaluate(net, sequences, cfg: ProtocolConfig = ProtocolConfig(), tracker_id: str = "tracker",
             tracker_cfg: TrackerConfig = TrackerConfig()) -> tuple[ScoreTable, list[TrackRecord]]:
    records = [run_protocol(net, s, cfg, tracker_id, tracker_cfg=tracker_cfg) for s in sequences]
    table = aggregate(tracker_id, [score_sequence(r, cfg) for r in records], cfg.sensitivity)
    table.fps = _fps(records)
    return table, records


def _fps(records) -> float:
    ms = [r.timing.get("total_mean_ms", 0.0) for r in records if r.timing.get("total_mean_ms")]
    return 1000.0 / float(np.mean(ms)) if ms else float("nan")


@dataclass(frozen=True)
class NoisyInitSpec:
    count: int = 15
    center_jitter: float = 0.1
    scale_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.center_jitter < 0 or self.scale_jitter < 0:
            raise ValueError("jitter magnitudes must be non-negative")


def run_noisy_init_experiment(net, sequences, spec: NoisyInitSpec = NoisyInitSpec(),
                              cfg: ProtocolConfig = ProtocolConfig(), tracker_id: str = "tracker") -> ScoreTable:
    """Mean performance over ``spec.count`` jittered initializations.

    The same seeded jitters are used for every tracker evaluated with one spec.
    """
    scores = []
    for run in range(spec.count):
        for j, seq in enumerate(sequences):
            rng = make_rng(spec.seed, 10_000 * run + j) if (spec.center_jitter or spec.scale_jitter) else None
            rec = run_protocol(net, seq, cfg, tracker_id, rng, spec.center_jitter, spec.scale_jitter)
            scores.append(score_sequence(rec, cfg))
    return aggregate(tracker_id, scores, cfg.sensitivity, runs=spec.count)


# ranking --------------------------------------------------------------------


def average_ranks(values: Sequence[float], higher_is_better: bool = True) -> list[float]:
    """Rank 1 is best; tied values share the mean of their ranks."""
    v = np.asarray(values, dtype=np.float64)
    key = -v if higher_is_better else v
    order = np.argsort(key, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and key[order[j + 1]] == key[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks.tolist()


@dataclass
class RankReport:
    trackers: list[str]
    attributes: list[str]
    accuracy_ranks: dict[str, list[float]]  # attribute -> rank per tracker
    robustness_ranks: dict[str, list[float]]
    accuracy: list[float]  # averaged over attributes
    robustness: list[float]
    overall: list[float]


def rank_trackers(tables: Sequence[ScoreTable], attributes: Iterable[str] | None = None) -> RankReport:
    """Per-attribute ranks on accuracy and robustness, averaged across attributes."""
    if len(tables) < 2:
        raise ValueError("ranking needs at least 2 trackers")
    sets = [frozenset(t.attributes()) for t in tables]
    if attributes is None:
        if any(s != sets[0] for s in sets):
            raise ValueError(f"trackers were scored on different attribute sets: {[sorted(s) for s in sets]}")
        attributes = [a for a in RANK_ATTRIBUTES if a in sets[0]] + sorted(sets[0] - set(RANK_ATTRIBUTES))
    attributes = list(attributes)
    for t in tables:
        missing = [a for a in attributes if a not in t.accuracy]
        if missing:
            raise ValueError(f"tracker {t.tracker_id} has no scores for {missing}")
    acc_r = {a: average_ranks([t.accuracy[a] for t in tables]) for a in attributes}
    rob_r = {a: average_ranks([t.robustness[a] for t in tables]) for a in attributes}
    n = len(tables)
    acc = [float(np.mean([acc_r[a][i] for a in attributes])) for i in range(n)]
    rob = [float(np.mean([rob_r[a][i] for a in attributes])) for i in range(n)]
    overall = [(x + y) / 2.0 for x, y in zip(acc, rob)]
    return RankReport([t.tracker_id for t in tables], attributes, acc_r, rob_r, acc, rob, overall)


# reports ----------------------------------------------------------------------

TABLE1_COLUMNS = ("variant", "overall_error", "accuracy_error", "robustness_error", "failures")


def table1_rows(tables: Sequence[ScoreTable], attr: str = ALL) -> list[dict]:
    return [
        {
            "variant": t.tracker_id,
            "overall_error": t.overall_error(attr),
            "accuracy_error": t.accuracy_error(attr),
            "robustness_error": t.robustness_error(attr),
            "failures": t.failures[attr],
        }
        for t in tables
    ]


def _fmt(v, full: bool = False) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v) if full else f"{v:.4f}"
    return str(v)


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, ""), full=True) for c in columns])
    return buf.getvalue()


def to_text(rows: Sequence[dict], columns: Sequence[str]) -> str:
    cells = [list(columns)] + [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = []
    for k, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


TABLE2_COLUMNS = (
    "method",
    "overall_rank_exact",
    "accuracy_rank_exact",
    "robustness_rank_exact",
    "overall_rank_noisy",
    "accuracy_rank_noisy",
    "robustness_rank_noisy",
    "fps",
)


def table2_rows(exact: RankReport, noisy: RankReport | None = None, fps: Sequence[float] | None = None) -> list[dict]:
    rows = []
    for i, name in enumerate(exact.trackers):
        row = {
            "method": name,
            "overall_rank_exact": exact.overall[i],
            "accuracy_rank_exact": exact.accuracy[i],
            "robustness_rank_exact": exact.robustness[i],
        }
        if noisy is not None:
            j = noisy.trackers.index(name)
            row.update(
                overall_rank_noisy=noisy.overall[j],
                accuracy_rank_noisy=noisy.accuracy[j],
                robustness_rank_noisy=noisy.robustness[j],
            )
        if fps is not None:
            row["fps"] = float(fps[i])
        rows.append(row)
    return rows
