"""Ablation harness: trains variants under shared seeds and compares their scores."""

from __future__ import annotations

import logging
import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .evaluation import ALL, ProtocolConfig, ScoreTable, aggregate, evaluate, score_sequence, to_csv, to_text
from .motion import MotionModel, make_rng
from .net import NetConfig, Network
from .trainer import DESK_BACKBONE_ITERATIONS, Sources, TrainConfig, pretrain_features, train, with_backbone

log = logging.getLogger(__name__)

SEEN_CLASS_THRESHOLD = 25


@dataclass(frozen=True)
class Variant:
    name: str
    net: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def configs(self, net_cfg: NetConfig, train_cfg: TrainConfig) -> tuple[NetConfig, TrainConfig]:
        return replace(net_cfg, **self.net), replace(train_cfg, **self.train)


FULL = Variant("full")
TABLE1_VARIANTS = (
    FULL,
    Variant("l2_loss", train={"loss": "l2"}),
    Variant("uniform_crops", train={"augmentation": "uniform"}),
    Variant("images_only", train={"source_mix": "images_only"}),
    Variant("videos_only", train={"source_mix": "videos_only"}),
)
SINGLE_INPUT = Variant("single_input", net={"single_input": True})
VARIANTS = {v.name: v for v in TABLE1_VARIANTS + (SINGLE_INPUT,)}


@dataclass(frozen=True)
class AblationSpec:
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    protocol: ProtocolConfig = ProtocolConfig()
    repetitions: int = 3
    seed: int = 0
    # still-image pretraining of a shared conv backbone per repetition; 0 keeps random frozen filters
    backbone_iterations: int = DESK_BACKBONE_ITERATIONS


@dataclass
class VariantResult:
    name: str
    repetition: int
    table: ScoreTable | None = None
    records: list = field(default_factory=list)
    seconds: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.table is not None


def _seeded(spec: AblationSpec, rep: int) -> tuple[NetConfig, TrainConfig]:
    s = spec.seed + rep
    return replace(spec.net, seed=s), replace(spec.train, seed=s, log_every=0)


def make_backbone(spec: AblationSpec, sources: Sources, rep: int) -> Network | None:
    if spec.backbone_iterations <= 0:
        return None
    net_cfg, train_cfg = _seeded(spec, rep)
    return pretrain_features(net_cfg, sources, replace(train_cfg, iterations=spec.backbone_iterations))


def train_variant(variant: Variant, sources: Sources, spec: AblationSpec, rep: int,
                  backbone: Network | None = None, motion: MotionModel | None = None) -> Network:
    net_cfg, train_cfg = variant.configs(*_seeded(spec, rep))
    net = with_backbone(net_cfg, backbone) if backbone is not None else Network(net_cfg)
    train(train_cfg, sources, net, motion=motion)
    return net


def run_variant(variant: Variant, sources: Sources, test: Sequence, spec: AblationSpec, rep: int,
                backbone: Network | None = None, motion: MotionModel | None = None) -> VariantResult:
    """Train and evaluate one variant; errors mark the row failed instead of raising."""
    res = VariantResult(variant.name, rep)
    t0 = time.perf_counter()
    try:
        net = train_variant(variant, sources, spec, rep, backbone, motion)
        res.table, res.records = evaluate(net, test, spec.protocol, variant.name)
    except Exception as exc:  # noqa: BLE001 - one broken variant must not kill the suite
        res.error = f"{type(exc).__name__}: {exc}"
        log.error("variant %s (repetition %d) failed: %s", variant.name, rep, res.error)
    res.seconds = time.perf_counter() - t0
    return res


def run_ablation_suite(variants: Sequence[Variant], sources: Sources, test: Sequence, spec: AblationSpec,
                       motion: MotionModel | None = None,
                       progress: Callable[[VariantResult], None] | None = None) -> list[VariantResult]:
    """Every variant for every repetition; repetition ``r`` shares seed ``spec.seed + r`` across variants."""
    out = []
    for rep in range(spec.repetitions):
        backbone = make_backbone(spec, sources, rep)
        for v in variants:
            res = run_variant(v, sources, test, spec, rep, backbone, motion)
            out.append(res)
            if progress is not None:
                progress(res)
    return out


def subset_videos(videos: Sequence, fraction: float, seed: int = 0) -> list:
    """Nested subsets: a seeded permutation truncated to ``ceil(fraction * n)``."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    order = make_rng(seed, 77).permutation(len(videos))
    n = max(1, math.ceil(fraction * len(videos)))
    return [videos[i] for i in sorted(order[:n])]


def training_size_sweep(videos: Sequence, images: Sequence, test: Sequence, spec: AblationSpec,
                        fractions: Sequence[float] = (0.25, 0.5, 1.0), variant: Variant = FULL,
                        motion: MotionModel | None = None,
                        progress: Callable[[VariantResult], None] | None = None) -> list[VariantResult]:
    out = []
    for rep in range(spec.repetitions):
        backbone = make_backbone(spec, Sources(list(videos), list(images)), rep)
        for f in fractions:
            sources = Sources(subset_videos(videos, f, spec.seed), list(images))
            res = run_variant(replace(variant, name=f"{variant.name}@{f:g}"), sources, test, spec, rep, backbone,
                              motion)
            out.append(res)
            if progress is not None:
                progress(res)
    return out


def median_rows(results: Sequence[VariantResult], attr: str = ALL) -> list[dict]:
    """Table-1 style rows: per variant, the median over successful repetitions."""
    names = list(dict.fromkeys(r.name for r in results))
    rows = []
    for name in names:
        ok = [r for r in results if r.name == name and r.ok and attr in r.table.accuracy]
        row = {"variant": name, "runs": len(ok), "failed_runs": sum(1 for r in results if r.name == name and not r.ok)}
        if ok:
            row["overall_error"] = statistics.median(r.table.overall_error(attr) for r in ok)
            row["accuracy_error"] = statistics.median(r.table.accuracy_error(attr) for r in ok)
            row["robustness_error"] = statistics.median(r.table.robustness_error(attr) for r in ok)
            row["failures"] = statistics.median(r.table.failures[attr] for r in ok)
        else:
            row.update(overall_error=float("nan"), accuracy_error=float("nan"), robustness_error=float("nan"),
                       failures=float("nan"))
        rows.append(row)
    return rows


ABLATION_COLUMNS = ("variant", "overall_error", "accuracy_error", "robustness_error", "failures", "runs",
                    "failed_runs")


def median_error(results: Sequence[VariantResult], name: str, attr: str = ALL) -> float:
    for row in median_rows([r for r in results if r.name == name], attr):
        return row["overall_error"]
    raise KeyError(name)


def is_non_increasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values[:-1], values[1:]))


def attribute_rows(results: Sequence[VariantResult], attributes: Sequence[str]) -> list[dict]:
    """Per-attribute median overall error per variant (single- vs two-input comparison format)."""
    rows = []
    for name in dict.fromkeys(r.name for r in results):
        row = {"variant": name}
        for a in attributes:
            row[a] = median_rows([r for r in results if r.name == name], a)[0]["overall_error"]
        rows.append(row)
    return rows


def class_split(train_videos: Sequence, test: Sequence, threshold: int = SEEN_CLASS_THRESHOLD):
    """``(seen, unseen)`` test sequences by how many training videos share their class label."""
    counts = Counter(v.class_label for v in train_videos if v.class_label)
    seen = [s for s in test if s.class_label and counts[s.class_label] >= threshold]
    unseen = [s for s in test if s not in seen]
    return seen, unseen


def seen_unseen_rows(result: VariantResult, train_videos: Sequence, test: Sequence, spec: AblationSpec,
                     threshold: int = SEEN_CLASS_THRESHOLD) -> list[dict]:
    """Re-score an evaluated variant separately on seen-class and unseen-class test sequences."""
    if not result.ok:
        return []
    seen, unseen = class_split(train_videos, test, threshold)
    by_id = {r.sequence_id: r for r in result.records}
    rows = []
    for label, group in (("seen", seen), ("unseen", unseen)):
        scores = [score_sequence(by_id[s.seq_id], spec.protocol) for s in group if s.seq_id in by_id]
        if not scores:
            continue
        t = aggregate(f"{result.name}:{label}", scores, spec.protocol.sensitivity)
        rows.append({"variant": t.tracker_id, "sequences": len(scores), "overall_error": t.overall_error(),
                     "accuracy_error": t.accuracy_error(), "robustness_error": t.robustness_error(),
                     "failures": t.failures[ALL]})
    return rows


def report(results: Sequence[VariantResult], fmt: str = "text") -> str:
    rows = median_rows(results)
    return to_csv(rows, ABLATION_COLUMNS) if fmt == "csv" else to_text(rows, ABLATION_COLUMNS)


def finite(values) -> bool:
    return bool(np.all(np.isfinite(values)))
