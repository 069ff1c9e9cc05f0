"""Laplace motion-smoothness model.

Relative motion between consecutive boxes is parameterised as

    cx' = cx + w * dx        w' = w * gw
    cy' = cy + h * dy        h' = h * gh

with ``dx, dy ~ Laplace(0, b_x)`` and ``gw, gh ~ Laplace(1, b_s)``. Sampling
for augmentation rejects whole draws that stretch the box too far or push
the induced search window off the target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoundingBox, axis_containment, make_search_region

DEFAULT_B_TRANSLATION = 1.0 / 5.0
DEFAULT_B_SCALE = 1.0 / 15.0
REJECTION_BUDGET = 1000


class MotionBudgetError(RuntimeError):
    """No admissible pseudo-motion found within the rejection budget."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``stream`` derived from a root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class LaplaceDist:
    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"Laplace scale must be positive, got {self.scale}")

    def pdf(self, x):
        return np.exp(-np.abs(np.asarray(x, dtype=np.float64) - self.loc) / self.scale) / (2.0 * self.scale)

    def cdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.loc) / self.scale
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0)))

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        d = u - 0.5
        return self.loc - self.scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))


def _open_uniform(rng: np.random.Generator, size=None):
    u = rng.random(size)
    # inverse CDF needs u in (0, 1); rng.random() can return exactly 0
    if size is None:
        while u == 0.0:
            u = rng.random()
        return u
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.random(int(zero.sum()))
    return u


def laplace_sample(d: LaplaceDist, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) from ``d``: ``loc - b*sign(u-1/2)*ln(1-2|u-1/2|)``."""
    u = _open_uniform(rng, size)
    out = d.ppf(u)
    return float(out) if size is None else out


@dataclass(frozen=True)
class MotionModel:
    dx: LaplaceDist = field(default_factory=lambda: LaplaceDist(0.0, DEFAULT_B_TRANSLATION))
    dy: LaplaceDist = field(default_factory=lambda: LaplaceDist(0.0, DEFAULT_B_TRANSLATION))
    gw: LaplaceDist = field(default_factory=lambda: LaplaceDist(1.0, DEFAULT_B_SCALE))
    gh: LaplaceDist = field(default_factory=lambda: LaplaceDist(1.0, DEFAULT_B_SCALE))
    scale_min: float = 0.6
    scale_max: float = 1.4
    containment: float = 0.5
    context: float = 2.0
    max_attempts: int = REJECTION_BUDGET
    # "laplace" (motion smoothness) or "uniform" (classification-style crops)
    mode: str = "laplace"

    def __post_init__(self):
        if not self.scale_min < 1.0 < self.scale_max:
            raise ValueError(f"scale interval ({self.scale_min}, {self.scale_max}) must contain 1")
        if not 0.0 < self.containment <= 1.0:
            raise ValueError(f"containment fraction must be in (0, 1], got {self.containment}")
        if self.mode not in ("laplace", "uniform"):
            raise ValueError(f"unknown motion mode {self.mode!r}")
        if self.context <= 0 or self.max_attempts < 1:
            raise ValueError("context must be positive and max_attempts >= 1")

    @classmethod
    def from_scales(cls, b_translation: float, b_scale: float, **kw) -> "MotionModel":
        return cls(
            dx=LaplaceDist(0.0, b_translation),
            dy=LaplaceDist(0.0, b_translation),
            gw=LaplaceDist(1.0, b_scale),
            gh=LaplaceDist(1.0, b_scale),
            **kw,
        )

    def uniform(self) -> "MotionModel":
        return replace(self, mode="uniform")

    @property
    def uniform_shift_range(self) -> float:
        # largest |dx| for which some admissible scale keeps the containment constraint
        return self.context * self.scale_max / 2.0 + 0.5 - self.containment


@dataclass(frozen=True)
class MotionDraw:
    dx: float
    dy: float
    gw: float
    gh: float

    def apply(self, box: BoundingBox) -> BoundingBox:
        w, h = box.width, box.height
        return BoundingBox.from_center(box.cx + w * self.dx, box.cy + h * self.dy, w * self.gw, h * self.gh)


def _raw_draw(m: MotionModel, rng: np.random.Generator) -> MotionDraw:
    if m.mode == "uniform":
        r = m.uniform_shift_range
        dx, dy = rng.uniform(-r, r, 2)
        gw, gh = rng.uniform(m.scale_min, m.scale_max, 2)
        return MotionDraw(float(dx), float(dy), float(gw), float(gh))
    return MotionDraw(
        laplace_sample(m.dx, rng),
        laplace_sample(m.dy, rng),
        laplace_sample(m.gw, rng),
        laplace_sample(m.gh, rng),
    )


def draw_motion(box: BoundingBox, m: MotionModel, rng: np.random.Generator) -> MotionDraw:
    """Rejection-sample an admissible relative motion for ``box``."""
    violations = {"scale": 0, "containment": 0}
    for _ in range(m.max_attempts):
        d = _raw_draw(m, rng)
        if not (m.scale_min < d.gw < m.scale_max and m.scale_min < d.gh < m.scale_max):
            violations["scale"] += 1
            continue
        moved = d.apply(box)
        window = make_search_region(moved, m.context).as_box()
        fx, fy = axis_containment(box, window)
        if fx < m.containment or fy < m.containment:
            violations["containment"] += 1
            continue
        return d
    worst = max(violations, key=violations.get)
    raise MotionBudgetError(
        f"no admissible motion in {m.max_attempts} attempts; most frequent violation: {worst} "
        f"(scale in ({m.scale_min}, {m.scale_max}): {violations['scale']}, "
        f"containment >= {m.containment}: {violations['containment']})"
    )


def sample_pseudo_motion(box: BoundingBox, m: MotionModel, rng: np.random.Generator) -> BoundingBox:
    return draw_motion(box, m, rng).apply(box)


@dataclass(frozen=True)
class LaplaceFit:
    loc: float
    scale: float
    count: int
    degenerate: bool = False

    def dist(self) -> LaplaceDist:
        return LaplaceDist(self.loc, self.scale)


def fit_laplace(samples: Sequence[float]) -> LaplaceFit:
    """Maximum-likelihood Laplace fit: median and mean absolute deviation from it.

    Identical samples give ``scale == 0`` with ``degenerate=True`` (and a warning).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError(f"need at least 2 samples to fit, got {x.size}")
    loc = float(np.median(x))
    scale = float(np.mean(np.abs(x - loc)))
    degenerate = scale == 0.0
    if degenerate:
        warnings.warn("all samples identical; Laplace scale is 0", RuntimeWarning, stacklevel=2)
    return LaplaceFit(loc, scale, int(x.size), degenerate)


@dataclass
class MotionStats:
    dx: list = field(default_factory=list)
    dy: list = field(default_factory=list)
    gw: list = field(default_factory=list)
    gh: list = field(default_factory=list)
    skipped: int = 0

    def __len__(self):
        return len(self.dx)


def motion_between(prev: BoundingBox, curr: BoundingBox) -> MotionDraw:
    return MotionDraw(
        (curr.cx - prev.cx) / prev.width,
        (curr.cy - prev.cy) / prev.height,
        curr.width / prev.width,
        curr.height / prev.height,
    )


def extract_motion_stats(sequences: Iterable) -> MotionStats:
    """Relative motion samples over consecutive annotated frames of each sequence.

    Sequences expose ``annotations`` whose ``box`` may be ``None`` for a
    degenerate label; pairs touching such a label are skipped and counted.
    """
    stats = MotionStats()
    for seq in sequences:
        anns = list(seq.annotations)
        if len(anns) < 2:
            raise ValueError(f"sequence {getattr(seq, 'seq_id', '?')} has fewer than 2 annotations")
        for a, b in zip(anns[:-1], anns[1:]):
            if a.box is None or b.box is None:
                stats.skipped += 1
                continue
            d = motion_between(a.box, b.box)
            stats.dx.append(d.dx)
            stats.dy.append(d.dy)
            stats.gw.append(d.gw)
            stats.gh.append(d.gh)
    return stats


_KEYS = ("dx", "dy", "gw", "gh")


def fit_motion_stats(stats: MotionStats) -> dict[str, LaplaceFit]:
    if len(stats) < 2:
        raise ValueError(f"need at least 2 motion samples, got {len(stats)}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {k: fit_laplace(getattr(stats, k)) for k in _KEYS}


def write_motion_file(path, fits: dict[str, LaplaceFit]) -> None:
    lines = ["# Laplace motion model: location (mu_*) and scale (b_*) per variable"]
    for k in _KEYS:
        f = fits[k]
        lines.append(f"mu_{k}={f.loc!r}")
        lines.append(f"b_{k}={f.scale!r}")
        lines.append(f"n_{k}={f.count}")
        if f.degenerate:
            lines.append(f"degenerate_{k}=1")
    Path(path).write_text("\n".join(lines) + "\n")


def read_motion_file(path) -> dict[str, LaplaceFit]:
    from .config import parse_kv

    kv = parse_kv(Path(path).read_text(), source=str(path))
    fits = {}
    for k in _KEYS:
        try:
            fits[k] = LaplaceFit(
                float(kv[f"mu_{k}"]),
                float(kv[f"b_{k}"]),
                int(kv.get(f"n_{k}", 0)),
                kv.get(f"degenerate_{k}", "0") == "1",
            )
        except KeyError as exc:
            raise ValueError(f"{path}: missing key {exc.args[0]}") from None
    return fits


def model_from_fits(fits: dict[str, LaplaceFit], **kw) -> MotionModel:
    """MotionModel from fitted parameters. Zero scales are floored at a tiny value."""
    tiny = 1e-12

    def dist(f):
        return LaplaceDist(f.loc, max(f.scale, tiny))

    return MotionModel(dx=dist(fits["dx"]), dy=dist(fits["dy"]), gw=dist(fits["gw"]), gh=dist(fits["gh"]), **kw)


def laplace_abs_median(scale: float) -> float:
    """Median of ``|X - loc|`` for ``X ~ Laplace(loc, scale)``."""
    return scale * math.log(2.0)
