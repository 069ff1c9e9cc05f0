"""Labeled videos and still images: parsing, filtering, splitting, manifests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoundingBox, DegenerateBoxError
from .imageio import read_image

log = logging.getLogger(__name__)

ATTRIBUTES = ("occlusion", "illumination_change", "motion_change", "size_change", "camera_motion")
NO_ATTRIBUTE = "none"
ALL_FLAGS = ATTRIBUTES + (NO_ATTRIBUTE,)
FORMATS = ("corner4", "vot8")
FRAME_EXTENSIONS = (".ppm", ".png", ".jpg", ".jpeg")


class AnnotationFormatError(ValueError):
    """Malformed annotation file. ``lines`` lists offending (lineno, text) pairs."""

    def __init__(self, message, lines=()):
        super().__init__(message)
        self.lines = list(lines)


@dataclass(frozen=True)
class Annotation:
    frame: int
    # None marks a degenerate (zero-extent) label that is kept for alignment
    box: BoundingBox | None
    flags: frozenset = frozenset()

    def attribute_set(self) -> frozenset:
        return self.flags if self.flags else frozenset([NO_ATTRIBUTE])


@dataclass
class VideoSequence:
    """A video: frame sources plus sparse (or dense) annotations.

    ``frames`` is either a list of image paths or an array ``(T, H, W, 3)``.
    """

    seq_id: str
    frames: Sequence = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    class_label: str | None = None

    def __post_init__(self):
        idx = [a.frame for a in self.annotations]
        if any(b <= a for a, b in zip(idx[:-1], idx[1:])):
            raise AnnotationFormatError(f"{self.seq_id}: frame indices must be strictly increasing")
        if len(self.frames) and idx and idx[-1] >= len(self.frames):
            raise AnnotationFormatError(
                f"{self.seq_id}: annotation for frame {idx[-1]} but only {len(self.frames)} frames"
            )

    def __len__(self):
        return len(self.frames)

    def frame(self, i: int) -> np.ndarray:
        f = self.frames[i]
        if isinstance(f, (str, Path)):
            return read_image(f)
        return f

    def annotation_for(self, frame: int) -> Annotation | None:
        for a in self.annotations:
            if a.frame == frame:
                return a
        return None

    def annotated_pairs(self) -> list[tuple[Annotation, Annotation]]:
        """Consecutive annotated frames with valid boxes on both ends."""
        anns = self.annotations
        return [(a, b) for a, b in zip(anns[:-1], anns[1:]) if a.box is not None and b.box is not None]

    def dense_boxes(self) -> np.ndarray:
        """``(T, 4)`` ground truth with NaN rows where a frame is unlabeled."""
        n = len(self.frames) or (self.annotations[-1].frame + 1 if self.annotations else 0)
        out = np.full((n, 4), np.nan)
        for a in self.annotations:
            if a.box is not None:
                out[a.frame] = a.box.as_array()
        return out

    def dense_flags(self) -> list[frozenset]:
        n = len(self.frames) or (self.annotations[-1].frame + 1 if self.annotations else 0)
        out = [frozenset([NO_ATTRIBUTE])] * n
        for a in self.annotations:
            out[a.frame] = a.attribute_set()
        return out


@dataclass
class StillImageExample:
    image: object  # path or (H, W, 3) array
    box: BoundingBox
    class_label: str | None = None
    image_size: tuple[int, int] | None = None  # (width, height); read lazily otherwise

    def load(self) -> np.ndarray:
        if isinstance(self.image, (str, Path)):
            return read_image(self.image)
        return self.image

    def size(self) -> tuple[int, int]:
        if self.image_size is not None:
            return self.image_size
        img = self.load()
        return img.shape[1], img.shape[0]


def _box_or_none(x1, y1, x2, y2):
    try:
        return BoundingBox(x1, y1, x2, y2)
    except DegenerateBoxError:
        return None


def _parse_flags(token: str) -> frozenset:
    flags = frozenset(t for t in token.split(",") if t)
    unknown = flags - set(ALL_FLAGS)
    if unknown:
        raise ValueError(f"unknown attribute flag(s) {sorted(unknown)}")
    return flags - {NO_ATTRIBUTE}


def parse_annotation_text(text: str, fmt: str = "corner4", source: str = "<text>", seq_id: str | None = None) -> VideoSequence:
    if fmt not in FORMATS:
        raise AnnotationFormatError(f"unknown annotation format {fmt!r}; expected one of {FORMATS}")
    anns: list[Annotation] = []
    bad: list[tuple[int, str]] = []
    dense_index = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if fmt == "corner4":
                parts = line.split()
                if len(parts) not in (5, 6):
                    raise ValueError("expected 'frame x1 y1 x2 y2 [flags]'")
                frame = int(parts[0])
                x1, y1, x2, y2 = (float(p) for p in parts[1:5])
                flags = _parse_flags(parts[5]) if len(parts) == 6 else frozenset()
                anns.append(Annotation(frame, _box_or_none(x1, y1, x2, y2), flags))
            else:
                vals = [float(v) for v in line.replace(" ", "").split(",") if v != ""]
                if len(vals) != 8:
                    raise ValueError("expected 8 comma-separated polygon coordinates")
                xs, ys = vals[0::2], vals[1::2]
                box = None
                if all(math.isfinite(v) for v in vals):
                    box = _box_or_none(min(xs), min(ys), max(xs), max(ys))
                anns.append(Annotation(dense_index, box))
                dense_index += 1
        except ValueError as exc:
            bad.append((lineno, f"{raw.strip()!r}: {exc}"))
    if bad:
        detail = "; ".join(f"line {n}: {msg}" for n, msg in bad[:10])
        raise AnnotationFormatError(f"{source}: {len(bad)} malformed row(s): {detail}", bad)
    if not anns:
        raise AnnotationFormatError(f"{source}: no annotations found")
    frames = [a.frame for a in anns]
    for i in range(1, len(frames)):
        if frames[i] <= frames[i - 1]:
            raise AnnotationFormatError(
                f"{source}: frame indices not strictly increasing ({frames[i - 1]} then {frames[i]})"
            )
    return VideoSequence(seq_id or Path(source).stem, [], anns)


def parse_annotations(path, fmt: str = "corner4") -> VideoSequence:
    path = Path(path)
    if fmt not in FORMATS:
        raise AnnotationFormatError(f"unknown annotation format {fmt!r}; expected one of {FORMATS}")
    return parse_annotation_text(path.read_text(), fmt, source=str(path), seq_id=path.stem)


def format_corner4(annotations: Iterable[Annotation], header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    for a in annotations:
        if a.box is None:
            continue
        row = f"{a.frame} {a.box.x1!r} {a.box.y1!r} {a.box.x2!r} {a.box.y2!r}"
        if a.flags:
            row += " " + ",".join(sorted(a.flags))
        lines.append(row)
    return "\n".join(lines) + "\n"


def format_vot8(annotations: Sequence[Annotation]) -> str:
    """Dense 8-value polygon rows, one per frame from 0; unlabeled frames become NaN rows."""
    by_frame = {a.frame: a.box for a in annotations}
    n = max(by_frame) + 1 if by_frame else 0
    lines = []
    for i in range(n):
        b = by_frame.get(i)
        if b is None:
            lines.append(",".join(["nan"] * 8))
        else:
            pts = (b.x1, b.y1, b.x2, b.y1, b.x2, b.y2, b.x1, b.y2)
            lines.append(",".join(repr(float(v)) for v in pts))
    return "\n".join(lines) + "\n"


def write_corner4(path, annotations: Iterable[Annotation], header: Sequence[str] = ()) -> None:
    Path(path).write_text(format_corner4(annotations, header))


def filter_still_images(examples: Iterable[StillImageExample], max_fill: float = 0.66) -> list[StillImageExample]:
    """Drop examples whose box spans ``>= max_fill`` of the image in either dimension."""
    if not 0.0 < max_fill <= 1.0:
        raise ValueError(f"max_fill must be in (0, 1], got {max_fill}")
    kept = []
    for ex in examples:
        w, h = ex.size()
        if ex.box.width >= max_fill * w or ex.box.height >= max_fill * h:
            continue
        kept.append(ex)
    return kept


@dataclass
class Split:
    train: list
    validation: list
    missing_exclusions: list[str] = field(default_factory=list)


def split_dataset(videos: Sequence[VideoSequence], exclusion_list: Iterable[str] = (), val_fraction: float = 0.2, seed: int = 0) -> Split:
    """Remove excluded ids, then split the rest by a seeded permutation."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    excluded = set(exclusion_list)
    ids = {v.seq_id for v in videos}
    missing = sorted(excluded - ids)
    for m in missing:
        log.warning("exclusion id %s not present in dataset", m)
    remaining = [v for v in videos if v.seq_id not in excluded]
    order = np.random.default_rng(seed).permutation(len(remaining))
    n_val = int(round(val_fraction * len(remaining)))
    val_idx = set(order[:n_val].tolist())
    train = [v for i, v in enumerate(remaining) if i not in val_idx]
    val = [v for i, v in enumerate(remaining) if i in val_idx]
    return Split(train, val, missing)


def read_id_list(path) -> list[str]:
    out = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def default_exclusions() -> list[str]:
    text = resources.files("regtrack").joinpath("data/alov_test_overlap.txt").read_text()
    return [ln.split("#", 1)[0].strip() for ln in text.splitlines() if ln.split("#", 1)[0].strip()]


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_EXTENSIONS)


# Manifest lines:
#   sequence <id> <frames_dir> <annotation_file> [corner4|vot8] [class=<label>]
#   image <path> <x1> <y1> <x2> <y2> [class=<label>]
# Paths are relative to the manifest's directory.


@dataclass
class Dataset:
    videos: list[VideoSequence] = field(default_factory=list)
    images: list[StillImageExample] = field(default_factory=list)


def _split_class(parts):
    label = None
    rest = []
    for p in parts:
        if p.startswith("class="):
            label = p[len("class="):]
        else:
            rest.append(p)
    return rest, label


def read_manifest(path, load_frames: bool = False) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    ds = Dataset()
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts, label = _split_class(line.split())
        kind = parts[0]
        if kind == "sequence" and len(parts) in (4, 5):
            seq_id, frames_dir, ann_file = parts[1:4]
            fmt = parts[4] if len(parts) == 5 else "corner4"
            seq = parse_annotations(base / ann_file, fmt)
            frames = list_frames(base / frames_dir)
            if load_frames:
                frames = np.stack([read_image(f) for f in frames]) if frames else []
            ds.videos.append(VideoSequence(seq_id, frames, seq.annotations, label))
        elif kind == "image" and len(parts) == 6:
            x1, y1, x2, y2 = (float(v) for v in parts[2:6])
            img_path = base / parts[1]
            ds.images.append(StillImageExample(load_image_if(img_path, load_frames), BoundingBox(x1, y1, x2, y2), label))
        else:
            raise AnnotationFormatError(f"{path}:{lineno}: unrecognised manifest line {raw.strip()!r}")
    return ds


def load_image_if(path, load: bool):
    return read_image(path) if load else path


def write_manifest(path, entries: Iterable[str]) -> None:
    lines = ["# regtrack dataset manifest"] + list(entries)
    Path(path).write_text("\n".join(lines) + "\n")


def manifest_sequence_line(seq_id, frames_dir, ann_file, fmt="corner4", class_label=None) -> str:
    line = f"sequence {seq_id} {frames_dir} {ann_file} {fmt}"
    return line + (f" class={class_label}" if class_label else "")


def manifest_image_line(path, box: BoundingBox, class_label=None) -> str:
    line = f"image {path} {box.x1!r} {box.y1!r} {box.x2!r} {box.y2!r}"
    return line + (f" class={class_label}" if class_label else "")
