"""Box algebra, context-padded search regions and the corner-code encoding.

Coordinates are continuous pixels: pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)``.
A *corner code* is the 4-vector ``(x1, y1, x2, y2)`` expressed as a fraction
of the search region's extent, multiplied by the output scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_CONTEXT = 2.0
DEFAULT_OUTPUT_SCALE = 10.0


class DegenerateBoxError(ValueError):
    """A box (or decoded prediction) has non-positive width or height."""


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        # store plain floats so repr() round-trips through text files
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateBoxError(f"non-finite box coordinates {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise DegenerateBoxError(
                f"box ({self.x1}, {self.y1})-({self.x2}, {self.y2}) has non-positive extent"
            )

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def cx(self) -> float:
        return (self.x1 + self.x2) / 2.0

    @property
    def cy(self) -> float:
        return (self.y1 + self.y2) / 2.0

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def center_size(self) -> tuple[float, float, float, float]:
        return self.cx, self.cy, self.width, self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)

    def clamped(self, width: float, height: float, min_size: float = 0.0) -> "BoundingBox":
        """Clip to ``[0, width] x [0, height]`` keeping at least ``min_size`` per side.

        The result always overlaps the image, even when the input lies wholly
        outside it.
        """
        mx = min(max(min_size, 1e-6), width)
        my = min(max(min_size, 1e-6), height)
        x1 = min(max(self.x1, 0.0), width - mx)
        y1 = min(max(self.y1, 0.0), height - my)
        x2 = max(min(self.x2, width), x1 + mx)
        y2 = max(min(self.y2, height), y1 + my)
        return BoundingBox(x1, y1, x2, y2)

    def inside(self, width: float, height: float) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class SearchRegion:
    """Crop window of ``k*w x k*h`` pixels centred on a box.

    ``clipped`` is set when the window was truncated at the image border.
    """

    cx: float
    cy: float
    width: float
    height: float
    k: float = DEFAULT_CONTEXT
    clipped: bool = False

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"search region must have positive extent, got {self.width}x{self.height}")

    @property
    def x1(self) -> float:
        return self.cx - self.width / 2.0

    @property
    def y1(self) -> float:
        return self.cy - self.height / 2.0

    @property
    def x2(self) -> float:
        return self.cx + self.width / 2.0

    @property
    def y2(self) -> float:
        return self.cy + self.height / 2.0

    def as_box(self) -> BoundingBox:
        return BoundingBox(self.x1, self.y1, self.x2, self.y2)

    def exceeds(self, image_width: float, image_height: float) -> bool:
        return self.x1 < 0 or self.y1 < 0 or self.x2 > image_width or self.y2 > image_height


def make_search_region(
    prev_box: BoundingBox,
    k: float = DEFAULT_CONTEXT,
    image_size: tuple[int, int] | None = None,
    clip: bool = False,
) -> SearchRegion:
    """Search window centred on ``prev_box`` with ``k`` times its width and height.

    With ``clip=True`` and an ``image_size`` of ``(width, height)``, the window is
    intersected with the image and ``clipped`` records whether that changed it.
    """
    if not k > 0:
        raise ValueError(f"context factor must be positive, got {k}")
    region = SearchRegion(prev_box.cx, prev_box.cy, k * prev_box.width, k * prev_box.height, k)
    if not clip or image_size is None or not region.exceeds(*image_size):
        return region
    img_w, img_h = image_size
    x1, y1 = max(region.x1, 0.0), max(region.y1, 0.0)
    x2, y2 = min(region.x2, float(img_w)), min(region.y2, float(img_h))
    if x2 <= x1 or y2 <= y1:
        raise ValueError("search region does not intersect the image")
    return SearchRegion((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1, k, clipped=True)


def image_mean(image: np.ndarray) -> np.ndarray:
    return kernels.channel_mean(image)


def crop_and_resize(
    image: np.ndarray,
    region: SearchRegion,
    out_size: int,
    pad_value=None,
) -> np.ndarray:
    """Resample ``region`` of an ``(H, W, 3)`` image to ``out_size x out_size``.

    Bilinear interpolation; output pixels that fall outside the image take
    ``pad_value`` (default: the per-channel mean of ``image``). Returns float32
    in the image's intensity units.
    """
    if out_size <= 0:
        raise ValueError(f"out_size must be positive, got {out_size}")
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError(f"expected a non-empty (H, W, C) image, got shape {image.shape}")
    if not (region.width > 0 and region.height > 0) or not math.isfinite(region.cx + region.cy):
        raise ValueError("empty or non-finite crop region")
    if pad_value is None:
        pad_value = image_mean(image)
    return kernels.crop_resize(
        image, region.x1, region.y1, region.x2, region.y2, out_size, out_size, pad_value
    )


def encode_target(gt_box: BoundingBox, region: SearchRegion, scale: float = DEFAULT_OUTPUT_SCALE) -> np.ndarray:
    """Map ``gt_box`` into the region's frame as a scaled corner code."""
    if not (region.width > 0 and region.height > 0):
        raise ValueError("zero-extent search region")
    x0, y0 = region.x1, region.y1
    return np.array(
        [
            (gt_box.x1 - x0) / region.width * scale,
            (gt_box.y1 - y0) / region.height * scale,
            (gt_box.x2 - x0) / region.width * scale,
            (gt_box.y2 - y0) / region.height * scale,
        ],
        dtype=np.float64,
    )


def decode_output(code, region: SearchRegion, scale: float = DEFAULT_OUTPUT_SCALE) -> BoundingBox:
    """Inverse of :func:`encode_target`. Not clamped to any image.

    Raises:
        DegenerateBoxError: if the decoded box has non-positive width or height.
    """
    if not scale > 0:
        raise ValueError(f"output scale must be positive, got {scale}")
    c = np.asarray(code, dtype=np.float64)
    x0, y0 = region.x1, region.y1
    return BoundingBox(
        float(c[0] / scale * region.width + x0),
        float(c[1] / scale * region.height + y0),
        float(c[2] / scale * region.width + x0),
        float(c[3] / scale * region.height + y0),
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def iou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two ``(N, 4)`` corner arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1]) + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def axis_containment(target: BoundingBox, window: BoundingBox) -> tuple[float, float]:
    """Fraction of ``target``'s width and height covered by ``window``."""
    ox = max(0.0, min(target.x2, window.x2) - max(target.x1, window.x1))
    oy = max(0.0, min(target.y2, window.y2) - max(target.y1, window.y1))
    return ox / target.width, oy / target.height
