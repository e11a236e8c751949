"""Box arithmetic, IoU, and the empirical (aspect, scale) shape histogram."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass

import numpy as np

HIST_BINS = 30
MIN_BOX_SIDE = 8.0  # px; clipped candidates thinner than this are rejected
EDGE_PAD = 1e-6


def iround(x: float) -> int:
    """Round half-up to the nearest integer (no banker's rounding)."""
    return int(math.floor(x + 0.5))


def per_image_rng(seed: int, image_id: str) -> np.random.Generator:
    """Independent RNG stream for one image, stable across process runs.

    Seeding from (seed, crc32(image_id)) keeps streams identical regardless
    of how many images are processed or in what order.
    """
    return np.random.default_rng([seed, zlib.crc32(image_id.encode("utf-8"))])


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box over half-open pixel extents [x0,x1) x [y0,y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(
                f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def round(self) -> tuple[int, int, int, int]:
        return (iround(self.x0), iround(self.y0), iround(self.x1), iround(self.y1))

    def contains(self, other: "BoundingBox", tol: float = 0.0) -> bool:
        return (
            self.x0 - tol <= other.x0
            and self.y0 - tol <= other.y0
            and self.x1 + tol >= other.x1
            and self.y1 + tol >= other.y1
        )

    def within_image(self, width: float, height: float, tol: float = 0.0) -> bool:
        return (
            self.x0 >= -tol
            and self.y0 >= -tol
            and self.x1 <= width + tol
            and self.y1 <= height + tol
        )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, using continuous areas."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def shape_of(box: BoundingBox, image_w: float, image_h: float) -> tuple[float, float]:
    """Shape parameters of a box: aspect ratio and relative scale.

    The aspect ratio is width/height; the relative scale is the square root
    of the box-to-image area ratio, i.e. a linear size fraction.
    """
    a = box.width / box.height
    s = math.sqrt(box.area / (image_w * image_h))
    return (a, s)


@dataclass(frozen=True)
class ShapeHistogram:
    """Normalized 2-D histogram over (aspect, scale) pairs.

    ``bins`` holds HIST_BINS x HIST_BINS weights summing to 1, with aspect
    along axis 0 and scale along axis 1; the edge arrays have one more entry
    than bins per axis and are strictly increasing.
    """

    a_edges: np.ndarray
    s_edges: np.ndarray
    bins: np.ndarray

    def __post_init__(self):
        a_edges = np.asarray(self.a_edges, dtype=np.float64)
        s_edges = np.asarray(self.s_edges, dtype=np.float64)
        bins = np.asarray(self.bins, dtype=np.float64)
        object.__setattr__(self, "a_edges", a_edges)
        object.__setattr__(self, "s_edges", s_edges)
        object.__setattr__(self, "bins", bins)
        if bins.shape != (a_edges.size - 1, s_edges.size - 1):
            raise ValueError(f"bin grid {bins.shape} does not match edges")
        if np.any(np.diff(a_edges) <= 0) or np.any(np.diff(s_edges) <= 0):
            raise ValueError("histogram edges must be strictly increasing")
        if np.any(bins < 0):
            raise ValueError("negative histogram weight")
        total = bins.sum()
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"histogram weights sum to {total}, expected 1")

    def to_json(self) -> str:
        return json.dumps(
            {
                "a_edges": self.a_edges.tolist(),
                "s_edges": self.s_edges.tolist(),
                "bins": self.bins.reshape(-1).tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ShapeHistogram":
        d = json.loads(text)
        a_edges = np.asarray(d["a_edges"], dtype=np.float64)
        s_edges = np.asarray(d["s_edges"], dtype=np.float64)
        bins = np.asarray(d["bins"], dtype=np.float64).reshape(
            a_edges.size - 1, s_edges.size - 1
        )
        return cls(a_edges=a_edges, s_edges=s_edges, bins=bins)


def build_shape_histogram(
    shapes: list[tuple[float, float]], n_bins: int = HIST_BINS
) -> ShapeHistogram:
    """Bin observed (aspect, scale) pairs into a normalized joint histogram.

    Edges span the observed range of each parameter, padded by EDGE_PAD, with
    ``n_bins`` equal-width bins per axis.
    """
    if not shapes:
        raise ValueError("cannot build a shape histogram from zero shapes")
    a = np.asarray([p[0] for p in shapes], dtype=np.float64)
    s = np.asarray([p[1] for p in shapes], dtype=np.float64)
    a_edges = np.linspace(a.min() - EDGE_PAD, a.max() + EDGE_PAD, n_bins + 1)
    s_edges = np.linspace(s.min() - EDGE_PAD, s.max() + EDGE_PAD, n_bins + 1)
    counts, _, _ = np.histogram2d(a, s, bins=[a_edges, s_edges])
    return ShapeHistogram(a_edges=a_edges, s_edges=s_edges, bins=counts / counts.sum())


def sample_shape(hist: ShapeHistogram, rng: np.random.Generator) -> tuple[float, float]:
    """Draw one (aspect, scale) pair: bin by weight, uniform within the bin."""
    flat = hist.bins.reshape(-1)
    cdf = np.cumsum(flat)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    k = min(k, flat.size - 1)
    i, j = divmod(k, hist.bins.shape[1])
    a = rng.uniform(hist.a_edges[i], hist.a_edges[i + 1])
    s = rng.uniform(hist.s_edges[j], hist.s_edges[j + 1])
    return (a, s)


def box_from_shape(
    a: float,
    s: float,
    center: tuple[float, float],
    image_w: float,
    image_h: float,
    min_side: float = MIN_BOX_SIDE,
) -> BoundingBox | None:
    """Realize a box of shape (a, s) centered at ``center``, clipped to the image.

    Returns None when either clipped side falls below ``min_side``.
    """
    if a <= 0 or s <= 0 or s > 1:
        raise ValueError(f"invalid shape a={a}, s={s}")
    w = s * math.sqrt(image_w * image_h * a)
    h = s * math.sqrt(image_w * image_h / a)
    cx, cy = center
    x0 = max(0.0, cx - w / 2)
    y0 = max(0.0, cy - h / 2)
    x1 = min(float(image_w), cx + w / 2)
    y1 = min(float(image_h), cy + h / 2)
    if x1 - x0 < min_side or y1 - y0 < min_side:
        return None
    return BoundingBox(x0, y0, x1, y1)
