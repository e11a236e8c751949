"""Masked-neighborhood samples for training and querying the context scorer.

A contextual sample is a fixed-size crop of an image surrounding a box, with
the box's content replaced by a flat fill color so only the surroundings
remain. Positive samples carry the category of the object that was masked
out; background samples mask boxes that barely overlap any annotated object.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import (
    BoundingBox,
    ShapeHistogram,
    box_from_shape,
    build_shape_histogram,
    iou,
    iround,
    per_image_rng,
    sample_shape,
    shape_of,
)
from .voc import DatasetRecord

DEFAULT_FILL = (128, 128, 128)
DEFAULT_OUT_SIZE = 300
MAX_BG_REJECTIONS = 1000


@dataclass(frozen=True)
class ContextGenParams:
    """Knobs for contextual-sample generation."""

    dilation_range: tuple[float, float] = (1.2, 2.0)
    contexts_per_box: int = 3
    bg_ratio: int = 3
    bg_iou_max: float = 0.3
    out_size: int = DEFAULT_OUT_SIZE
    fill: tuple[int, int, int] = DEFAULT_FILL

    def __post_init__(self):
        lo, hi = self.dilation_range
        if not (1.0 < lo <= hi):
            raise ValueError(f"dilation range must be > 1, got {self.dilation_range}")
        if not (0.0 <= self.bg_iou_max < 1.0):
            raise ValueError(f"bg_iou_max must be in [0, 1), got {self.bg_iou_max}")
        if self.contexts_per_box < 1 or self.bg_ratio < 0:
            raise ValueError("contexts_per_box must be >= 1 and bg_ratio >= 0")
        if self.out_size < 8:
            raise ValueError(f"out_size too small: {self.out_size}")


@dataclass(frozen=True, eq=False)
class ContextualSample:
    """One masked neighborhood: pixels, where the mask sits, and its label.

    ``label`` indexes the dataset's sorted category list; the background
    class comes last (index = number of categories). ``source_box`` is the
    masked box in original image coordinates, kept for auditing.
    """

    pixels: np.ndarray
    masked_region: BoundingBox
    label: int
    source_box: BoundingBox | None = None

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8 HxWx3, got {self.pixels.shape}")
        size = self.pixels.shape[0]
        if self.pixels.shape[1] != size:
            raise ValueError(f"sample must be square, got {self.pixels.shape}")
        m = self.masked_region
        if not (1 <= m.x0 < m.x1 <= size - 1 and 1 <= m.y0 < m.y1 <= size - 1):
            raise ValueError(
                f"masked_region {m.as_tuple()} not strictly inside {size}x{size} sample"
            )
        if self.label < 0:
            raise ValueError(f"negative label {self.label}")


def dilated_neighborhood(
    box: BoundingBox,
    fx: float,
    fy: float,
    ux: float,
    uy: float,
    width: int,
    height: int,
) -> BoundingBox:
    """Neighborhood enclosing ``box``, dilated by (fx, fy) and positioned by
    jitter fractions (ux, uy) in [0, 1]; 0.5 centers it. Clipped to the image.

    The un-clipped neighborhood always fully encloses ``box``; clipping can
    only trim parts that lie outside the image, so the box stays inside.
    """
    if fx < 1 or fy < 1:
        raise ValueError(f"dilation factors must be >= 1, got ({fx}, {fy})")
    if not (0 <= ux <= 1 and 0 <= uy <= 1):
        raise ValueError(f"jitter fractions must be in [0, 1], got ({ux}, {uy})")
    dw = box.width * fx
    dh = box.height * fy
    nx0 = (box.x1 - dw) + ux * (dw - box.width)
    ny0 = (box.y1 - dh) + uy * (dh - box.height)
    return BoundingBox(
        max(0.0, nx0),
        max(0.0, ny0),
        min(float(width), nx0 + dw),
        min(float(height), ny0 + dh),
    )


def masked_sample(
    image: np.ndarray,
    box: BoundingBox,
    neighborhood: BoundingBox,
    params: ContextGenParams,
    label: int,
) -> ContextualSample:
    """Crop the neighborhood, resize to the output size, and fill the box.

    The fill is applied after resizing so fill-colored pixels cover the
    reported masked_region exactly (resampling never smears the fill color
    into the surrounding context). The masked_region is clamped to keep at
    least one pixel of context on every side.
    """
    H, W = image.shape[:2]
    cx0 = max(0, math.floor(neighborhood.x0))
    cy0 = max(0, math.floor(neighborhood.y0))
    cx1 = min(W, math.ceil(neighborhood.x1))
    cy1 = min(H, math.ceil(neighborhood.y1))
    crop = image[cy0:cy1, cx0:cx1]
    S = params.out_size
    pixels = np.array(
        Image.fromarray(crop, mode="RGB").resize((S, S), Image.BILINEAR)
    )
    sx = S / (cx1 - cx0)
    sy = S / (cy1 - cy0)
    mx0 = min(max(iround((box.x0 - cx0) * sx), 1), S - 2)
    my0 = min(max(iround((box.y0 - cy0) * sy), 1), S - 2)
    mx1 = min(max(iround((box.x1 - cx0) * sx), mx0 + 1), S - 1)
    my1 = min(max(iround((box.y1 - cy0) * sy), my0 + 1), S - 1)
    pixels[my0:my1, mx0:mx1] = params.fill
    return ContextualSample(
        pixels=pixels,
        masked_region=BoundingBox(mx0, my0, mx1, my1),
        label=label,
        source_box=box,
    )


def positive_context(
    image: np.ndarray,
    gt_box: BoundingBox,
    params: ContextGenParams,
    rng: np.random.Generator,
    label: int,
) -> ContextualSample:
    """Masked neighborhood around a ground-truth box.

    Dilation factors for the two axes and the jitter fractions are drawn
    from ``rng`` in the order fx, fy, ux, uy.
    """
    H, W = image.shape[:2]
    fx = float(rng.uniform(*params.dilation_range))
    fy = float(rng.uniform(*params.dilation_range))
    ux = float(rng.uniform(0.0, 1.0))
    uy = float(rng.uniform(0.0, 1.0))
    nbhd = dilated_neighborhood(gt_box, fx, fy, ux, uy, W, H)
    return masked_sample(image, gt_box, nbhd, params, label)


def background_context(
    image: np.ndarray,
    all_gt_boxes: Sequence[BoundingBox],
    hist: ShapeHistogram,
    params: ContextGenParams,
    rng: np.random.Generator,
    label: int,
) -> ContextualSample:
    """Masked neighborhood around a box that misses every annotated object.

    Boxes are rejection-sampled: shape from the empirical histogram, center
    uniform over the image, accepted when IoU with every ground-truth box
    stays at or below ``bg_iou_max``.
    """
    H, W = image.shape[:2]
    for _ in range(MAX_BG_REJECTIONS):
        a, s = sample_shape(hist, rng)
        cx = float(rng.uniform(0.0, W))
        cy = float(rng.uniform(0.0, H))
        box = box_from_shape(a, s, (cx, cy), W, H)
        if box is None:
            continue
        if any(iou(box, g) > params.bg_iou_max for g in all_gt_boxes):
            continue
        return positive_context(image, box, params, rng, label)
    raise RuntimeError(
        f"image too crowded: no background box with IoU <= {params.bg_iou_max} "
        f"found in {MAX_BG_REJECTIONS} attempts"
    )


@dataclass
class ContextDataset:
    """Contextual samples plus the category list they are labeled against."""

    samples: list[ContextualSample]
    categories: tuple[str, ...]

    @property
    def background_index(self) -> int:
        return len(self.categories)

    @property
    def n_classes(self) -> int:
        return len(self.categories) + 1

    def class_name(self, label: int) -> str:
        return "background" if label == self.background_index else self.categories[label]

    def save(self, out_dir: Path):
        """Write sample PNGs, a labels CSV, and the category list."""
        out_dir = Path(out_dir)
        img_dir = out_dir / "samples"
        img_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "labels.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file", "label", "x0", "y0", "x1", "y1"])
            for i, sample in enumerate(self.samples):
                name = f"samples/{i:06d}.png"
                Image.fromarray(sample.pixels, mode="RGB").save(
                    out_dir / name, format="PNG"
                )
                x0, y0, x1, y1 = sample.masked_region.round()
                writer.writerow([name, sample.label, x0, y0, x1, y1])
        (out_dir / "classes.json").write_text(
            json.dumps(
                {
                    "categories": list(self.categories),
                    "background_index": self.background_index,
                },
                indent=2,
            )
        )

    @classmethod
    def load(cls, in_dir: Path) -> "ContextDataset":
        in_dir = Path(in_dir)
        meta = json.loads((in_dir / "classes.json").read_text())
        samples = []
        with (in_dir / "labels.csv").open(newline="") as fh:
            for row in csv.DictReader(fh):
                with Image.open(in_dir / row["file"]) as im:
                    pixels = np.array(im.convert("RGB"))
                samples.append(
                    ContextualSample(
                        pixels=pixels,
                        masked_region=BoundingBox(
                            float(row["x0"]),
                            float(row["y0"]),
                            float(row["x1"]),
                            float(row["y1"]),
                        ),
                        label=int(row["label"]),
                    )
                )
        return cls(samples=samples, categories=tuple(meta["categories"]))


def dataset_categories(records: Sequence[DatasetRecord]) -> tuple[str, ...]:
    """Sorted unique category names across a set of records."""
    names = {o.category for rec in records for o in rec.annotation.objects}
    return tuple(sorted(names))


def dataset_shape_histogram(records: Sequence[DatasetRecord]) -> ShapeHistogram:
    """Histogram of (aspect, relative scale) over all ground-truth boxes."""
    shapes = [
        shape_of(o.box, rec.annotation.width, rec.annotation.height)
        for rec in records
        for o in rec.annotation.objects
    ]
    if not shapes:
        raise ValueError("dataset has no ground-truth boxes")
    return build_shape_histogram(shapes)


def build_context_dataset(
    records: Sequence[DatasetRecord],
    params: ContextGenParams,
    seed: int,
) -> ContextDataset:
    """Generate the scorer's training set from an annotated dataset.

    Each ground-truth box yields ``contexts_per_box`` positives; each image
    then yields ``bg_ratio`` background samples per positive, so the global
    background:positive ratio is exact. Samples are shuffled with a stream
    derived from the seed; per-image streams keep generation order-independent.
    """
    records = sorted(records, key=lambda r: r.image_id)
    categories = dataset_categories(records)
    if not categories:
        raise ValueError("dataset has no ground-truth boxes")
    label_of = {name: i for i, name in enumerate(categories)}
    background = len(categories)
    hist = dataset_shape_histogram(records)

    samples: list[ContextualSample] = []
    for rec in records:
        rng = per_image_rng(seed, rec.image_id)
        ann = rec.annotation
        n_pos = 0
        for obj in ann.objects:
            for _ in range(params.contexts_per_box):
                samples.append(
                    positive_context(
                        rec.image, obj.box, params, rng, label_of[obj.category]
                    )
                )
                n_pos += 1
        for _ in range(params.bg_ratio * n_pos):
            samples.append(
                background_context(
                    rec.image, ann.boxes, hist, params, rng, background
                )
            )

    shuffle_rng = np.random.default_rng([seed, len(samples)])
    order = shuffle_rng.permutation(len(samples))
    return ContextDataset(
        samples=[samples[i] for i in order], categories=categories
    )
