"""Bank of segmented object cutouts and scale-feasibility matching.

Cutouts are tight RGBA crops (alpha encodes the instance mask). A cutout
matches a candidate box if some scale factor s makes its scaled box fit
inside the candidate while covering at least ``min_area_fraction`` of the
candidate's area, with s restricted to a configured range.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .geometry import BoundingBox, iround
from .voc import AnnotationError, DatasetRecord

DEFAULT_SCALE_RANGE = (0.5, 1.5)
DEFAULT_MIN_AREA_FRACTION = 0.8


@dataclass(frozen=True)
class InstanceCutout:
    """A segmented object: tight RGBA crop with alpha 255 on the mask."""

    category: str
    rgba: np.ndarray
    tight_box: BoundingBox
    source_image_id: str
    source_object_index: int

    def __post_init__(self):
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4 or self.rgba.dtype != np.uint8:
            raise ValueError(f"rgba must be uint8 HxWx4, got {self.rgba.shape} {self.rgba.dtype}")
        alpha = self.rgba[:, :, 3]
        if not alpha.any():
            raise ValueError("cutout alpha is empty")

    @property
    def width(self) -> int:
        return self.rgba.shape[1]

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def rgb(self) -> np.ndarray:
        return self.rgba[:, :, :3]

    @property
    def mask(self) -> np.ndarray:
        return self.rgba[:, :, 3] > 0


@dataclass(frozen=True)
class MatchQuery:
    """Candidate box plus the scale and coverage constraints for matching."""

    candidate: BoundingBox
    scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE
    min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid scale range {self.scale_range}")
        if not (0 < self.min_area_fraction <= 1):
            raise ValueError(f"invalid min_area_fraction {self.min_area_fraction}")


def extract_instance(
    image: np.ndarray,
    mask: np.ndarray,
    category: str,
    source_image_id: str,
    source_object_index: int,
) -> InstanceCutout:
    """Cut one object out of an image as a tight RGBA crop.

    The crop covers the bounding box of the mask's nonzero pixels; alpha is
    255 on the mask and 0 elsewhere.
    """
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise ValueError(f"empty mask for object {source_object_index} of {source_image_id}")
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    rgba = np.zeros((y1 - y0, x1 - x0, 4), dtype=np.uint8)
    rgba[:, :, :3] = image[y0:y1, x0:x1]
    rgba[:, :, 3] = np.where(mask[y0:y1, x0:x1], 255, 0)
    return InstanceCutout(
        category=category,
        rgba=rgba,
        tight_box=BoundingBox(x0, y0, x1, y1),
        source_image_id=source_image_id,
        source_object_index=source_object_index,
    )


def feasible_scale_interval(
    instance: InstanceCutout, q: MatchQuery
) -> tuple[float, float] | None:
    """Scale interval where the scaled cutout fits the candidate and covers
    at least ``min_area_fraction`` of its area, or None if empty.

    Constraints on s: s*w <= cand_w, s*h <= cand_h,
    s^2*w*h >= min_area_fraction * cand_area, and s within scale_range.
    """
    w, h = instance.width, instance.height
    cw, ch = q.candidate.width, q.candidate.height
    fit_hi = min(cw / w, ch / h)
    area_lo = math.sqrt(q.min_area_fraction * cw * ch / (w * h))
    lo = max(area_lo, q.scale_range[0])
    hi = min(fit_hi, q.scale_range[1])
    if lo > hi:
        return None
    return (lo, hi)


def resize_cutout(instance: InstanceCutout, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Resize a cutout to exactly ``w`` x ``h``; returns (rgb uint8, mask).

    Color is resampled bilinearly, the mask with nearest-neighbor so it
    stays binary for downstream blending.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    if (w, h) == (instance.width, instance.height):
        return instance.rgb.copy(), instance.mask.copy()
    rgb_im = Image.fromarray(instance.rgb, mode="RGB").resize((w, h), Image.BILINEAR)
    mask_im = Image.fromarray(
        instance.rgba[:, :, 3], mode="L"
    ).resize((w, h), Image.NEAREST)
    mask = np.asarray(mask_im) > 0
    if not mask.any():
        # Nearest-neighbor can miss thin structures at small scales; keep the
        # center pixel so the cutout never vanishes entirely.
        mask = np.zeros((h, w), dtype=bool)
        mask[h // 2, w // 2] = True
    return np.array(rgb_im), mask


def scale_cutout(instance: InstanceCutout, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Resize a cutout by a uniform ``scale``; returns (rgb uint8, mask)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    w = max(1, iround(instance.width * scale))
    h = max(1, iround(instance.height * scale))
    return resize_cutout(instance, w, h)


class InstanceBank:
    """Immutable collection of cutouts, indexed by category."""

    def __init__(self, instances: Iterable[InstanceCutout]):
        self.instances: tuple[InstanceCutout, ...] = tuple(instances)
        self._by_category: dict[str, list[int]] = {}
        for i, inst in enumerate(self.instances):
            self._by_category.setdefault(inst.category, []).append(i)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def categories(self) -> list[str]:
        return sorted(self._by_category)

    def of_category(self, category: str) -> list[InstanceCutout]:
        if category not in self._by_category:
            raise KeyError(f"category {category!r} not in bank (have {self.categories})")
        return [self.instances[i] for i in self._by_category[category]]

    def match_instance(
        self,
        q: MatchQuery,
        category: str,
        rng: np.random.Generator,
    ) -> tuple[InstanceCutout, float] | None:
        """Pick uniformly among this category's cutouts with a nonempty
        feasible interval, then a scale uniformly within that interval."""
        feasible = []
        for inst in self.of_category(category):
            interval = feasible_scale_interval(inst, q)
            if interval is not None:
                feasible.append((inst, interval))
        if not feasible:
            return None
        inst, (lo, hi) = feasible[rng.integers(len(feasible))]
        scale = float(rng.uniform(lo, hi))
        return inst, scale

    def save(self, out_dir: Path):
        """Write cutout PNGs plus an ``index.json`` listing them."""
        out_dir = Path(out_dir)
        png_dir = out_dir / "instances"
        png_dir.mkdir(parents=True, exist_ok=True)
        index = []
        for i, inst in enumerate(self.instances):
            name = f"{i:06d}_{inst.category}.png"
            Image.fromarray(inst.rgba, mode="RGBA").save(png_dir / name, format="PNG")
            index.append(
                {
                    "file": f"instances/{name}",
                    "category": inst.category,
                    "w": inst.width,
                    "h": inst.height,
                    "source_image_id": inst.source_image_id,
                    "source_object_index": inst.source_object_index,
                    "tight_box": list(inst.tight_box.as_tuple()),
                }
            )
        (out_dir / "index.json").write_text(json.dumps(index, indent=2))

    @classmethod
    def load(cls, bank_dir: Path) -> "InstanceBank":
        bank_dir = Path(bank_dir)
        index_path = bank_dir / "index.json"
        if not index_path.exists():
            raise FileNotFoundError(f"no index.json under {bank_dir}")
        index = json.loads(index_path.read_text())
        instances = []
        for entry in index:
            with Image.open(bank_dir / entry["file"]) as im:
                rgba = np.asarray(im.convert("RGBA"))
            if rgba.shape[:2] != (entry["h"], entry["w"]):
                raise AnnotationError(
                    f"bank entry {entry['file']}: PNG is "
                    f"{rgba.shape[1]}x{rgba.shape[0]} but index says "
                    f"{entry['w']}x{entry['h']}"
                )
            tb = entry.get("tight_box")
            tight_box = (
                BoundingBox(*tb) if tb else BoundingBox(0, 0, entry["w"], entry["h"])
            )
            instances.append(
                InstanceCutout(
                    category=entry["category"],
                    rgba=rgba,
                    tight_box=tight_box,
                    source_image_id=entry["source_image_id"],
                    source_object_index=entry["source_object_index"],
                )
            )
        return cls(instances)


def build_instance_bank(
    records: Iterable[DatasetRecord], include_difficult: bool = False
) -> InstanceBank:
    """Cut every masked object out of the given records.

    Records without instance masks are skipped; difficult-flagged objects
    are excluded unless requested (they remain ground truth elsewhere).
    """
    instances = []
    for rec in records:
        if rec.masks is None:
            continue
        for i, obj in enumerate(rec.annotation.objects):
            if obj.difficult and not include_difficult:
                continue
            instances.append(
                extract_instance(rec.image, rec.masks[i], obj.category, rec.image_id, i)
            )
    return InstanceBank(instances)
