"""Synthetic placement benchmark with a known context rule.

Scenes are horizontal texture bands; each category's objects belong to one
band and sit centered on a flat dark pad slightly larger than their box.
The pad is the local cue that "something belongs here": without it, heavy
background sampling teaches the scorer that almost no box holds an object,
and no candidate would ever clear a high score threshold. Held-out scenes
contain empty pads in every band, so a context-driven policy has correct
spots to find, while random placement ignores them.

The benchmark trains the builtin scorer on generated scenes, augments
held-out scenes in context and random modes, and reports the fraction of
pasted boxes whose center lands in the band their category belongs to.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .augment import AugmentationConfig, AugmentedRecord, augment_dataset
from .bank import build_instance_bank
from .contexts import (
    ContextGenParams,
    build_context_dataset,
    dataset_shape_histogram,
)
from .geometry import BoundingBox
from .scorer import (
    BuiltinScorer,
    TrainParams,
    dataset_accuracy,
    train_builtin,
    validation_split,
)
from .voc import AnnotatedObject, DatasetRecord, ImageAnnotation, InstanceMaskSet


@dataclass(frozen=True)
class RegionRule:
    """A horizontal band, as fractions of image height, with its texture."""

    name: str
    y_range: tuple[float, float]
    color: tuple[int, int, int]

    def contains_center(self, cy: float, height: int) -> bool:
        lo, hi = self.y_range
        return lo * height <= cy < hi * height or (hi >= 1.0 and cy >= lo * height)


@dataclass(frozen=True)
class SynthCategory:
    name: str
    shape: str
    color: tuple[int, int, int]
    rule: RegionRule

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise ValueError(f"unknown shape {self.shape!r}")


def default_categories() -> tuple[SynthCategory, ...]:
    return (
        SynthCategory(
            name="boxy",
            shape="rectangle",
            color=(120, 110, 40),
            rule=RegionRule(name="top-half", y_range=(0.0, 0.5), color=(96, 64, 64)),
        ),
        SynthCategory(
            name="blobby",
            shape="ellipse",
            color=(40, 115, 100),
            rule=RegionRule(name="bottom-half", y_range=(0.5, 1.0), color=(64, 64, 96)),
        ),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Benchmark configuration; every pixel value stays below 128 so the
    default gray mask fill can never occur naturally in a scene."""

    image_size: int = 300
    n_images: int = 40
    categories: tuple[SynthCategory, ...] = ()
    instances_per_image: int = 2
    seed: int = 0
    pad_factor: float = 1.45
    pad_color: tuple[int, int, int] = (30, 30, 30)
    box_side_range: tuple[int, int] = (28, 56)
    noise_amplitude: int = 8
    heldout_context_images: int = 16
    heldout_random_images: int = 100
    heldout_pads_per_region: int = 2

    def __post_init__(self):
        if not self.categories:
            object.__setattr__(self, "categories", default_categories())
        ranges = sorted(c.rule.y_range for c in self.categories)
        if ranges[0][0] != 0.0 or ranges[-1][1] != 1.0:
            raise ValueError(f"region rules must cover [0, 1], got {ranges}")
        for (_, prev_hi), (lo, _) in zip(ranges, ranges[1:]):
            if not math.isclose(prev_hi, lo):
                raise ValueError(f"region rules must partition [0, 1], got {ranges}")
        if self.pad_factor <= 1.0:
            raise ValueError(f"pad_factor must exceed 1, got {self.pad_factor}")
        lo, hi = self.box_side_range
        if not (4 <= lo <= hi):
            raise ValueError(f"bad box_side_range {self.box_side_range}")
        max_pad = math.ceil(hi * self.pad_factor)
        for cat in self.categories:
            band = self._band_rows(cat.rule)
            if band[1] - band[0] < max_pad + 4:
                raise ValueError(
                    f"region {cat.rule.name!r} is too small for pads up to {max_pad} px"
                )

    def _band_rows(self, rule: RegionRule) -> tuple[int, int]:
        lo, hi = rule.y_range
        return int(math.floor(lo * self.image_size)), int(math.floor(hi * self.image_size))

    def category(self, name: str) -> SynthCategory:
        for cat in self.categories:
            if cat.name == name:
                return cat
        raise KeyError(f"unknown category {name!r}")


def spec_hash(spec: SynthSpec) -> str:
    payload = json.dumps(asdict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _render_bands(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    S = spec.image_size
    image = np.zeros((S, S, 3), dtype=np.int16)
    for cat in spec.categories:
        y0, y1 = spec._band_rows(cat.rule)
        image[y0:y1] = cat.rule.color
    noise = rng.integers(
        -spec.noise_amplitude, spec.noise_amplitude + 1, size=image.shape
    )
    return np.clip(image + noise, 0, 127).astype(np.uint8)


def _place_pads(
    spec: SynthSpec,
    plan: Sequence[tuple[SynthCategory, int, int]],
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Non-overlapping top-left pad corners, each inside its category's band."""
    S = spec.image_size
    corners: list[tuple[int, int]] = []
    rects: list[tuple[int, int, int, int]] = []
    for cat, pw, ph in plan:
        band_y0, band_y1 = spec._band_rows(cat.rule)
        placed = False
        for _ in range(200):
            x0 = int(rng.integers(2, S - pw - 1))
            y0 = int(rng.integers(band_y0 + 2, band_y1 - ph - 1))
            candidate = (x0, y0, x0 + pw, y0 + ph)
            if all(
                candidate[2] + 2 <= r[0]
                or r[2] + 2 <= candidate[0]
                or candidate[3] + 2 <= r[1]
                or r[3] + 2 <= candidate[1]
                for r in rects
            ):
                rects.append(candidate)
                corners.append((x0, y0))
                placed = True
                break
        if not placed:
            raise ValueError(
                f"region {cat.rule.name!r} too crowded for a {pw}x{ph} pad"
            )
    return corners


def _shape_mask(shape: str, box: tuple[int, int, int, int], size: int) -> np.ndarray:
    x0, y0, x1, y1 = box
    mask = np.zeros((size, size), dtype=bool)
    if shape == "rectangle":
        mask[y0:y1, x0:x1] = True
        return mask
    cx = (x0 + x1) / 2.0
    cy = (y0 + y1) / 2.0
    rx = (x1 - x0) / 2.0
    ry = (y1 - y0) / 2.0
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = ((xx + 0.5 - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2 <= 1.0
    mask[y0:y1, x0:x1] = inside
    return mask


def _render_scene(
    spec: SynthSpec,
    image_id: str,
    rng: np.random.Generator,
    with_objects: bool,
) -> DatasetRecord:
    S = spec.image_size
    image = _render_bands(spec, rng)

    if with_objects:
        plan_cats = [
            spec.categories[int(rng.integers(len(spec.categories)))]
            for _ in range(spec.instances_per_image)
        ]
    else:
        plan_cats = [
            cat
            for cat in spec.categories
            for _ in range(spec.heldout_pads_per_region)
        ]

    lo, hi = spec.box_side_range
    dims = [
        (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
        for _ in plan_cats
    ]
    plan = [
        (cat, math.ceil(w * spec.pad_factor), math.ceil(h * spec.pad_factor))
        for cat, (w, h) in zip(plan_cats, dims)
    ]
    corners = _place_pads(spec, plan, rng)

    objects: list[AnnotatedObject] = []
    masks: list[np.ndarray] = []
    for (cat, pw, ph), (w, h), (px0, py0) in zip(plan, dims, corners):
        image[py0 : py0 + ph, px0 : px0 + pw] = spec.pad_color
        if not with_objects:
            continue
        x0 = px0 + (pw - w) // 2
        y0 = py0 + (ph - h) // 2
        mask = _shape_mask(cat.shape, (x0, y0, x0 + w, y0 + h), S)
        image[mask] = cat.color
        objects.append(
            AnnotatedObject(category=cat.name, box=BoundingBox(x0, y0, x0 + w, y0 + h))
        )
        masks.append(mask)

    annotation = ImageAnnotation(
        image_id=image_id, width=S, height=S, objects=tuple(objects)
    )
    return DatasetRecord(
        image_id=image_id,
        image=image,
        annotation=annotation,
        masks=InstanceMaskSet(masks=tuple(masks)) if with_objects else None,
    )


def generate_synthetic_dataset(
    spec: SynthSpec, rng: np.random.Generator
) -> list[DatasetRecord]:
    """Annotated training scenes: textured bands, pads, shapes, exact masks."""
    return [
        _render_scene(spec, f"train_{i:04d}", rng, with_objects=True)
        for i in range(spec.n_images)
    ]


def generate_heldout_scenes(
    spec: SynthSpec, rng: np.random.Generator, n: int, prefix: str
) -> list[DatasetRecord]:
    """Object-free scenes with empty pads in every band."""
    return [
        _render_scene(spec, f"{prefix}_{i:04d}", rng, with_objects=False)
        for i in range(n)
    ]


def rule_consistency(
    placements: Sequence[tuple[str, BoundingBox]], spec: SynthSpec
) -> float:
    """Fraction of placements whose box center satisfies its category's rule."""
    if not placements:
        raise ValueError("no placements to evaluate")
    hits = 0
    for category, box in placements:
        rule = spec.category(category).rule
        _, cy = box.center
        hits += rule.contains_center(cy, spec.image_size)
    return hits / len(placements)


def _extract_placements(
    records: Sequence[AugmentedRecord],
) -> list[tuple[str, BoundingBox]]:
    out = []
    for rec in records:
        for paste in rec.provenance["pastes"]:
            out.append((paste["category"], BoundingBox(*paste["box"])))
    return out


@dataclass
class BenchmarkResult:
    """Everything a report needs: the summary dict plus raw artifacts."""

    report: dict
    scorer: BuiltinScorer
    context_records: list[AugmentedRecord]
    random_records: list[AugmentedRecord]
    context_placements: list[tuple[str, BoundingBox]]
    random_placements: list[tuple[str, BoundingBox]]


def run_benchmark(
    spec: SynthSpec,
    cfg: AugmentationConfig | None = None,
    train_params: TrainParams | None = None,
) -> BenchmarkResult:
    """Train on synthetic scenes, place on held-out ones, measure consistency.

    The paste-probability coin is forced to 1 during measurement so every
    held-out scene contributes placements; the probabilistic gate is covered
    by its own unit tests. Random mode runs over a larger scene set with up
    to three pastes per image to shrink the variance of its chance-level
    consistency estimate.
    """
    train = generate_synthetic_dataset(spec, np.random.default_rng([spec.seed, 1]))
    held_ctx = generate_heldout_scenes(
        spec, np.random.default_rng([spec.seed, 2]), spec.heldout_context_images, "heldout_ctx"
    )
    held_rnd = generate_heldout_scenes(
        spec, np.random.default_rng([spec.seed, 3]), spec.heldout_random_images, "heldout_rnd"
    )

    context_dataset = build_context_dataset(train, ContextGenParams(), seed=spec.seed)
    tp = train_params or TrainParams(seed=spec.seed)
    scorer = train_builtin(context_dataset, tp)
    _, val_idx = validation_split(len(context_dataset.samples), tp.val_fraction, tp.seed)
    val_accuracy = dataset_accuracy(scorer, context_dataset, val_idx)

    bank = build_instance_bank(train)
    hist = dataset_shape_histogram(train)
    base = cfg or AugmentationConfig(seed=spec.seed)
    ctx_cfg = replace(base, paste_probability=1.0, seed=spec.seed)
    rnd_cfg = replace(base, paste_probability=1.0, seed=spec.seed, max_instances=3)

    context_records = augment_dataset(held_ctx, bank, scorer, hist, ctx_cfg, "context")
    random_records = augment_dataset(held_rnd, bank, scorer, hist, rnd_cfg, "random")
    context_placements = _extract_placements(context_records)
    random_placements = _extract_placements(random_records)

    report = {
        "context_consistency": (
            rule_consistency(context_placements, spec) if context_placements else 0.0
        ),
        "random_consistency": (
            rule_consistency(random_placements, spec) if random_placements else 0.0
        ),
        "scorer_val_accuracy": val_accuracy,
        "seed": spec.seed,
        "spec_hash": spec_hash(spec),
    }
    return BenchmarkResult(
        report=report,
        scorer=scorer,
        context_records=context_records,
        random_records=random_records,
        context_placements=context_placements,
        random_placements=random_placements,
    )


REPORT_KEYS = (
    "context_consistency",
    "random_consistency",
    "scorer_val_accuracy",
    "seed",
    "spec_hash",
)


def validate_report(report: dict) -> dict:
    """Check the benchmark report against its schema; returns the report."""
    if set(report) != set(REPORT_KEYS):
        raise ValueError(
            f"report keys {sorted(report)} != expected {sorted(REPORT_KEYS)}"
        )
    for key in ("context_consistency", "random_consistency", "scorer_val_accuracy"):
        v = report[key]
        if not isinstance(v, (int, float)) or not (0.0 <= float(v) <= 1.0):
            raise ValueError(f"report[{key!r}] = {v!r} is not a fraction")
    if not isinstance(report["seed"], int):
        raise ValueError(f"report seed {report['seed']!r} is not an integer")
    if not isinstance(report["spec_hash"], str):
        raise ValueError(f"report spec_hash {report['spec_hash']!r} is not a string")
    return report
