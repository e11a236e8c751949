"""Placement policy: score candidate boxes, match cutouts, paste, annotate.

Four modes: context-driven pasting (candidates kept where the scorer gives
some category a high probability), random pasting, enlarge-and-reblend of
existing instances, and the remove-context transform that relocates every
instance of a category onto background images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bank import InstanceBank, MatchQuery, extract_instance, resize_cutout, scale_cutout
from .blending import (
    blend_method_name,
    composite_with_method,
    paste_anchor,
    resolve_blend_method,
)
from .contexts import ContextGenParams, ContextualSample, positive_context
from .geometry import BoundingBox, ShapeHistogram, box_from_shape, iou, per_image_rng, sample_shape
from .voc import AnnotatedObject, DatasetRecord, ImageAnnotation, write_augmented

MODES = ("context", "random", "enlarge", "remove-context")
ENLARGE_RANGE = (1.2, 1.5)


@dataclass(frozen=True)
class AugmentationConfig:
    paste_probability: float = 0.5
    max_instances: int = 2
    candidates_per_image: int = 200
    score_threshold: float = 0.8
    match_scale_range: tuple[float, float] = (0.5, 1.5)
    random_scale_range: tuple[float, float] = (0.5, 2.0)
    bg_iou_max: float = 0.3
    gt_overlap_max: float = 0.3
    blend: str = "random"
    seed: int = 0
    category: str | None = None
    negatives_only: bool = True

    def __post_init__(self):
        for name in ("paste_probability", "score_threshold", "bg_iou_max", "gt_overlap_max"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.max_instances < 1 or self.candidates_per_image < 1:
            raise ValueError("max_instances and candidates_per_image must be >= 1")
        for name in ("match_scale_range", "random_scale_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"invalid {name} ({lo}, {hi})")


@dataclass(frozen=True)
class Placement:
    """A retained candidate: where to paste, what, and how confident."""

    box: BoundingBox
    category: str
    score: float
    sample: ContextualSample


@dataclass
class AugmentedRecord:
    """Augmented image plus its extended annotation and provenance."""

    image: np.ndarray
    annotation: ImageAnnotation
    provenance: dict

    @property
    def image_id(self) -> str:
        return self.annotation.image_id


def propose_candidates(
    image_w: int,
    image_h: int,
    hist: ShapeHistogram,
    n: int,
    rng: np.random.Generator,
) -> list[BoundingBox]:
    """Exactly ``n`` in-bounds boxes: shape from the empirical histogram,
    center uniform over the image; degenerate clipped draws are repeated."""
    if n < 1:
        raise ValueError(f"need n >= 1 candidates, got {n}")
    boxes: list[BoundingBox] = []
    attempts = 0
    while len(boxes) < n:
        attempts += 1
        if attempts > 10_000 * n:
            raise RuntimeError(
                f"could not draw {n} valid candidate boxes in {attempts} attempts"
            )
        a, s = sample_shape(hist, rng)
        cx = float(rng.uniform(0.0, image_w))
        cy = float(rng.uniform(0.0, image_h))
        box = box_from_shape(a, s, (cx, cy), image_w, image_h)
        if box is not None:
            boxes.append(box)
    return boxes


def select_placements(
    image: np.ndarray,
    gt_boxes: Sequence[BoundingBox],
    scorer,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
    hist: ShapeHistogram | None = None,
    candidates: Sequence[BoundingBox] | None = None,
    limit: int | None = None,
    context_params: ContextGenParams | None = None,
) -> list[Placement]:
    """Score candidates' masked neighborhoods and keep the best placements.

    A candidate survives when some non-background class has probability
    strictly above the threshold (restricted to cfg.category when set). The
    survivors are sorted by that probability and kept greedily, rejecting
    any box whose IoU with a ground-truth box or an already-kept box
    exceeds cfg.gt_overlap_max, up to ``limit`` placements.
    """
    H, W = image.shape[:2]
    params = context_params or ContextGenParams()
    if candidates is None:
        if hist is None:
            raise ValueError("need either explicit candidates or a shape histogram")
        candidates = propose_candidates(W, H, hist, cfg.candidates_per_image, rng)
    if limit is None:
        limit = cfg.max_instances

    class_names = tuple(scorer.class_names)
    n_categories = len(class_names) - 1
    if cfg.category is not None:
        if cfg.category not in class_names[:n_categories]:
            raise ValueError(
                f"category {cfg.category!r} unknown to scorer {class_names}"
            )
        allowed = [class_names.index(cfg.category)]
    else:
        allowed = list(range(n_categories))

    scored: list[Placement] = []
    for box in candidates:
        sample = positive_context(image, box, params, rng, label=n_categories)
        probs = scorer.score(sample).probs
        best = max(allowed, key=lambda k: probs[k])
        score = float(probs[best])
        if score > cfg.score_threshold:
            scored.append(
                Placement(box=box, category=class_names[best], score=score, sample=sample)
            )

    scored.sort(key=lambda p: -p.score)
    kept: list[Placement] = []
    for placement in scored:
        if len(kept) >= limit:
            break
        if any(iou(placement.box, g) > cfg.gt_overlap_max for g in gt_boxes):
            continue
        if any(iou(placement.box, k.box) > cfg.gt_overlap_max for k in kept):
            continue
        kept.append(placement)
    return kept


def _paste_entry(cutout, category, box: BoundingBox, scale: float, method) -> dict:
    x0, y0, x1, y1 = box.round()
    return {
        "source_image_id": cutout.source_image_id,
        "source_object_index": cutout.source_object_index,
        "category": category,
        "box": [x0, y0, x1, y1],
        "scale": round(float(scale), 6),
        "blend": blend_method_name(method),
    }


def _placed_tight_box(
    mask: np.ndarray, x0: int, y0: int
) -> BoundingBox:
    ys, xs = np.nonzero(mask)
    return BoundingBox(
        x0 + int(xs.min()),
        y0 + int(ys.min()),
        x0 + int(xs.max()) + 1,
        y0 + int(ys.max()) + 1,
    )


def _paste_cutout(
    image: np.ndarray,
    cutout,
    box: BoundingBox,
    scale: float,
    method,
) -> tuple[np.ndarray, BoundingBox]:
    """Scale, center in ``box``, composite; returns (image, placed tight box)."""
    H, W = image.shape[:2]
    rgb, mask = scale_cutout(cutout, scale)
    h, w = mask.shape
    if w > W or h > H:
        raise ValueError(f"scaled cutout {w}x{h} larger than image {W}x{H}")
    x0, y0 = paste_anchor(box, w, h, W, H)
    out = composite_with_method(image, rgb, mask, x0, y0, method)
    return out, _placed_tight_box(mask, x0, y0)


def augment_image(
    record: DatasetRecord,
    bank: InstanceBank,
    scorer,
    hist: ShapeHistogram,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
    mode: str,
) -> AugmentedRecord:
    """Augment one image in "context" or "random" mode.

    The paste-probability draw comes first, so a declined image consumes
    exactly one random number. In single-category mode with
    ``negatives_only`` set, images already containing the category pass
    through unchanged.
    """
    if mode not in ("context", "random"):
        raise ValueError(f"augment_image handles context/random, got {mode!r}")
    ann = record.annotation
    provenance = {"image_id": ann.image_id, "seed": cfg.seed, "mode": mode, "pastes": []}
    unchanged = AugmentedRecord(
        image=record.image.copy(), annotation=ann, provenance=provenance
    )
    if (
        cfg.category is not None
        and cfg.negatives_only
        and cfg.category in ann.categories
    ):
        return unchanged
    if float(rng.uniform()) >= cfg.paste_probability:
        return unchanged

    image = record.image.copy()
    new_objects = list(ann.objects)
    pastes: list[dict] = []

    if mode == "context":
        placements = select_placements(
            image,
            ann.boxes,
            scorer,
            cfg,
            rng,
            hist=hist,
            limit=cfg.max_instances * 3,
        )
        pasted = 0
        for placement in placements:
            if pasted >= cfg.max_instances:
                break
            match = bank.match_instance(
                MatchQuery(candidate=placement.box, scale_range=cfg.match_scale_range),
                placement.category,
                rng,
            )
            if match is None:
                continue
            cutout, scale = match
            method = resolve_blend_method(cfg.blend, rng)
            image, placed_box = _paste_cutout(
                image, cutout, placement.box, scale, method
            )
            new_objects.append(
                AnnotatedObject(category=placement.category, box=placed_box)
            )
            pastes.append(_paste_entry(cutout, placement.category, placed_box, scale, method))
            pasted += 1
    else:
        n_paste = int(rng.integers(1, cfg.max_instances + 1))
        categories = [cfg.category] if cfg.category else bank.categories
        for _ in range(n_paste):
            category = categories[int(rng.integers(len(categories)))]
            pool = bank.of_category(category)
            cutout = pool[int(rng.integers(len(pool)))]
            H, W = image.shape[:2]
            scale = float(rng.uniform(*cfg.random_scale_range))
            for _retry in range(10):
                w = max(1, round(cutout.width * scale))
                h = max(1, round(cutout.height * scale))
                if w <= W and h <= H:
                    break
                scale = float(rng.uniform(*cfg.random_scale_range))
            else:
                scale = min(W / cutout.width, H / cutout.height) * 0.95
                w = max(1, round(cutout.width * scale))
                h = max(1, round(cutout.height * scale))
            x0 = int(rng.integers(0, W - w + 1))
            y0 = int(rng.integers(0, H - h + 1))
            box = BoundingBox(x0, y0, x0 + w, y0 + h)
            method = resolve_blend_method(cfg.blend, rng)
            image, placed_box = _paste_cutout(image, cutout, box, scale, method)
            new_objects.append(AnnotatedObject(category=category, box=placed_box))
            pastes.append(_paste_entry(cutout, category, placed_box, scale, method))

    provenance["pastes"] = pastes
    annotation = ImageAnnotation(
        image_id=ann.image_id,
        width=ann.width,
        height=ann.height,
        objects=tuple(new_objects),
    )
    return AugmentedRecord(image=image, annotation=annotation, provenance=provenance)


def enlarged_box(box: BoundingBox, factor: float, width: int, height: int) -> BoundingBox:
    """Box scaled about its center, rounded outward, clipped to the image.

    Outward rounding plus factor > 1 guarantees the result contains the
    original box (before clipping; clipping only trims off-image parts).
    """
    cx, cy = box.center
    half_w = box.width * factor / 2.0
    half_h = box.height * factor / 2.0
    return BoundingBox(
        max(0.0, math.floor(cx - half_w)),
        max(0.0, math.floor(cy - half_h)),
        min(float(width), math.ceil(cx + half_w)),
        min(float(height), math.ceil(cy + half_h)),
    )


def enlarge_reblend(
    record: DatasetRecord,
    rng: np.random.Generator,
    seed: int = 0,
    blend_spec: str = "random",
) -> AugmentedRecord:
    """Re-blend each instance enlarged by a factor in [1.2, 1.5] over itself.

    The enlarged cutout is resized to exactly fill the outward-rounded box,
    so the new annotation box both covers the original and matches the
    pasted pixels.
    """
    if record.masks is None:
        raise ValueError(f"{record.image_id}: enlarge mode needs instance masks")
    ann = record.annotation
    image = record.image.copy()
    W, H = ann.width, ann.height
    new_objects = []
    pastes = []
    for i, obj in enumerate(ann.objects):
        cutout = extract_instance(record.image, record.masks[i], obj.category, ann.image_id, i)
        factor = float(rng.uniform(*ENLARGE_RANGE))
        target = enlarged_box(cutout.tight_box, factor, W, H)
        bw, bh = max(1, round(target.width)), max(1, round(target.height))
        rgb, mask = resize_cutout(cutout, bw, bh)
        method = resolve_blend_method(blend_spec, rng)
        x0, y0 = int(target.x0), int(target.y0)
        image = composite_with_method(image, rgb, mask, x0, y0, method)
        new_box = _placed_tight_box(mask, x0, y0)
        new_objects.append(replace(obj, box=new_box))
        pastes.append(_paste_entry(cutout, obj.category, new_box, factor, method))
    annotation = ImageAnnotation(
        image_id=ann.image_id, width=W, height=H, objects=tuple(new_objects)
    )
    provenance = {"image_id": ann.image_id, "seed": seed, "mode": "enlarge", "pastes": pastes}
    return AugmentedRecord(image=image, annotation=annotation, provenance=provenance)


def remove_context_transform(
    records: Sequence[DatasetRecord],
    category: str,
    bank: InstanceBank,
    rng: np.random.Generator,
    seed: int = 0,
    blend_spec: str = "random",
) -> list[AugmentedRecord]:
    """Drop every image containing ``category``; relocate its instances.

    Each cutout of the category is pasted at scale 1 (shrunk only if it
    cannot fit) at a uniform location on a distinct shuffled background
    image. Backgrounds left over stay in the output unmodified, so the
    output holds exactly the negative images.
    """
    negatives = [r for r in records if category not in r.annotation.categories]
    cutouts = bank.of_category(category)
    if len(cutouts) > len(negatives):
        raise ValueError(
            f"not enough background images: {len(cutouts)} instances of "
            f"{category!r} but only {len(negatives)} negatives"
        )
    order = rng.permutation(len(negatives))
    results: list[AugmentedRecord] = []
    assigned = {int(order[i]): cutouts[i] for i in range(len(cutouts))}
    for idx, rec in enumerate(negatives):
        ann = rec.annotation
        provenance = {
            "image_id": ann.image_id,
            "seed": seed,
            "mode": "remove-context",
            "pastes": [],
        }
        if idx not in assigned:
            results.append(
                AugmentedRecord(
                    image=rec.image.copy(), annotation=ann, provenance=provenance
                )
            )
            continue
        cutout = assigned[idx]
        W, H = ann.width, ann.height
        scale = min(1.0, W / cutout.width, H / cutout.height)
        if scale < 1.0:
            scale *= 0.95
        rgb, mask = scale_cutout(cutout, scale)
        h, w = mask.shape
        x0 = int(rng.integers(0, W - w + 1))
        y0 = int(rng.integers(0, H - h + 1))
        method = resolve_blend_method(blend_spec, rng)
        image = composite_with_method(rec.image.copy(), rgb, mask, x0, y0, method)
        placed_box = _placed_tight_box(mask, x0, y0)
        annotation = ImageAnnotation(
            image_id=ann.image_id,
            width=W,
            height=H,
            objects=ann.objects + (AnnotatedObject(category=category, box=placed_box),),
        )
        provenance["pastes"] = [
            _paste_entry(cutout, category, placed_box, scale, method)
        ]
        results.append(
            AugmentedRecord(image=image, annotation=annotation, provenance=provenance)
        )
    return results


def augment_dataset(
    records: Sequence[DatasetRecord],
    bank: InstanceBank,
    scorer,
    hist: ShapeHistogram,
    cfg: AugmentationConfig,
    mode: str,
    out_dir: Path | None = None,
) -> list[AugmentedRecord]:
    """Apply one augmentation mode across a dataset, deterministically.

    Per-image RNG streams derive from (cfg.seed, image_id), so results do
    not depend on processing order. When ``out_dir`` is given, every record
    is written in the VOC-style output layout.
    """
    records = sorted(records, key=lambda r: r.image_id)
    results: list[AugmentedRecord] = []
    if mode == "remove-context":
        if cfg.category is None:
            raise ValueError("remove-context mode needs a category")
        rng = np.random.default_rng(cfg.seed)
        results = remove_context_transform(
            records, cfg.category, bank, rng, seed=cfg.seed, blend_spec=cfg.blend
        )
    else:
        for rec in records:
            rng = per_image_rng(cfg.seed, rec.image_id)
            if mode == "enlarge":
                if rec.masks is None:
                    results.append(
                        AugmentedRecord(
                            image=rec.image.copy(),
                            annotation=rec.annotation,
                            provenance={
                                "image_id": rec.image_id,
                                "seed": cfg.seed,
                                "mode": "enlarge",
                                "pastes": [],
                            },
                        )
                    )
                else:
                    results.append(
                        enlarge_reblend(rec, rng, seed=cfg.seed, blend_spec=cfg.blend)
                    )
            else:
                results.append(
                    augment_image(rec, bank, scorer, hist, cfg, rng, mode)
                )
    if out_dir is not None:
        for result in results:
            write_augmented(result, out_dir)
    return results
