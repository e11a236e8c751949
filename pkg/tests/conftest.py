"""Shared fixtures: deterministic in-memory datasets and a prepared CLI
pipeline (dataset on disk, bank, contexts, trained scorer) reused by the
CLI and acceptance tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from ctxpaste.cli import main as cli_main
from ctxpaste.geometry import BoundingBox
from ctxpaste.synth import SynthSpec, generate_synthetic_dataset
from ctxpaste.voc import (
    AnnotatedObject,
    DatasetRecord,
    ImageAnnotation,
    InstanceMaskSet,
    write_voc_dataset,
)

FIXTURE_CATEGORIES = ("gizmo", "widget")


def make_fixture_records(
    n_images: int = 6, seed: int = 0, size: int = 120
) -> list[DatasetRecord]:
    """Small segmented dataset with rectangular objects on dark noise.

    Every pixel value stays at or below 120 so the default gray context
    fill (128) can never occur naturally and alpha blends of scene pixels
    can never round up to it either.
    """
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_images):
        image = rng.integers(10, 111, size=(size, size, 3)).astype(np.uint8)
        n_obj = int(rng.integers(1, 3))
        objects: list[AnnotatedObject] = []
        masks: list[np.ndarray] = []
        placed: list[tuple[int, int, int, int]] = []
        for j in range(n_obj):
            rect = None
            for _ in range(50):
                w = int(rng.integers(18, 40))
                h = int(rng.integers(18, 40))
                x0 = int(rng.integers(0, size - w))
                y0 = int(rng.integers(0, size - h))
                cand = (x0, y0, x0 + w, y0 + h)
                if all(
                    cand[2] <= p[0] or p[2] <= cand[0] or cand[3] <= p[1] or p[3] <= cand[1]
                    for p in placed
                ):
                    rect = cand
                    placed.append(cand)
                    break
            if rect is None:
                continue
            x0, y0, x1, y1 = rect
            category = FIXTURE_CATEGORIES[int(rng.integers(len(FIXTURE_CATEGORIES)))]
            color = (25 + 20 * j, 95, 45) if category == "widget" else (45, 30 + 20 * j, 95)
            image[y0:y1, x0:x1] = color
            mask = np.zeros((size, size), dtype=bool)
            mask[y0:y1, x0:x1] = True
            objects.append(AnnotatedObject(category=category, box=BoundingBox(*rect)))
            masks.append(mask)
        ann = ImageAnnotation(
            image_id=f"img_{i:03d}", width=size, height=size, objects=tuple(objects)
        )
        records.append(
            DatasetRecord(
                image_id=ann.image_id,
                image=image,
                annotation=ann,
                masks=InstanceMaskSet(masks=tuple(masks)),
            )
        )
    return records


@pytest.fixture(scope="session")
def fixture_records() -> list[DatasetRecord]:
    return make_fixture_records()


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory) -> Path:
    """Synthetic VOC dataset on disk with bank, contexts, and a trained
    scorer produced through the CLI; layout:

        dataset/   bank/   contexts/   scorer.bin
    """
    root = tmp_path_factory.mktemp("pipeline")
    dataset_dir = root / "dataset"
    spec = SynthSpec(n_images=8, seed=5)
    records = generate_synthetic_dataset(spec, np.random.default_rng([5, 1]))
    write_voc_dataset(records, dataset_dir)

    assert cli_main(["build-bank", "--dataset", str(dataset_dir), "--out", str(root / "bank")]) == 0
    assert (
        cli_main(
            [
                "gen-contexts",
                "--dataset",
                str(dataset_dir),
                "--out",
                str(root / "contexts"),
                "--seed",
                "5",
            ]
        )
        == 0
    )
    assert (
        cli_main(
            [
                "train-scorer",
                "--contexts",
                str(root / "contexts"),
                "--out",
                str(root / "scorer.bin"),
                "--seed",
                "5",
                "--epochs",
                "40",
            ]
        )
        == 0
    )
    return root


def tree_bytes(root: Path) -> dict[str, bytes]:
    """Relative path -> content for every file under ``root``."""
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }
