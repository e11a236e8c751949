"""Rendered artifacts: benchmark report files and augmentation previews.

Writers here produce three kinds of files: a JSON summary with a fixed
schema, CSV tables for spreadsheet-friendly inspection, and matplotlib
figures rendered straight to PNG (no interactive backend required).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.patches as mpatches
import matplotlib.pyplot as plt

from .augment import AugmentedRecord
from .geometry import BoundingBox
from .scorer import BuiltinScorer
from .synth import BenchmarkResult, SynthSpec, validate_report


def write_benchmark_report(
    result: BenchmarkResult, spec: SynthSpec, out_json: Path
) -> dict[str, Path]:
    """Write the report JSON plus a placements CSV and a summary figure.

    The CSV and PNG live next to the JSON, named after it.
    """
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    out_csv = out_json.with_suffix(".csv")
    out_png = out_json.with_suffix(".png")

    validate_report(result.report)
    out_json.write_text(json.dumps(result.report, indent=2, sort_keys=True))

    with out_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "mode", "category", "x0", "y0", "x1", "y1", "consistent"]
        )
        for mode, records in (
            ("context", result.context_records),
            ("random", result.random_records),
        ):
            for rec in records:
                for paste in rec.provenance["pastes"]:
                    box = BoundingBox(*paste["box"])
                    rule = spec.category(paste["category"]).rule
                    ok = rule.contains_center(box.center[1], spec.image_size)
                    writer.writerow(
                        [
                            rec.image_id,
                            mode,
                            paste["category"],
                            *[int(v) for v in paste["box"]],
                            int(ok),
                        ]
                    )

    _render_benchmark_figure(result, out_png)
    return {"json": out_json, "csv": out_csv, "figure": out_png}


def _render_benchmark_figure(result: BenchmarkResult, out_png: Path):
    fig, (ax_bar, ax_curve) = plt.subplots(1, 2, figsize=(10, 4))

    names = ["context", "random"]
    values = [
        result.report["context_consistency"],
        result.report["random_consistency"],
    ]
    counts = [len(result.context_placements), len(result.random_placements)]
    bars = ax_bar.bar(names, values, color=["#2a9d8f", "#e76f51"])
    for bar, value, count in zip(bars, values, counts):
        ax_bar.annotate(
            f"{value:.2f} (n={count})",
            (bar.get_x() + bar.get_width() / 2, value),
            ha="center",
            va="bottom",
        )
    ax_bar.set_ylim(0, 1.05)
    ax_bar.set_ylabel("placement consistency")
    ax_bar.set_title("Context vs. random placement")

    history = result.scorer.history
    if history:
        epochs = [h.epoch for h in history]
        ax_curve.plot(epochs, [h.train_loss for h in history], label="train")
        ax_curve.plot(epochs, [h.val_loss for h in history], label="validation")
        ax_curve.set_xlabel("epoch")
        ax_curve.set_ylabel("loss")
        ax_curve.set_title(
            f"Scorer training (val acc {result.report['scorer_val_accuracy']:.2f})"
        )
        ax_curve.legend()
    else:
        ax_curve.axis("off")
        ax_curve.text(0.5, 0.5, "no training history", ha="center", va="center")

    fig.tight_layout()
    fig.savefig(out_png, dpi=100)
    plt.close(fig)


def render_training_curve(scorer: BuiltinScorer, out_png: Path):
    """Loss-vs-epoch figure for a trained builtin scorer."""
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    if scorer.history:
        epochs = [h.epoch for h in scorer.history]
        ax.plot(epochs, [h.train_loss for h in scorer.history], label="train")
        ax.plot(epochs, [h.val_loss for h in scorer.history], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
    else:
        ax.axis("off")
        ax.text(0.5, 0.5, "no training history", ha="center", va="center")
    ax.set_title("Scorer training curve")
    fig.tight_layout()
    fig.savefig(out_png, dpi=100)
    plt.close(fig)


def render_previews(
    records: Sequence[AugmentedRecord], out_dir: Path, limit: int | None = None
) -> list[Path]:
    """One annotated figure per augmented record.

    Original boxes are drawn dashed white, pasted boxes solid green with
    their category and blend method.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records[: limit if limit is not None else len(records)]:
        n_pasted = len(rec.provenance["pastes"])
        objects = rec.annotation.objects
        originals = objects[: len(objects) - n_pasted]

        fig, ax = plt.subplots(figsize=(6, 6))
        ax.imshow(rec.image)
        for obj in originals:
            x0, y0, x1, y1 = obj.box.as_tuple()
            ax.add_patch(
                mpatches.Rectangle(
                    (x0, y0),
                    x1 - x0,
                    y1 - y0,
                    fill=False,
                    edgecolor="white",
                    linestyle="--",
                    linewidth=1.2,
                )
            )
        for paste in rec.provenance["pastes"]:
            x0, y0, x1, y1 = paste["box"]
            ax.add_patch(
                mpatches.Rectangle(
                    (x0, y0),
                    x1 - x0,
                    y1 - y0,
                    fill=False,
                    edgecolor="#7CFC00",
                    linewidth=1.8,
                )
            )
            ax.annotate(
                f"{paste['category']} ({paste['blend']})",
                (x0, max(0, y0 - 4)),
                color="#7CFC00",
                fontsize=9,
            )
        ax.set_title(f"{rec.image_id} [{rec.provenance['mode']}]")
        ax.axis("off")
        path = out_dir / f"{rec.image_id}_preview.png"
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
