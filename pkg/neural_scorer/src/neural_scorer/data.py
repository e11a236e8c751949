"""Reader for context dataset directories.

The layout is the one the augmentation pipeline's ``gen-contexts`` command
writes: ``samples/*.png`` RGB images, a ``labels.csv`` with columns
``file,label,x0,y0,x1,y1``, and a ``classes.json`` carrying the category
list and the background label index (always last).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class ContextItem:
    """One sample: image file, class label, and the masked box it encodes."""

    path: Path
    label: int
    mask: tuple[int, int, int, int]


@dataclass(frozen=True)
class ContextDirectory:
    """A context dataset directory, listed but not yet loaded into memory."""

    root: Path
    items: tuple[ContextItem, ...]
    categories: tuple[str, ...]

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.categories + ("background",)

    @property
    def n_classes(self) -> int:
        return len(self.categories) + 1

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def load(cls, root: Path) -> "ContextDirectory":
        root = Path(root)
        classes_path = root / "classes.json"
        labels_path = root / "labels.csv"
        if not classes_path.exists():
            raise FileNotFoundError(f"no classes.json under {root}")
        if not labels_path.exists():
            raise FileNotFoundError(f"no labels.csv under {root}")
        meta = json.loads(classes_path.read_text())
        categories = tuple(meta["categories"])
        if not categories:
            raise ValueError(f"{classes_path}: empty category list")
        background = meta.get("background_index")
        if background != len(categories):
            raise ValueError(
                f"{classes_path}: background_index {background!r} is not the "
                f"last label ({len(categories)})"
            )

        items = []
        with labels_path.open(newline="") as fh:
            for i, row in enumerate(csv.DictReader(fh)):
                try:
                    label = int(row["label"])
                    mask = tuple(int(row[k]) for k in ("x0", "y0", "x1", "y1"))
                    path = root / row["file"]
                except (KeyError, TypeError, ValueError) as e:
                    raise ValueError(f"{labels_path}: bad row {i}: {e}") from e
                if not 0 <= label <= len(categories):
                    raise ValueError(
                        f"{labels_path}: row {i} label {label} outside "
                        f"[0, {len(categories)}]"
                    )
                if not path.exists():
                    raise FileNotFoundError(f"{labels_path}: row {i}: missing {path}")
                items.append(ContextItem(path=path, label=label, mask=mask))
        if not items:
            raise ValueError(f"{labels_path}: no samples listed")
        return cls(root=root, items=tuple(items), categories=categories)

    def image(self, index: int) -> np.ndarray:
        with Image.open(self.items[index].path) as im:
            return np.asarray(im.convert("RGB"))

    def labels(self) -> np.ndarray:
        return np.asarray([item.label for item in self.items], dtype=np.int64)

    def load_images(self) -> np.ndarray:
        """All samples as one uint8 array; samples must share a size."""
        images = [self.image(i) for i in range(len(self.items))]
        shapes = {im.shape for im in images}
        if len(shapes) != 1:
            raise ValueError(f"samples disagree on shape: {sorted(shapes)}")
        return np.stack(images)
