"""Pascal-VOC dataset I/O: annotation XML, instance masks, augmented output.

Annotations use the VOC dialect (filename, size, object/name/difficult/bndbox).
Coordinates are converted between VOC's 1-based closed convention on disk and
0-based half-open boxes in memory. Instance masks are paletted PNGs where
pixel value k marks the k-th annotated object, 0 is background and 255 void.
"""

from __future__ import annotations

import io
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image

from .geometry import BoundingBox, iround

if TYPE_CHECKING:
    from .augment import AugmentedRecord

VOID_VALUE = 255


class AnnotationError(ValueError):
    """Malformed, incomplete, or inconsistent dataset content."""


@dataclass(frozen=True)
class AnnotatedObject:
    category: str
    box: BoundingBox
    difficult: bool = False


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: str
    width: int
    height: int
    objects: tuple[AnnotatedObject, ...] = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise AnnotationError(
                f"{self.image_id}: image size {self.width}x{self.height}"
            )
        for i, obj in enumerate(self.objects):
            if not obj.box.within_image(self.width, self.height):
                raise AnnotationError(
                    f"{self.image_id}: object {i} box {obj.box.as_tuple()} "
                    f"outside {self.width}x{self.height} image"
                )

    @property
    def boxes(self) -> list[BoundingBox]:
        return [o.box for o in self.objects]

    @property
    def categories(self) -> list[str]:
        return [o.category for o in self.objects]


@dataclass(frozen=True)
class InstanceMaskSet:
    """Per-object binary masks, index-aligned with the annotation's objects."""

    masks: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.masks[i]


@dataclass
class DatasetRecord:
    """One image with its annotation and (optionally) instance masks."""

    image_id: str
    image: np.ndarray
    annotation: ImageAnnotation
    masks: InstanceMaskSet | None = None


def _req_text(elem: ET.Element, tag: str, context: str) -> str:
    child = elem.find(tag)
    if child is None or child.text is None:
        raise AnnotationError(f"missing <{tag}> in {context}")
    return child.text.strip()


def parse_annotation(xml_bytes: bytes) -> ImageAnnotation:
    """Parse one VOC annotation file into a 0-based half-open ImageAnnotation."""
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as e:
        line, col = e.position
        raise AnnotationError(f"malformed annotation XML at line {line}: {e.msg}") from e

    filename = _req_text(root, "filename", "annotation")
    image_id = Path(filename).stem
    size = root.find("size")
    if size is None:
        raise AnnotationError("missing <size> in annotation")
    width = int(float(_req_text(size, "width", "size")))
    height = int(float(_req_text(size, "height", "size")))

    objects = []
    for i, obj in enumerate(root.findall("object")):
        ctx = f"object {i}"
        category = _req_text(obj, "name", ctx)
        difficult = _req_text(obj, "difficult", ctx) == "1" if obj.find("difficult") is not None else False
        bnd = obj.find("bndbox")
        if bnd is None:
            raise AnnotationError(f"missing <bndbox> in {ctx}")
        xmin = float(_req_text(bnd, "xmin", ctx))
        ymin = float(_req_text(bnd, "ymin", ctx))
        xmax = float(_req_text(bnd, "xmax", ctx))
        ymax = float(_req_text(bnd, "ymax", ctx))
        # VOC stores 1-based closed coordinates; in memory we use 0-based half-open.
        try:
            box = BoundingBox(xmin - 1, ymin - 1, xmax, ymax)
        except ValueError as e:
            raise AnnotationError(f"{ctx}: {e}") from e
        objects.append(AnnotatedObject(category=category, box=box, difficult=difficult))

    return ImageAnnotation(
        image_id=image_id, width=width, height=height, objects=tuple(objects)
    )


def annotation_to_xml(ann: ImageAnnotation, image_ext: str = ".png") -> bytes:
    """Serialize an annotation back into the dialect parse_annotation reads."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = ann.image_id + image_ext
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(ann.width)
    ET.SubElement(size, "height").text = str(ann.height)
    ET.SubElement(size, "depth").text = "3"
    for obj in ann.objects:
        o = ET.SubElement(root, "object")
        ET.SubElement(o, "name").text = obj.category
        ET.SubElement(o, "difficult").text = "1" if obj.difficult else "0"
        bnd = ET.SubElement(o, "bndbox")
        x0, y0, x1, y1 = obj.box.round()
        ET.SubElement(bnd, "xmin").text = str(x0 + 1)
        ET.SubElement(bnd, "ymin").text = str(y0 + 1)
        ET.SubElement(bnd, "xmax").text = str(x1)
        ET.SubElement(bnd, "ymax").text = str(y1)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=False)


def decode_instance_mask(png_bytes: bytes, ann: ImageAnnotation) -> InstanceMaskSet:
    """Decode a paletted instance-mask PNG into per-object binary masks.

    Pixel value k belongs to the k-th annotated object (document order);
    0 is background and 255 is void (assigned to no object).
    """
    with Image.open(io.BytesIO(png_bytes)) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise AnnotationError(f"instance mask must be single-channel, got shape {arr.shape}")
    if arr.shape != (ann.height, ann.width):
        raise AnnotationError(
            f"mask size {arr.shape[1]}x{arr.shape[0]} does not match "
            f"annotation {ann.width}x{ann.height}"
        )
    n = len(ann.objects)
    present = np.unique(arr)
    for v in present:
        if v not in (0, VOID_VALUE) and v > n:
            raise AnnotationError(f"unmatched instance id {int(v)} (only {n} objects)")
    masks = []
    for k in range(1, n + 1):
        mask = arr == k
        if not mask.any():
            raise AnnotationError(f"empty mask for object {k - 1}")
        _check_mask_inside_box(mask, ann, k - 1)
        masks.append(mask)
    return InstanceMaskSet(masks=tuple(masks))


def _check_mask_inside_box(mask: np.ndarray, ann: ImageAnnotation, index: int, slack: int = 2):
    ys, xs = np.nonzero(mask)
    box = ann.objects[index].box
    if (
        xs.min() < box.x0 - slack
        or ys.min() < box.y0 - slack
        or xs.max() + 1 > box.x1 + slack
        or ys.max() + 1 > box.y1 + slack
    ):
        raise AnnotationError(
            f"mask for object {index} extends beyond its box by more than {slack} px"
        )


def encode_instance_mask(masks: InstanceMaskSet, width: int, height: int) -> bytes:
    """Inverse of decode_instance_mask; later objects overwrite earlier ones."""
    arr = np.zeros((height, width), dtype=np.uint8)
    for k, mask in enumerate(masks.masks, start=1):
        arr[mask] = k
    im = Image.fromarray(arr, mode="P")
    palette = [0] * 768
    for k in range(1, len(masks.masks) + 1):
        palette[3 * k : 3 * k + 3] = [(k * 67) % 256, (k * 113) % 256, (k * 199) % 256]
    im.putpalette(palette)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(image: np.ndarray, path: Path):
    Image.fromarray(np.ascontiguousarray(image), mode="RGB").save(path, format="PNG")


class VocDataset:
    """A VOC-layout dataset directory (Annotations/, JPEGImages/, SegmentationObject/)."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.ann_dir = self.root / "Annotations"
        self.img_dir = self.root / "JPEGImages"
        self.seg_dir = self.root / "SegmentationObject"
        if not self.ann_dir.is_dir():
            raise FileNotFoundError(f"no Annotations/ directory under {self.root}")

    def image_ids(self) -> list[str]:
        return sorted(p.stem for p in self.ann_dir.glob("*.xml"))

    def _image_path(self, image_id: str) -> Path:
        for ext in (".png", ".jpg", ".jpeg"):
            p = self.img_dir / (image_id + ext)
            if p.exists():
                return p
        raise FileNotFoundError(f"no image file for id {image_id!r} under {self.img_dir}")

    def load_annotation(self, image_id: str) -> ImageAnnotation:
        return parse_annotation((self.ann_dir / (image_id + ".xml")).read_bytes())

    def load_record(self, image_id: str, with_masks: bool = True) -> DatasetRecord:
        ann = self.load_annotation(image_id)
        image = load_image(self._image_path(image_id))
        if image.shape[:2] != (ann.height, ann.width):
            raise AnnotationError(
                f"{image_id}: image is {image.shape[1]}x{image.shape[0]} but "
                f"annotation says {ann.width}x{ann.height}"
            )
        masks = None
        mask_path = self.seg_dir / (image_id + ".png")
        if with_masks and mask_path.exists():
            masks = decode_instance_mask(mask_path.read_bytes(), ann)
        return DatasetRecord(image_id=image_id, image=image, annotation=ann, masks=masks)

    def load_all(self, with_masks: bool = True) -> list[DatasetRecord]:
        return [self.load_record(i, with_masks) for i in self.image_ids()]


def write_voc_dataset(records: list[DatasetRecord], out_dir: Path):
    """Write records as a VOC-layout directory tree (images, annotations,
    and instance masks for records that have them)."""
    out_dir = Path(out_dir)
    ann_dir = out_dir / "Annotations"
    img_dir = out_dir / "JPEGImages"
    seg_dir = out_dir / "SegmentationObject"
    for d in (ann_dir, img_dir, seg_dir):
        d.mkdir(parents=True, exist_ok=True)
    for rec in records:
        ann = rec.annotation
        save_image(rec.image, img_dir / (rec.image_id + ".png"))
        (ann_dir / (rec.image_id + ".xml")).write_bytes(annotation_to_xml(ann))
        if rec.masks is not None and len(rec.masks):
            (seg_dir / (rec.image_id + ".png")).write_bytes(
                encode_instance_mask(rec.masks, ann.width, ann.height)
            )


def write_augmented(rec: "AugmentedRecord", out_dir: Path) -> dict[str, Path]:
    """Write one augmented record as VOC image + annotation + provenance sidecar.

    The output tree mirrors the VOC layout so augmented sets parse like
    originals; parse_annotation round-trips the written XML.
    """
    ann = rec.annotation
    if rec.image.shape[:2] != (ann.height, ann.width):
        raise AnnotationError(
            f"{ann.image_id}: record image {rec.image.shape[1]}x{rec.image.shape[0]} "
            f"does not match annotation {ann.width}x{ann.height}"
        )
    out_dir = Path(out_dir)
    img_dir = out_dir / "JPEGImages"
    ann_dir = out_dir / "Annotations"
    prov_dir = out_dir / "provenance"
    for d in (img_dir, ann_dir, prov_dir):
        d.mkdir(parents=True, exist_ok=True)

    paths = {
        "image": img_dir / (ann.image_id + ".png"),
        "annotation": ann_dir / (ann.image_id + ".xml"),
        "provenance": prov_dir / (ann.image_id + ".json"),
    }
    save_image(rec.image, paths["image"])
    paths["annotation"].write_bytes(annotation_to_xml(ann))
    paths["provenance"].write_text(json.dumps(rec.provenance, indent=2, sort_keys=True))
    return paths
