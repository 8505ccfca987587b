"""YOLO-style label files, PNG images and dataset directories.

A dataset directory holds ``images/<stem>.png`` and ``labels/<stem>.txt``.
Label lines are ``class_id cx cy w h`` normalised to ``[0, 1]``; prediction
files append a confidence column.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .augment import LabeledImage
from .losses import BBox


class LabelError(ValueError):
    """Malformed label content; the message carries the line number."""


def parse_label_file(text: str, image_w: float, image_h: float, expect_scores: bool = False) -> list[tuple]:
    """Parse label text into ``(class_id, BBox)`` or ``(class_id, BBox, score)`` tuples."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    want = 6 if expect_scores else 5
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if expect_scores and len(parts) == 5:
            raise LabelError(f"line {lineno}: score column missing")
        if len(parts) != want:
            raise LabelError(f"line {lineno}: expected {want} fields, got {len(parts)}")
        try:
            cls = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise LabelError(f"line {lineno}: non-numeric field in {line!r}") from None
        if cls < 0:
            raise LabelError(f"line {lineno}: negative class id {cls}")
        names = ("cx", "cy", "w", "h", "score")
        for name, v in zip(names, vals):
            if not 0.0 <= v <= 1.0:
                raise LabelError(f"line {lineno}: {name}={v} outside [0, 1]")
        cx, cy, w, h = vals[:4]
        box = BBox((cx - w / 2) * image_w, (cy - h / 2) * image_h,
                   (cx + w / 2) * image_w, (cy + h / 2) * image_h)
        records.append((cls, box, vals[4]) if expect_scores else (cls, box))
    return records


def serialize_label_file(records: Iterable[tuple], image_w: float, image_h: float) -> str:
    """Inverse of :func:`parse_label_file`, six decimals per field."""
    lines = []
    for rec in records:
        cls, box = int(rec[0]), BBox.of(rec[1])
        if box.x1 < 0 or box.y1 < 0 or box.x2 > image_w or box.y2 > image_h:
            raise LabelError(f"box {tuple(box)} lies outside the {image_w}x{image_h} image")
        cx, cy = box.center
        fields_ = [cx / image_w, cy / image_h, box.width / image_w, box.height / image_h]
        if len(rec) > 2:
            fields_.append(float(rec[2]))
        lines.append(f"{cls} " + " ".join(f"{v:.6f}" for v in fields_))
    return "".join(line + "\n" for line in lines)


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_image(path: Path, img: np.ndarray):
    arr = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")


def image_size(path: Path) -> tuple[int, int]:
    """``(width, height)`` without decoding pixels."""
    with Image.open(path) as im:
        return im.size


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dataset_stems(root: Path) -> list[str]:
    """Sorted stems of a dataset directory; image and label sets must agree."""
    root = Path(root)
    img_dir, lbl_dir = root / "images", root / "labels"
    if not img_dir.is_dir() or not lbl_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain images/ and labels/ directories")
    imgs = {p.stem for p in img_dir.glob("*.png")}
    lbls = {p.stem for p in lbl_dir.glob("*.txt")}
    if imgs != lbls:
        missing = sorted(imgs ^ lbls)[:5]
        raise LabelError(f"images/ and labels/ disagree; unpaired stems include {missing}")
    if not imgs:
        raise LabelError(f"no images found in {img_dir}")
    return sorted(imgs)


def load_labeled_image(root: Path, stem: str) -> LabeledImage:
    root = Path(root)
    img = read_image(root / "images" / f"{stem}.png")
    h, w = img.shape[:2]
    try:
        recs = parse_label_file((root / "labels" / f"{stem}.txt").read_text(), w, h)
    except LabelError as e:
        raise LabelError(f"{stem}.txt: {e}") from None
    boxes = np.array([tuple(b) for _, b in recs], dtype=np.float64).reshape(-1, 4)
    # centre/size form can poke a hair past the border
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0, w)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0, h)
    return LabeledImage(img, boxes, [c for c, _ in recs])


def load_dataset(root: Path) -> tuple[list[str], list[LabeledImage]]:
    stems = dataset_stems(root)
    return stems, [load_labeled_image(root, s) for s in stems]


def save_labeled_image(root: Path, name: str, sample: LabeledImage):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    write_image(root / "images" / f"{name}.png", sample.image)
    text = serialize_label_file(zip(sample.classes, sample.boxes), sample.width, sample.height)
    (root / "labels" / f"{name}.txt").write_text(text)


def read_label_dir(label_dir: Path, expect_scores: bool = False,
                   sizes: dict[str, tuple[int, int]] | None = None) -> dict[str, list[tuple]]:
    """All ``*.txt`` files in a directory keyed by stem.

    Boxes come back in pixels when ``sizes`` maps stems to ``(w, h)``, and in
    normalised units otherwise.
    """
    label_dir = Path(label_dir)
    if not label_dir.is_dir():
        raise FileNotFoundError(f"label directory {label_dir} does not exist")
    out = {}
    for p in sorted(label_dir.glob("*.txt")):
        w, h = (sizes or {}).get(p.stem, (1, 1))
        try:
            out[p.stem] = parse_label_file(p.read_text(), w, h, expect_scores)
        except LabelError as e:
            raise LabelError(f"{p.name}: {e}") from None
    return out


def box_shapes(records: Sequence[tuple]) -> np.ndarray:
    return np.array([(r[1].width, r[1].height) for r in records], dtype=np.float64).reshape(-1, 2)
