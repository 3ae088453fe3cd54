"""Reading and writing 8-bit images, masks, reports and summary tables."""

from __future__ import annotations

import csv
import hashlib
import json
import re
from collections import defaultdict
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "IMAGE_SUFFIXES",
    "read_gray",
    "write_png",
    "find_pairs",
    "group_frames",
    "write_json",
    "read_json",
    "write_csv",
    "read_csv",
    "sha256_file",
]

IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".bmp", ".pgm")
_FRAME_RE = re.compile(r"^(?P<stem>.+)_f(?P<frame>\d+)$")


def read_gray(path) -> np.ndarray:
    """Load a single-channel 8-bit raster as a ``uint8`` array."""
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            im = im.convert("L")
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError(f"{path}: values exceed the 8-bit range")
    return arr.astype(np.uint8)


def write_png(array, path):
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def _by_stem(directory) -> dict:
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            out.setdefault(p.stem, p)
    return out


def find_pairs(images_dir, masks_dir) -> tuple[list, list]:
    """Match image and mask files by filename stem.

    Returns ``(pairs, unpaired)`` where ``pairs`` is a sorted list of
    ``(stem, image_path, mask_path)`` and ``unpaired`` lists stems found
    in only one directory.
    """
    images, masks = _by_stem(images_dir), _by_stem(masks_dir)
    pairs = [(s, images[s], masks[s]) for s in sorted(set(images) & set(masks))]
    unpaired = sorted(set(images) ^ set(masks))
    return pairs, unpaired


def group_frames(pairs) -> dict:
    """Group ``<id>_f<frame>`` stems into ordered multi-frame lists by ``<id>``.

    Stems without a frame suffix form single-frame groups.
    """
    groups = defaultdict(list)
    for stem, img, mask in pairs:
        m = _FRAME_RE.match(stem)
        key, frame = (m["stem"], int(m["frame"])) if m else (stem, 0)
        groups[key].append((frame, img, mask))
    return {k: [(img, mask) for _, img, mask in sorted(v)] for k, v in sorted(groups.items())}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path):
    """Write indented JSON; NaN and infinities become ``null``."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def write_csv(rows, columns, path, header_comment: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])


def read_csv(path) -> list[dict]:
    """Read a CSV, skipping ``#`` comment lines."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
