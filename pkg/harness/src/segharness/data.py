"""Dataset access: manifest-driven sample loading, normalization, tiling."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text())
    manifest["_root"] = str(path.parent)
    return manifest


def manifest_samples(manifest: dict, split: str | None = None,
                     defective_only: bool = False) -> list[dict]:
    """Image records from a generator manifest, optionally filtered."""
    out = []
    for im in manifest["images"]:
        if split is not None and im["split"] != split:
            continue
        if defective_only and not im["defective"]:
            continue
        out.append(im)
    return out


def load_pair(manifest: dict, record: dict):
    """(image float [0,255], mask int) for one manifest record."""
    root = Path(manifest["_root"])
    img = np.asarray(Image.open(root / record["image"]).convert("L"),
                     dtype=np.float64)
    mask = np.asarray(Image.open(root / record["label"]), dtype=np.int64)
    return img, mask


def normalize(image: np.ndarray) -> np.ndarray:
    """Grey [0, 255] to the [-1, 1] network input range."""
    return np.asarray(image, dtype=np.float32) / 127.5 - 1.0


def tiling_plan(height: int, width: int, grid: int = 3, multiple: int = 32):
    """Zero-pad plan splitting an image into a grid x grid tile matrix.

    Each padded dimension is divisible by grid * multiple so tiles match
    the network stride. The tiles partition the padded image: every pixel
    is covered exactly once.
    """
    unit = grid * multiple
    pad_h = -height % unit
    pad_w = -width % unit
    tile_h = (height + pad_h) // grid
    tile_w = (width + pad_w) // grid
    tiles = [(r * tile_h, c * tile_w) for r in range(grid) for c in range(grid)]
    return {"pad_h": pad_h, "pad_w": pad_w, "tile_h": tile_h, "tile_w": tile_w,
            "tiles": tiles}
