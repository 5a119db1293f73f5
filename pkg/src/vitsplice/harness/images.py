"""Lossless image, mask and heatmap files.

PNG goes through ``pypng`` so 8- and 16-bit grey/RGB data round-trip
exactly; portable bitmaps (``.pbm``) go through Pillow.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import png
from PIL import Image, UnidentifiedImageError

from ..errors import DataError

_PNG_MODES = {1: "L", 2: "LA", 3: "RGB", 4: "RGBA"}


def load_image(path) -> np.ndarray:
    """Read a PNG as uint8/uint16 ``(H, W)`` or ``(H, W, C)``, or a PBM as bool."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".png":
        try:
            width, height, rows, info = png.Reader(filename=str(path)).read()
            dtype = np.uint16 if info["bitdepth"] > 8 else np.uint8
            data = np.vstack([np.asarray(r, dtype=dtype) for r in rows])
        except (png.Error, ValueError, EOFError) as exc:
            raise DataError(f"cannot decode {path}: {exc}") from exc
        planes = info["planes"]
        if info.get("palette"):
            raise DataError(f"palette PNGs are not supported: {path}")
        data = data.reshape(height, width, planes)
        return data[..., 0] if planes == 1 else data
    if suffix == ".pbm":
        try:
            with Image.open(path) as im:
                im.load()
                return np.asarray(im.convert("1"), dtype=bool)
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise DataError(f"cannot decode {path}: {exc}") from exc
    raise DataError(f"unsupported image format {suffix!r} ({path})")


def save_image(array, path) -> None:
    """Write uint8/uint16 images as PNG; bool masks as PBM (1-bit) or 8-bit PNG (0/255)."""
    path = Path(path)
    a = np.asarray(array)
    suffix = path.suffix.lower()
    if a.dtype == bool:
        if suffix == ".pbm":
            Image.fromarray(a).save(path)
            return
        a = a.astype(np.uint8) * 255
    if suffix != ".png":
        raise DataError(f"unsupported output format {suffix!r} for dtype {a.dtype}")
    if a.dtype not in (np.uint8, np.uint16):
        raise DataError(f"PNG output needs uint8, uint16 or bool data, got {a.dtype}")
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or a.shape[2] not in _PNG_MODES:
        raise DataError(f"cannot store array of shape {np.asarray(array).shape} as PNG")
    h, w, c = a.shape
    depth = 16 if a.dtype == np.uint16 else 8
    mode = f"{_PNG_MODES[c]};{depth}"
    with open(path, "wb") as fh:
        png.from_array(a.reshape(h, w * c), mode).write(fh)


def to_unit(image: np.ndarray) -> np.ndarray:
    """Map 8- or 16-bit data linearly to float64 in [0, 1]; RGB only."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        out = img / 255.0
    elif img.dtype == np.uint16:
        out = img / 65535.0
    else:
        raise DataError(f"expected 8- or 16-bit image data, got {img.dtype}")
    if out.ndim == 2:
        out = np.repeat(out[..., None], 3, axis=2)
    if out.shape[2] == 4:
        out = out[..., :3]
    if out.shape[2] != 3:
        raise DataError(f"expected a grey or RGB image, got {out.shape[2]} channels")
    return out


def save_heatmap(heatmap: np.ndarray, path) -> dict:
    """Write a 16-bit min-max scaled PNG plus a ``.json`` sidecar with the scale."""
    path = Path(path)
    h = np.asarray(heatmap, dtype=np.float64)
    lo, hi = float(h.min()), float(h.max())
    span = hi - lo
    scaled = np.zeros(h.shape) if span == 0 else (h - lo) / span
    save_image(np.round(scaled * 65535.0).astype(np.uint16), path)
    meta = {"min": lo, "max": hi, "levels": 65535}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return meta


def load_heatmap(path) -> np.ndarray:
    """Invert :func:`save_heatmap` (exact to one 16-bit level of the range)."""
    path = Path(path)
    side = path.with_suffix(".json")
    if not side.exists():
        raise DataError(f"missing heatmap scale sidecar {side}")
    meta = json.loads(side.read_text())
    q = load_image(path).astype(np.float64) / meta["levels"]
    return meta["min"] + q * (meta["max"] - meta["min"])


def load_mask(path) -> np.ndarray:
    m = load_image(path)
    if m.dtype == bool:
        return m
    if m.ndim == 3:
        m = m[..., 0]
    return m > 0
