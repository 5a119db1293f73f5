"""Seeded synthetic stand-ins for pristine and spliced overhead imagery.

Pristine images are multi-octave value noise tinted with an earth-tone
palette.  Spliced images paste one object (square, ellipse, or a polygon
silhouette) whose ground-truth bounding box has a maximum side drawn from
the configured size set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError
from ..nn_core import make_rng

SHAPES = ("square", "ellipse", "plane", "cloud")
BLEND_MODES = ("hard", "feather")

# earth-tone endpoints (low, high) per RGB channel
_PALETTES = np.array(
    [
        [[0.18, 0.22, 0.12], [0.55, 0.60, 0.38]],  # vegetation
        [[0.30, 0.26, 0.20], [0.72, 0.64, 0.50]],  # soil
        [[0.22, 0.24, 0.26], [0.62, 0.63, 0.62]],  # urban
        [[0.10, 0.18, 0.26], [0.40, 0.52, 0.58]],  # water / coast
    ]
)


def _fade(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(rng: np.random.Generator, height: int, width: int, cell: int) -> np.ndarray:
    """Smoothstep-interpolated lattice noise in [0, 1]."""
    # ceil so the last pixel plus a random phase (< 1 cell) stays inside the lattice
    gh, gw = -(-height // cell) + 2, -(-width // cell) + 2
    lattice = rng.random((gh, gw))
    y = np.arange(height) / cell + rng.random()
    x = np.arange(width) / cell + rng.random()
    y0, x0 = y.astype(int), x.astype(int)
    fy, fx = _fade(y - y0)[:, None], _fade(x - x0)[None, :]
    a = lattice[y0[:, None], x0[None, :]]
    b = lattice[y0[:, None], x0[None, :] + 1]
    c = lattice[y0[:, None] + 1, x0[None, :]]
    d = lattice[y0[:, None] + 1, x0[None, :] + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def terrain_texture(
    rng: np.random.Generator,
    height: int,
    width: int,
    cells=(64, 32, 16, 8),
    persistence: float = 0.5,
    grain: float = 0.004,
) -> np.ndarray:
    """Float RGB image in [0, 1] mimicking low-altitude terrain."""
    lum = np.zeros((height, width))
    total = 0.0
    amp = 1.0
    for cell in cells:
        lum += amp * value_noise(rng, height, width, cell)
        total += amp
        amp *= persistence
    lum /= total
    lum = np.clip((lum - 0.5) * 1.8 + 0.5, 0.0, 1.0)
    lo, hi = _PALETTES[rng.integers(len(_PALETTES))]
    img = lo + lum[..., None] * (hi - lo)
    # weakly decorrelated per-channel variation
    img += 0.04 * (value_noise(rng, height, width, cells[1])[..., None] - 0.5) * rng.uniform(-1, 1, 3)
    img += grain * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def _shape_fn(kind: str, rng: np.random.Generator):
    """Indicator on the unit square [-1, 1]^2."""
    if kind == "square":
        return lambda u, v: (np.abs(u) <= 1) & (np.abs(v) <= 1)
    if kind == "ellipse":
        ecc = rng.uniform(0.45, 1.0)
        return lambda u, v: u * u + (v / ecc) ** 2 <= 1
    if kind == "plane":
        # fuselage plus swept wings and tail
        def plane(u, v):
            body = (np.abs(u) <= 0.14) & (np.abs(v) <= 1)
            wings = (np.abs(v + 0.1 - 0.35 * np.abs(u)) <= 0.16) & (np.abs(u) <= 1)
            tail = (np.abs(v - 0.85 - 0.2 * np.abs(u)) <= 0.1) & (np.abs(u) <= 0.4)
            return body | wings | tail

        return plane
    if kind == "cloud":
        lobes = rng.uniform(-0.5, 0.5, (5, 2))
        radii = rng.uniform(0.35, 0.55, 5)

        def cloud(u, v):
            out = np.zeros(np.broadcast(u, v).shape, bool)
            for (cu, cv), r in zip(lobes, radii):
                out |= (u - cu) ** 2 + (v - cv) ** 2 <= r * r
            return out

        return cloud
    raise ConfigError(f"unknown object shape {kind!r}")


def object_alpha(rng: np.random.Generator, kind: str, size: int, angle_deg: float, feather: bool) -> np.ndarray:
    """Coverage map whose support has bounding-box max side exactly ``size``."""
    fn = _shape_fn(kind, rng)
    hi = max(4 * size, 64)
    grid = (np.arange(hi) + 0.5) / hi * 3.0 - 1.5
    X, Y = np.meshgrid(grid, grid)
    t = np.deg2rad(angle_deg)
    u = np.cos(t) * X + np.sin(t) * Y
    v = -np.sin(t) * X + np.cos(t) * Y
    fine = fn(u, v)
    rows, cols = np.flatnonzero(fine.any(1)), np.flatnonzero(fine.any(0))
    fine = fine[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    h, w = fine.shape
    scale = size / max(h, w)
    th, tw = (size, max(1, round(w * scale))) if h >= w else (max(1, round(h * scale)), size)
    cov = np.asarray(Image.fromarray(fine.astype(np.float32)).resize((tw, th), Image.BOX), dtype=np.float64)
    cov = np.clip(cov, 0.0, 1.0)
    support = cov > 0
    if not feather:
        return support.astype(np.float64)
    # soften the rim while keeping the interior opaque
    return np.where(support, np.clip(cov * 1.5, 0.35, 1.0), 0.0)


@dataclass
class SpliceSpec:
    shapes: tuple = SHAPES
    sizes: tuple = (16, 32, 64, 128, 256)
    rotation: tuple = (0.0, 360.0)
    blend: str = "hard"
    contrast: float = 0.35
    seed: int = 0

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.blend not in BLEND_MODES:
            raise ConfigError(f"blend must be one of {BLEND_MODES}")
        for s in self.shapes:
            if s not in SHAPES:
                raise ConfigError(f"unknown object shape {s!r}")
        if not self.sizes or min(self.sizes) <= 0:
            raise ConfigError("sizes must be positive")


def _object_texture(rng: np.random.Generator, size: int, base: np.ndarray, contrast: float) -> np.ndarray:
    """Object fill: a colour pushed away from the local background plus fine detail."""
    sign = np.where(base.mean() < 0.5, 1.0, -1.0)
    color = np.clip(base + sign * contrast + rng.uniform(-0.1, 0.1, 3), 0.0, 1.0)
    detail = value_noise(rng, size, size, 4)[..., None] - 0.5
    return np.clip(color + 0.25 * detail, 0.0, 1.0)


def splice_object(
    rng: np.random.Generator, image: np.ndarray, spec: SpliceSpec, size: int | None = None
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Paste one object into ``image``; returns (spliced, gt_mask, info)."""
    H, W, _ = image.shape
    sizes = [s for s in spec.sizes if s <= min(H, W)]
    if not sizes:
        raise ConfigError(f"no object size in {spec.sizes} fits a {H}x{W} image")
    size = int(rng.choice(sizes)) if size is None else size
    kind = spec.shapes[rng.integers(len(spec.shapes))]
    angle = float(rng.uniform(*spec.rotation))
    alpha = object_alpha(rng, kind, size, angle, spec.blend == "feather")
    h, w = alpha.shape
    y0 = int(rng.integers(0, H - h + 1))
    x0 = int(rng.integers(0, W - w + 1))
    region = image[y0 : y0 + h, x0 : x0 + w]
    obj = _object_texture(rng, size, region.mean(axis=(0, 1)), spec.contrast)[:h, :w]
    out = image.copy()
    a = alpha[..., None]
    out[y0 : y0 + h, x0 : x0 + w] = (1 - a) * region + a * obj
    mask = np.zeros((H, W), bool)
    mask[y0 : y0 + h, x0 : x0 + w] = alpha > 0
    info = {"shape": kind, "size": size, "angle": angle, "origin": [y0, x0], "bbox_shape": [h, w]}
    return out, mask, info


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate_synthetic_dataset(
    seed: int,
    n_pristine: int,
    n_spliced: int,
    spec: SpliceSpec,
    out_dir,
    image_size: int = 512,
) -> dict:
    """Write ``pristine/``, ``spliced/`` and ``masks/`` PNGs plus ``manifest.json``.

    Ground-truth masks are written for every image; pristine masks are empty.
    The output depends only on the arguments.
    """
    from .images import save_image

    out = Path(out_dir)
    for sub in ("pristine", "spliced", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    # independent stream for placement so textures do not depend on splice settings
    splice_rng = np.random.Generator(np.random.Philox([int(seed), int(spec.seed), 1]))
    manifest = {"seed": int(seed), "image_size": image_size, "pristine": [], "spliced": []}
    empty = np.zeros((image_size, image_size), bool)
    for i in range(n_pristine):
        name = f"pristine_{i:04d}.png"
        save_image(to_uint8(terrain_texture(rng, image_size, image_size)), out / "pristine" / name)
        save_image(empty, out / "masks" / name)
        manifest["pristine"].append({"file": name})
    for i in range(n_spliced):
        name = f"spliced_{i:04d}.png"
        base = terrain_texture(rng, image_size, image_size)
        img, mask, info = splice_object(splice_rng, base, spec)
        save_image(to_uint8(img), out / "spliced" / name)
        save_image(mask, out / "masks" / name)
        manifest["spliced"].append({"file": name, **info})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def pristine_tiles(seed: int, count: int, tile: int = 128) -> np.ndarray:
    """In-memory batch ``(count, tile, tile, 3)`` of pristine textures (8-bit quantized)."""
    rng = make_rng(seed)
    return np.stack([to_uint8(terrain_texture(rng, tile, tile)) / 255.0 for _ in range(count)])
