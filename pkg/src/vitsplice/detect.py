"""Residual heatmaps, thresholding and tiled detection over large images."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TilingError
from .vit_recon import ModelParams, forward_reconstruct

LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
LAPLACIAN_8 = np.array([[1.0, 1.0, 1.0], [1.0, -8.0, 1.0], [1.0, 1.0, 1.0]])
_KERNELS = {4: LAPLACIAN_4, 8: LAPLACIAN_8}


def laplacian(image: np.ndarray, neighbors: int = 4) -> np.ndarray:
    """Per-channel 3x3 Laplacian with reflect-padded borders.

    Accepts ``(H, W)`` or ``(H, W, C)``; output has the input's shape.
    """
    if neighbors not in _KERNELS:
        raise ConfigError("Laplacian neighbors must be 4 or 8")
    kernel = _KERNELS[neighbors]
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ShapeError(f"expected (H, W) or (H, W, C) image, got {img.shape}")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ShapeError(f"Laplacian needs at least 3x3 pixels, got {img.shape[:2]}")
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(img, pad, mode="reflect")
    H, W = img.shape[:2]
    out = np.zeros_like(img)
    # kernel is symmetric, so correlation == convolution
    for dy in range(3):
        for dx in range(3):
            w = kernel[dy, dx]
            if w:
                out += w * p[dy : dy + H, dx : dx + W]
    return out


def residual_heatmap(image: np.ndarray, recon: np.ndarray, neighbors: int = 4) -> np.ndarray:
    """Average of the channel-mean absolute residual and the channel-mean
    absolute residual between the Laplacian-filtered images."""
    I = np.asarray(image, dtype=np.float64)
    R = np.asarray(recon, dtype=np.float64)
    if I.shape != R.shape:
        raise ShapeError(f"image {I.shape} and reconstruction {R.shape} differ")
    if I.ndim == 2:
        I, R = I[..., None], R[..., None]
    direct = np.abs(I - R).mean(axis=-1)
    edges = np.abs(laplacian(I, neighbors) - laplacian(R, neighbors)).mean(axis=-1)
    return 0.5 * (direct + edges)


@dataclass(frozen=True)
class ThresholdPolicy:
    """``kind`` is ``"fixed"`` (value = tau), ``"quantile"`` (value = q) or ``"otsu"``."""

    kind: str = "quantile"
    value: float = 0.99

    def __post_init__(self):
        if self.kind not in ("fixed", "quantile", "otsu"):
            raise ConfigError(f"unknown threshold policy {self.kind!r}")
        if self.kind == "quantile" and not 0.0 <= self.value <= 1.0:
            raise ConfigError("quantile must lie in [0, 1]")

    def describe(self) -> dict:
        return {"kind": self.kind, "value": self.value}


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Histogram threshold maximizing between-class variance."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return lo
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)
    w1 = w0[-1] - w0
    s0 = np.cumsum(counts * centers)
    mu0 = s0 / np.maximum(w0, 1)
    mu1 = (s0[-1] - s0) / np.maximum(w1, 1)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return float(edges[int(np.argmax(between[:-1])) + 1])


def threshold_mask(heatmap: np.ndarray, policy: ThresholdPolicy = ThresholdPolicy()) -> tuple[np.ndarray, float]:
    """Return ``(heatmap > tau, tau)`` where tau is realized from ``policy``."""
    h = np.asarray(heatmap, dtype=np.float64)
    if h.size == 0:
        raise ShapeError("cannot threshold an empty heatmap")
    if policy.kind == "fixed":
        tau = float(policy.value)
    elif policy.kind == "quantile":
        tau = float(np.quantile(h, policy.value))
    else:
        tau = otsu_threshold(h)
    return h > tau, tau


@dataclass(frozen=True)
class TileLayout:
    height: int
    width: int
    tile: int = 128
    stride: int = 128
    origins: tuple = field(init=False)

    def __post_init__(self):
        if self.stride <= 0 or self.stride > self.tile:
            raise ConfigError("stride must lie in [1, tile]")
        if self.height < self.tile or self.width < self.tile:
            raise TilingError(
                f"image {self.height}x{self.width} is smaller than the {self.tile}px tile; pad it to at least {self.tile}x{self.tile}"
            )
        ys, xs = self._axis(self.height), self._axis(self.width)
        object.__setattr__(self, "origins", tuple((y, x) for y in ys for x in xs))

    def _axis(self, n: int) -> list[int]:
        starts = list(range(0, n - self.tile + 1, self.stride))
        # remainder: anchor one more tile at the far edge
        if starts[-1] + self.tile < n:
            starts.append(n - self.tile)
        return starts

    def coverage(self) -> np.ndarray:
        counts = np.zeros((self.height, self.width), np.int64)
        for y, x in self.origins:
            counts[y : y + self.tile, x : x + self.tile] += 1
        return counts


@dataclass
class Detection:
    heatmap: np.ndarray
    mask: np.ndarray
    threshold: float
    policy: ThresholdPolicy
    reconstruction: np.ndarray | None = None

    def metadata(self) -> dict:
        return {"policy": self.policy.describe(), "threshold": self.threshold}


def tile_and_detect(
    image: np.ndarray,
    params: ModelParams,
    layout: TileLayout | None = None,
    policy: ThresholdPolicy = ThresholdPolicy(),
    neighbors: int = 4,
    batch_size: int = 16,
) -> Detection:
    """Reconstruct every tile, stitch per-tile heatmaps, threshold globally.

    Overlapping pixels are averaged; tiles are processed and accumulated in
    layout order so results are reproducible.
    """
    img = np.asarray(image, dtype=np.float64)
    tile = params.cfg.image_size
    if img.ndim != 3 or img.shape[2] != params.cfg.channels:
        raise ShapeError(f"expected (H, W, {params.cfg.channels}) image, got {img.shape}")
    H, W = img.shape[:2]
    layout = layout or TileLayout(H, W, tile, tile)
    if (layout.height, layout.width, layout.tile) != (H, W, tile):
        raise TilingError("tile layout does not match image and model tile size")
    sums = np.zeros((H, W))
    recon_sums = np.zeros_like(img)
    counts = np.zeros((H, W))
    origins = layout.origins
    for start in range(0, len(origins), batch_size):
        chunk = origins[start : start + batch_size]
        tiles = np.stack([img[y : y + tile, x : x + tile] for y, x in chunk])
        recons = forward_reconstruct(tiles, params)
        for (y, x), t, r in zip(chunk, tiles, recons):
            sums[y : y + tile, x : x + tile] += residual_heatmap(t, r, neighbors)
            recon_sums[y : y + tile, x : x + tile] += r
            counts[y : y + tile, x : x + tile] += 1
    heat = sums / counts
    recon = recon_sums / counts[..., None]
    mask, tau = threshold_mask(heat, policy)
    return Detection(heat, mask, tau, policy, recon)
