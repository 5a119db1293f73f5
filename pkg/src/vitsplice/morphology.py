"""Binary morphology on boolean masks, including the ErodeIsolated filter.

Pixels outside the image are background (False) for every operation.
A structuring element is a boolean grid plus an anchor cell; its offsets
are measured from the anchor.  ``erode`` is the AND over those offsets and
``dilate`` the OR over the reflected offsets, so opening and closing with
an asymmetric element (such as 2x2) stay aligned with the input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class StructuringElement:
    grid: np.ndarray
    anchor: tuple[int, int]

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2 or not g.any():
            raise ConfigError("structuring element must be a 2-D grid with at least one true cell")
        r, c = self.anchor
        if not (0 <= r < g.shape[0] and 0 <= c < g.shape[1]):
            raise ConfigError(f"anchor {self.anchor} outside grid {g.shape}")
        object.__setattr__(self, "grid", g)

    @classmethod
    def centered(cls, grid) -> "StructuringElement":
        g = np.asarray(grid, dtype=bool)
        if g.shape[0] % 2 == 0 or g.shape[1] % 2 == 0:
            raise ConfigError("centered structuring elements need odd side lengths")
        return cls(g, (g.shape[0] // 2, g.shape[1] // 2))

    @classmethod
    def square(cls, side: int) -> "StructuringElement":
        """All-true ``side x side``; even sides anchor at the upper-left of
        the four central cells (top-left cell for 2x2)."""
        if side < 1:
            raise ConfigError("side must be >= 1")
        return cls(np.ones((side, side), bool), ((side - 1) // 2, (side - 1) // 2))

    def offsets(self) -> np.ndarray:
        rr, cc = np.nonzero(self.grid)
        return np.stack([rr - self.anchor[0], cc - self.anchor[1]], axis=1)

    def reflect(self) -> "StructuringElement":
        h, w = self.grid.shape
        return StructuringElement(self.grid[::-1, ::-1], (h - 1 - self.anchor[0], w - 1 - self.anchor[1]))


@dataclass(frozen=True)
class ErodeIsolatedSpec:
    a: int
    b: int

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ConfigError(f"ErodeIsolated needs b > a >= 0, got a={self.a}, b={self.b}")


DEFAULT_SCHEDULE = (
    ErodeIsolatedSpec(1, 2),
    ErodeIsolatedSpec(1, 3),
    ErodeIsolatedSpec(2, 4),
    ErodeIsolatedSpec(3, 6),
    ErodeIsolatedSpec(5, 8),
)


@dataclass(frozen=True)
class PostProcessConfig:
    closing: StructuringElement = field(default_factory=lambda: StructuringElement.square(3))
    fill_holes: bool = True
    schedule: tuple = DEFAULT_SCHEDULE
    max_iterations: int | None = None

    def __post_init__(self):
        sched = tuple(s if isinstance(s, ErodeIsolatedSpec) else ErodeIsolatedSpec(*s) for s in self.schedule)
        if not sched:
            raise ConfigError("ErodeIsolated schedule must be non-empty")
        object.__setattr__(self, "schedule", sched)
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")

    def iteration_cap(self, mask: np.ndarray) -> int:
        """Pass limit; unset means run to the fixed point.

        Each pass that changes the mask removes at least one pixel, so
        ``foreground + 1`` passes always suffice.
        """
        if self.max_iterations is None:
            return int(np.count_nonzero(mask)) + 1
        return self.max_iterations


def _as_mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"masks must be 2-D, got shape {m.shape}")
    return m.astype(bool, copy=False)


def _shifted(m: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """``out[p] = m[p + (dr, dc)]`` with False outside the image."""
    H, W = m.shape
    out = np.zeros_like(m)
    if abs(dr) >= H or abs(dc) >= W:
        return out
    out[max(0, -dr) : H - max(0, dr), max(0, -dc) : W - max(0, dc)] = m[
        max(0, dr) : H - max(0, -dr), max(0, dc) : W - max(0, -dc)
    ]
    return out


def erode(m, se: StructuringElement) -> np.ndarray:
    m = _as_mask(m)
    out = np.ones_like(m)
    for dr, dc in se.offsets():
        out &= _shifted(m, dr, dc)
    return out


def dilate(m, se: StructuringElement) -> np.ndarray:
    m = _as_mask(m)
    out = np.zeros_like(m)
    for dr, dc in se.offsets():
        out |= _shifted(m, -dr, -dc)
    return out


def opening(m, se: StructuringElement) -> np.ndarray:
    return dilate(erode(m, se), se)


def closing(m, se: StructuringElement) -> np.ndarray:
    return erode(dilate(m, se), se)


def fill_holes(m) -> np.ndarray:
    """Background not 4-connected to the border becomes foreground."""
    return ndimage.binary_fill_holes(_as_mask(m))


@dataclass(frozen=True)
class ComponentStats:
    label: int
    area: int
    bbox: tuple[int, int, int, int]  # row0, col0, row1 (exclusive), col1 (exclusive)

    @property
    def height(self) -> int:
        return self.bbox[2] - self.bbox[0]

    @property
    def width(self) -> int:
        return self.bbox[3] - self.bbox[1]

    @property
    def max_side(self) -> int:
        return max(self.height, self.width)

    @property
    def chebyshev_diameter(self) -> int:
        return self.max_side - 1


_CONNECTIVITY = {4: ndimage.generate_binary_structure(2, 1), 8: ndimage.generate_binary_structure(2, 2)}


def connected_components(m, connectivity: int = 8) -> tuple[np.ndarray, list[ComponentStats]]:
    """Label map (0 = background) and per-component stats.

    Labels follow raster-scan order of each component's first pixel.
    """
    if connectivity not in _CONNECTIVITY:
        raise ConfigError("connectivity must be 4 or 8")
    labels, count = ndimage.label(_as_mask(m), structure=_CONNECTIVITY[connectivity])
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    stats = [
        ComponentStats(i + 1, int(areas[i + 1]), (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop))
        for i, sl in enumerate(ndimage.find_objects(labels))
    ]
    return labels, stats


def make_erode_isolated_element(a: int, b: int) -> StructuringElement:
    """Square of side 2b+1 that is true except on the central square of side 2a+1."""
    spec = ErodeIsolatedSpec(a, b)
    side = 2 * spec.b + 1
    r = np.abs(np.arange(side) - spec.b)
    cheb = np.maximum(r[:, None], r[None, :])
    return StructuringElement.centered(cheb > spec.a)


def erode_isolated(m, a: int, b: int) -> np.ndarray:
    """Keep a foreground pixel only if some foreground pixel lies at
    Chebyshev distance in ``(a, b]`` from it."""
    m = _as_mask(m)
    return m & dilate(m, make_erode_isolated_element(a, b))


def postprocess_v1(m) -> np.ndarray:
    """Opening then closing with a 2x2 element, then hole filling."""
    se = StructuringElement.square(2)
    return fill_holes(closing(opening(m, se), se))


def postprocess_v2(m, cfg: PostProcessConfig | None = None) -> tuple[np.ndarray, int]:
    """Closing, hole filling, then repeated passes of the ErodeIsolated schedule.

    A pass applies every filter in order.  The loop stops after a pass that
    leaves the mask unchanged or when ``cfg.max_iterations`` passes have run.
    Five filters usually settle within five passes, but some masks need
    more, so by default the loop runs to the fixed point.  Returns
    ``(mask, passes)``.
    """
    cfg = cfg or PostProcessConfig()
    out = closing(m, cfg.closing)
    if cfg.fill_holes:
        out = fill_holes(out)
    passes = 0
    cap = cfg.iteration_cap(out)
    while passes < cap:
        passes += 1
        before = out
        for spec in cfg.schedule:
            out = erode_isolated(out, spec.a, spec.b)
        if np.array_equal(before, out):
            break
    return out, passes
