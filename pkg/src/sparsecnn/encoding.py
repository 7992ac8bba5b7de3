"""Turn pen strokes and pixel images into sparse input grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import DTYPE, GridError, SparseGrid


class EncodingError(ValueError):
    pass


@dataclass
class StrokeCharacter:
    label: int
    strokes: list = field(default_factory=list)  # each an (P, 2) float array of (x, y)

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in self.strokes]
        for s in self.strokes:
            if len(s) == 0:
                raise EncodingError("every stroke needs at least one point")
            if not np.all(np.isfinite(s)):
                raise EncodingError("stroke coordinates must be finite")

    def points(self) -> np.ndarray:
        if not self.strokes:
            return np.zeros((0, 2))
        return np.concatenate(self.strokes)

    def map_points(self, fn) -> "StrokeCharacter":
        return StrokeCharacter(self.label, [fn(s) for s in self.strokes])

    def length(self) -> float:
        return float(sum(np.linalg.norm(np.diff(s, axis=0), axis=1).sum() for s in self.strokes))


@dataclass(frozen=True)
class EncodingConfig:
    """Drawing box of ``character_scale`` pixels centred in an ``input_size`` grid."""

    input_size: int
    character_scale: int
    with_histograms: bool = False

    def __post_init__(self):
        if not 1 <= self.character_scale <= self.input_size:
            raise EncodingError(f"character_scale {self.character_scale} must be in [1, {self.input_size}]")

    @classmethod
    def for_levels(cls, levels: int, with_histograms: bool = False, character_scale=None) -> "EncodingConfig":
        return cls(3 * 2 ** levels, character_scale or 2 ** levels, with_histograms)

    @property
    def num_features(self) -> int:
        return 9 if self.with_histograms else 1

    @property
    def offset(self) -> int:
        return (self.input_size - self.character_scale) // 2

    @property
    def box_center(self) -> float:
        return (self.character_scale - 1) / 2


def normalize_character(char: StrokeCharacter, n: int) -> StrokeCharacter:
    """Uniformly scale and translate so the character spans pixels 0..n-1 along its longer side.

    Pixel centres sit at integer coordinates, so a box of ``n`` pixels spans
    ``n - 1`` units.  The shorter side is centred.
    """
    pts = char.points()
    if len(pts) == 0:
        raise EncodingError("cannot normalize a character with no points")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    mid = (lo + hi) / 2
    center = (n - 1) / 2
    scale = (n - 1) / extent if extent > 0 else 0.0
    return char.map_points(lambda s: (s - mid) * scale + center)


def _round(v):
    return np.floor(np.asarray(v) + 0.5).astype(np.int64)


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """8-connected midpoint (Bresenham) line from (x0, y0) to (x1, y1), in drawing order."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def direction_weights(dx: float, dy: float) -> tuple[int, float, int, float]:
    """Split a unit of movement between the two nearest of 8 compass directions.

    Direction 0 is +x, counting counter-clockwise in 45 degree steps.
    """
    t = (math.atan2(dy, dx) / (math.pi / 4)) % 8.0
    lo = int(math.floor(t))
    w_hi = t - lo
    if w_hi < 1e-12:
        w_hi = 0.0
    elif w_hi > 1 - 1e-12:
        lo, w_hi = lo + 1, 0.0
    return lo % 8, 1.0 - w_hi, (lo + 1) % 8, w_hi


def _segment(a, b, pen, hist):
    """Draw segment a->b into ``pen`` and deposit its length into ``hist``.

    The segment is cut at half-integer boundaries along its major axis; each
    piece goes to the line pixel of that column (or row), so every piece of
    histogram mass lands on a pen pixel.
    """
    (ax, ay), (bx, by) = a, b
    ix0, iy0, ix1, iy1 = (int(v) for v in _round([ax, ay, bx, by]))
    pixels = line_pixels(ix0, iy0, ix1, iy1)
    for px, py in pixels:
        pen[py, px] = 1.0
    if hist is None:
        return
    length = math.hypot(bx - ax, by - ay)
    if length == 0:
        return
    d0, w0, d1, w1 = direction_weights(bx - ax, by - ay)
    if abs(ix1 - ix0) >= abs(iy1 - iy0):
        u0, u1, c0, c1 = ax, bx, ix0, ix1
    else:
        u0, u1, c0, c1 = ay, by, iy0, iy1
    span = abs(u1 - u0)
    if len(pixels) == 1 or span == 0:
        fracs = np.zeros(len(pixels))
        fracs[0] = 1.0
    else:
        step = 1 if c1 >= c0 else -1
        cols = np.arange(len(pixels)) * step + c0
        lo_u, hi_u = min(u0, u1), max(u0, u1)
        left = np.maximum(cols - 0.5, lo_u)
        right = np.minimum(cols + 0.5, hi_u)
        # rounding can leave slivers beyond the first/last column boundary
        left[cols == min(c0, c1)] = lo_u
        right[cols == max(c0, c1)] = hi_u
        fracs = np.clip(right - left, 0, None) / span
    for (px, py), fr in zip(pixels, fracs):
        if fr > 0:
            hist[py, px, d0] += fr * length * w0
            hist[py, px, d1] += fr * length * w1


def rasterize(char: StrokeCharacter, config: EncodingConfig) -> SparseGrid:
    """Draw a normalized character into the centre of the input grid.

    Feature 0 is the binary pen channel; with histograms, features 1-8 hold the
    length of pen movement in each compass direction at that pixel.
    """
    size = config.input_size
    off = config.offset
    allp = np.concatenate(char.strokes) + off if char.strokes else np.zeros((0, 2))
    r = _round(allp)
    if len(r) and (r.min() < 0 or r.max() >= size):
        raise GridError("character extends outside the input grid")
    pen = np.zeros((size, size))
    hist = np.zeros((size, size, 8)) if config.with_histograms else None
    for stroke in char.strokes:
        pts = stroke + off
        if len(pts) == 1:
            _segment(pts[0], pts[0], pen, hist)
        for a, b in zip(pts[:-1], pts[1:]):
            _segment(a, b, pen, hist)
    ys, xs = np.nonzero(pen)
    if config.with_histograms:
        rows = np.concatenate([pen[ys, xs, None], hist[ys, xs]], axis=1)
    else:
        rows = pen[ys, xs, None]
    return SparseGrid.from_sites(size, xs, ys, rows.astype(DTYPE), np.zeros(config.num_features, dtype=DTYPE))


def embed_image(pixels, input_size: int, scaling: str = "gray") -> SparseGrid:
    """Centre an image in an ``input_size`` grid whose padding is the zero ground state.

    ``scaling="gray"``: values ``v/255``, zero pixels stay inactive.
    ``scaling="rgb"``: channels mapped from [0, 255] to [-1, 1]; every image pixel is active.
    """
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, m = img.shape
    if h > input_size or w > input_size:
        raise GridError(f"image {h}x{w} larger than {input_size}x{input_size} grid")
    oy, ox = (input_size - h) // 2, (input_size - w) // 2
    if scaling == "gray":
        vals = img / 255.0
        ys, xs = np.nonzero(np.any(img != 0, axis=2))
    elif scaling == "rgb":
        vals = 2.0 * img / 255.0 - 1.0
        ys, xs = np.divmod(np.arange(h * w), w)
    else:
        raise ValueError(f"scaling must be 'gray' or 'rgb', got {scaling!r}")
    return SparseGrid.from_sites(input_size, xs + ox, ys + oy, vals[ys, xs].astype(DTYPE),
                                 np.zeros(m, dtype=DTYPE))
