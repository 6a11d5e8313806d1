"""Edit masks: which pixels an edit call may regenerate.

``Mask.editable`` is True where the generator is allowed to repaint (the
pixel becomes transparent in the edit request) and False where the previous
frame must survive.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import BadDims, DimMismatch, EmptyObject, InvalidSpec
from .image_ops import ObjectRegion, RasterImage

DEFAULT_DOT_SPACING = 4
DEFAULT_EDGE_WIDTH = 16
DEFAULT_OBJECT_DOT_SPACING = 12
DEFAULT_MUTATION_FRACTION = 0.3


class Polarity(str, enum.Enum):
    DOTS_EDITABLE = "dots-editable"
    DOTS_FIXED = "dots-fixed"


class Shape(str, enum.Enum):
    RECT = "rect"
    ELLIPSE = "ellipse"


@dataclass(frozen=True, eq=False)
class Mask:
    editable: np.ndarray  # (height, width) bool

    def __post_init__(self):
        grid = np.asarray(self.editable, dtype=bool)
        if grid.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {grid.shape}")
        grid = grid.copy()
        grid.setflags(write=False)
        object.__setattr__(self, "editable", grid)

    @classmethod
    def full(cls, width: int, height: int, editable: bool = True) -> "Mask":
        return cls(np.full((height, width), editable, dtype=bool))

    @property
    def width(self) -> int:
        return self.editable.shape[1]

    @property
    def height(self) -> int:
        return self.editable.shape[0]

    @property
    def count(self) -> int:
        return int(self.editable.sum())

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.editable, other.editable)

    __hash__ = None

    def __or__(self, other: "Mask") -> "Mask":
        return union(self, other)

    def __and__(self, other: "Mask") -> "Mask":
        return intersect(self, other)

    def __sub__(self, other: "Mask") -> "Mask":
        return subtract(self, other)

    def __invert__(self) -> "Mask":
        return invert(self)

    def to_pil(self) -> Image.Image:
        """Single-channel preview image, 255 = editable."""
        return Image.fromarray(self.editable.astype(np.uint8) * 255, "L")

    def save_png(self, path) -> None:
        self.to_pil().save(path, format="PNG")


@dataclass(frozen=True)
class MaskParams:
    dot_spacing_x: int = DEFAULT_DOT_SPACING
    edge_width_y: int = DEFAULT_EDGE_WIDTH
    object_dot_spacing: Optional[int] = DEFAULT_OBJECT_DOT_SPACING  # None disables in-object dots
    mutation_fraction: float = DEFAULT_MUTATION_FRACTION
    dot_polarity: Polarity = Polarity.DOTS_EDITABLE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dot_polarity", Polarity(self.dot_polarity))
        if self.dot_spacing_x < 1:
            raise InvalidSpec("dot_spacing_x must be >= 1")
        if self.edge_width_y < 0:
            raise InvalidSpec("edge_width_y must be >= 0")
        if self.object_dot_spacing is not None and self.object_dot_spacing < 1:
            raise InvalidSpec("object_dot_spacing must be >= 1 (or None to disable)")
        if not 0 <= self.mutation_fraction <= 1:
            raise InvalidSpec("mutation_fraction must lie in [0, 1]")

    def check_size(self, width: int, height: int) -> None:
        _check_edge(width, height, self.edge_width_y)


@dataclass(frozen=True)
class ProtectedRegion:
    """Rectangle in fractions of the object's bounding box, e.g. the top 40%
    is ``ProtectedRegion(0, 0, 0.4, 1)``."""

    top: float
    left: float
    bottom: float
    right: float

    def __post_init__(self):
        vals = (self.top, self.left, self.bottom, self.right)
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise InvalidSpec(f"protected region fractions must lie in [0, 1]: {vals}")
        if self.bottom < self.top or self.right < self.left:
            raise InvalidSpec(f"protected region is inverted: {vals}")

    @classmethod
    def parse(cls, text: str) -> "ProtectedRegion":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise InvalidSpec(f"expected top,left,bottom,right: {text!r}")
        return cls(*parts)

    def pixels(self, region: ObjectRegion) -> np.ndarray:
        """Boolean grid of the protected pixels (intersected with the object)."""
        r0, c0, _, _ = region.bbox
        bh, bw = region.bbox_height, region.bbox_width
        top = r0 + math.floor(self.top * bh)
        bottom = r0 + math.ceil(self.bottom * bh)
        left = c0 + math.floor(self.left * bw)
        right = c0 + math.ceil(self.right * bw)
        grid = np.zeros(region.pixel_mask.shape, bool)
        grid[top:bottom, left:right] = True
        return grid & region.pixel_mask


# -- boolean algebra -------------------------------------------------------------

def _same_dims(a: Mask, b: Mask) -> None:
    if a.editable.shape != b.editable.shape:
        raise DimMismatch(f"mask sizes differ: {a.editable.shape} vs {b.editable.shape}")


def union(a: Mask, b: Mask) -> Mask:
    _same_dims(a, b)
    return Mask(a.editable | b.editable)


def intersect(a: Mask, b: Mask) -> Mask:
    _same_dims(a, b)
    return Mask(a.editable & b.editable)


def subtract(a: Mask, b: Mask) -> Mask:
    _same_dims(a, b)
    return Mask(a.editable & ~b.editable)


def invert(a: Mask) -> Mask:
    return Mask(~a.editable)


# -- recipes -----------------------------------------------------------------------

def _check_edge(width: int, height: int, edge: int) -> None:
    if width < 1 or height < 1:
        raise BadDims(f"bad image size {width}x{height}")
    if edge < 0 or 2 * edge >= min(width, height):
        raise BadDims(f"edge width {edge} leaves no interior in {width}x{height}")


def _interior(width: int, height: int, edge: int) -> np.ndarray:
    grid = np.zeros((height, width), bool)
    grid[edge:height - edge, edge:width - edge] = True
    return grid


def edge_mask(width: int, height: int, edge_width_y: int) -> Mask:
    """Fixed border frame ``edge_width_y`` pixels wide, editable interior."""
    _check_edge(width, height, edge_width_y)
    return Mask(_interior(width, height, edge_width_y))


def lattice(shape: Tuple[int, int], spacing: int, origin: Tuple[int, int]) -> np.ndarray:
    rows = (np.arange(shape[0]) - origin[0]) % spacing == 0
    cols = (np.arange(shape[1]) - origin[1]) % spacing == 0
    return rows[:, None] & cols[None, :]


def dotted_mask(
    width: int,
    height: int,
    spacing: int,
    edge_width_y: int,
    polarity: Polarity | str = Polarity.DOTS_EDITABLE,
) -> Mask:
    """Regular dot lattice anchored at (y, y) inside a fixed border of width y.

    With ``DOTS_EDITABLE`` only the dots may change; with ``DOTS_FIXED`` the
    dots pin the frame and everything else in the interior may change.
    """
    if spacing < 1:
        raise InvalidSpec("dot spacing must be >= 1")
    _check_edge(width, height, edge_width_y)
    interior = _interior(width, height, edge_width_y)
    dots = lattice((height, width), spacing, (edge_width_y, edge_width_y)) & interior
    if Polarity(polarity) is Polarity.DOTS_EDITABLE:
        return Mask(dots)
    return Mask(interior & ~dots)


def center_shape_mask(width: int, height: int, shape: Shape | str, extent: float) -> Mask:
    """Centered rectangle or ellipse spanning ``extent`` of each dimension."""
    if not 0 < extent <= 1:
        raise InvalidSpec(f"extent must lie in (0, 1], got {extent}")
    shape = Shape(shape)
    if shape is Shape.RECT:
        rh, rw = int(round(extent * height)), int(round(extent * width))
        r0, c0 = (height - rh) // 2, (width - rw) // 2
        grid = np.zeros((height, width), bool)
        grid[r0:r0 + rh, c0:c0 + rw] = True
        return Mask(grid)
    return Mask(
        _ellipse((height, width), ((height - 1) / 2, (width - 1) / 2), (extent * height / 2, extent * width / 2))
    )


def _ellipse(shape, center, semi_axes) -> np.ndarray:
    rr = (np.arange(shape[0]) - center[0]) / semi_axes[0]
    cc = (np.arange(shape[1]) - center[1]) / semi_axes[1]
    return rr[:, None] ** 2 + cc[None, :] ** 2 <= 1.0


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def random_ellipse_mask(width: int, height: int, seed: int) -> Mask:
    """One editable ellipse; semi-axes drawn from [0.1, 0.3]·min(w, h) and the
    center placed so the ellipse stays inside the frame."""
    rng = rng_for(seed)
    short = min(width, height)
    a_r, a_c = rng.uniform(0.1 * short, 0.3 * short, size=2)
    center_r = rng.uniform(a_r, height - 1 - a_r)
    center_c = rng.uniform(a_c, width - 1 - a_c)
    return Mask(_ellipse((height, width), (center_r, center_c), (a_r, a_c)))


def mutation_rect(region: ObjectRegion, fraction: float, rng: np.random.Generator) -> Tuple[int, int, int, int]:
    """Random half-open rectangle (top, left, bottom, right) inside the object's
    bbox whose sides are ``sqrt(fraction)`` of the bbox sides, rounded down."""
    side = math.sqrt(fraction)
    rh = int(math.floor(side * region.bbox_height))
    rw = int(math.floor(side * region.bbox_width))
    r0, c0, _, _ = region.bbox
    top = r0 + int(rng.integers(0, region.bbox_height - rh + 1))
    left = c0 + int(rng.integers(0, region.bbox_width - rw + 1))
    return top, left, top + rh, left + rw


def object_mutation_mask(
    region: ObjectRegion,
    params: MaskParams,
    protected: Sequence[ProtectedRegion] = (),
    seed: Optional[int] = None,
) -> Mask:
    """Editable part of the dominant object for one frame.

    A randomly placed rectangle covering ``mutation_fraction`` of the bbox
    (clipped to the object) plus a sparse in-object dot lattice with a random
    phase, minus every protected region.
    """
    if region.pixel_mask.size == 0 or not region.pixel_mask.any():
        raise EmptyObject("object region is empty")
    rng = rng_for(params.seed if seed is None else seed)
    obj = region.pixel_mask
    editable = np.zeros(obj.shape, bool)

    top, left, bottom, right = mutation_rect(region, params.mutation_fraction, rng)
    editable[top:bottom, left:right] = True
    editable &= obj

    spacing = params.object_dot_spacing
    if spacing is not None:
        phase = rng.integers(0, spacing, size=2)
        r0, c0, _, _ = region.bbox
        editable |= lattice(obj.shape, spacing, (r0 + int(phase[0]), c0 + int(phase[1]))) & obj

    for prot in protected:
        editable &= ~prot.pixels(region)
    return Mask(editable)


def to_edit_alpha(mask: Mask, image: RasterImage) -> RasterImage:
    """Image copy whose alpha is 0 where editable and 255 where fixed."""
    if (mask.width, mask.height) != image.size:
        raise DimMismatch(f"mask {mask.width}x{mask.height} vs image {image.width}x{image.height}")
    out = image.writable()
    out[..., 3] = np.where(mask.editable, 0, 255).astype(np.uint8)
    return RasterImage(out)
