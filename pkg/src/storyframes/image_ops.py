"""Raster primitives: the RGBA image type, HSV saturation matching, object
extraction from white backgrounds, placement, compositing and diffusion
inpainting for text removal."""

from __future__ import annotations

import colorsys
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DimMismatch, EmptyObject, NoObject, OutOfBounds

DEFAULT_SIZE = (256, 256)
WHITE_THRESHOLD = 245
OBJECT_SCALE = 0.6
OBJECT_CENTER = (0.62, 0.5)  # (row, col) fractions for the placed object's bbox center


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGBA image stored as a ``(height, width, 4)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValueError(f"expected (h, w, 4) uint8 pixels, got {px.shape} {px.dtype}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> Tuple[int, int]:
        return (self.width, self.height)

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[..., :3]

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    @classmethod
    def filled(cls, width: int, height: int, rgba=(255, 255, 255, 255)) -> "RasterImage":
        px = np.empty((height, width, 4), np.uint8)
        px[...] = rgba
        return cls(px)

    @classmethod
    def from_pil(cls, img: Image.Image) -> "RasterImage":
        return cls(np.array(img.convert("RGBA"), dtype=np.uint8))

    @classmethod
    def load(cls, path: str | Path) -> "RasterImage":
        with Image.open(path) as img:
            return cls.from_pil(img)

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "RasterImage":
        with Image.open(io.BytesIO(data)) as img:
            return cls.from_pil(img)

    def to_pil(self) -> Image.Image:
        return Image.fromarray(np.array(self.pixels), "RGBA")

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        self.to_pil().save(path, format="PNG")

    def with_pixels(self, pixels: np.ndarray) -> "RasterImage":
        return RasterImage(pixels)

    def writable(self) -> np.ndarray:
        return np.array(self.pixels)


@dataclass(frozen=True, eq=False)
class ObjectRegion:
    """Pixel mask of the dominant object plus its tight inclusive bbox."""

    pixel_mask: np.ndarray
    bbox: Tuple[int, int, int, int]  # (min_row, min_col, max_row, max_col)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "ObjectRegion":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise EmptyObject("object mask is empty")
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        mask = mask.copy()
        mask.setflags(write=False)
        return cls(mask, (int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])))

    @property
    def bbox_height(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def bbox_width(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1

    @property
    def area(self) -> int:
        return int(self.pixel_mask.sum())

    def translated(self, offset: Tuple[int, int], shape: Tuple[int, int]) -> "ObjectRegion":
        """Same object moved by ``offset`` onto a canvas of ``shape`` (h, w)."""
        dr, dc = offset
        r0, c0, r1, c1 = self.bbox
        if r0 + dr < 0 or c0 + dc < 0 or r1 + dr >= shape[0] or c1 + dc >= shape[1]:
            raise OutOfBounds(f"object bbox {self.bbox} moved by {offset} leaves {shape}")
        out = np.zeros(shape, bool)
        rr, cc = np.nonzero(self.pixel_mask)
        out[rr + dr, cc + dc] = True
        return ObjectRegion.from_mask(out)


@dataclass(frozen=True)
class TextBox:
    """Half-open pixel rectangle ``[top, bottom) x [left, right)``."""

    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if self.bottom <= self.top or self.right <= self.left:
            raise ValueError(f"text box has no area: {self}")

    def clipped(self, width: int, height: int) -> "TextBox | None":
        top, left = max(0, self.top), max(0, self.left)
        bottom, right = min(height, self.bottom), min(width, self.right)
        if bottom <= top or right <= left:
            return None
        return TextBox(top, left, bottom, right)


# -- HSV -------------------------------------------------------------------------

def rgb_to_hsv(pixel: Sequence[int]) -> Tuple[float, float, float]:
    """8-bit RGB to (hue degrees in [0, 360), saturation, value)."""
    r, g, b = (c / 255.0 for c in pixel[:3])
    h, s, v = colorsys.rgb_to_hsv(r, g, b)
    return (h * 360.0) % 360.0, s, v


def hsv_to_rgb(h: float, s: float, v: float) -> Tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb((h % 360.0) / 360.0, s, v)
    return tuple(int(round(c * 255.0)) for c in (r, g, b))


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorized hexcone conversion; returns float array (..., 3) of h°, s, v."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.select(
        [c == 0, v == r, v == g],
        [0.0, ((g - b) / safe_c) % 6.0, (b - r) / safe_c + 2.0],
        default=(r - g) / safe_c + 4.0,
    )
    return np.stack([(h * 60.0) % 360.0, s, v], axis=-1)


def hsv_to_rgb_array(hsv: np.ndarray, *, rounded: bool = True) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0] % 360.0, hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    m = v - c
    sector = np.floor(hp).astype(int) % 6
    zeros = np.zeros_like(c)
    table = [
        (c, x, zeros), (x, c, zeros), (zeros, c, x),
        (zeros, x, c), (x, zeros, c), (c, zeros, x),
    ]
    out = np.zeros(hsv.shape, dtype=np.float64)
    for k, channels in enumerate(table):
        sel = sector == k
        for ch in range(3):
            out[..., ch][sel] = channels[ch][sel]
    out = (out + m[..., None]) * 255.0
    if not rounded:
        return out
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def mean_saturation(image: RasterImage) -> float:
    return float(rgb_to_hsv_array(image.rgb)[..., 1].mean())


def match_saturation(frame: RasterImage, reference: RasterImage) -> RasterImage:
    """Scale every pixel's saturation so the frame's mean matches the reference's."""
    if frame.size != reference.size:
        raise DimMismatch(f"frame {frame.size} vs reference {reference.size}")
    hsv = rgb_to_hsv_array(frame.rgb)
    mu_frame = hsv[..., 1].mean()
    if mu_frame == 0:
        return frame
    mu_ref = rgb_to_hsv_array(reference.rgb)[..., 1].mean()
    hsv[..., 1] = np.clip(hsv[..., 1] * (mu_ref / mu_frame), 0.0, 1.0)
    out = frame.writable()
    out[..., :3] = hsv_to_rgb_array(hsv)
    return RasterImage(out)


# -- objects -------------------------------------------------------------------

def white_mask(image: RasterImage, white_threshold: int = WHITE_THRESHOLD) -> np.ndarray:
    return image.rgb.min(axis=-1) >= white_threshold


def extract_object(image: RasterImage, white_threshold: int = WHITE_THRESHOLD) -> ObjectRegion:
    """Object = every pixel with some channel below ``white_threshold``."""
    mask = ~white_mask(image, white_threshold)
    if not mask.any():
        raise NoObject("image has no non-white pixels")
    return ObjectRegion.from_mask(mask)


def scaled_size(size: Tuple[int, int], scale: float) -> Tuple[int, int]:
    w, h = size
    return max(1, int(round(w * scale))), max(1, int(round(h * scale)))


def resize_reposition(image: RasterImage, scale: float, anchor: Tuple[int, int]) -> RasterImage:
    """Bilinearly shrink ``image`` and paste it, top-left at ``anchor`` (row, col),
    onto a white canvas of the original size."""
    if not 0 < scale <= 1:
        raise ValueError(f"scale must be in (0, 1], got {scale}")
    sw, sh = scaled_size(image.size, scale)
    row, col = anchor
    if row < 0 or col < 0 or row + sh > image.height or col + sw > image.width:
        raise OutOfBounds(f"{sw}x{sh} image at {anchor} does not fit {image.width}x{image.height}")
    if (sw, sh) == image.size:
        small = image.pixels
    else:
        small = np.array(image.to_pil().resize((sw, sh), Image.BILINEAR))
    out = RasterImage.filled(image.width, image.height).writable()
    out[row:row + sh, col:col + sw] = small
    return RasterImage(out)


def placement_anchor(
    region: ObjectRegion,
    scale: float,
    size: Tuple[int, int],
    center: Tuple[float, float] = OBJECT_CENTER,
) -> Tuple[int, int]:
    """Top-left anchor that puts the scaled object's bbox center at ``center``
    (fractions of height, width), clamped so the scaled canvas still fits."""
    w, h = size
    sw, sh = scaled_size(size, scale)
    r0, c0, r1, c1 = region.bbox
    obj_r = (r0 + r1) / 2.0 * scale
    obj_c = (c0 + c1) / 2.0 * scale
    row = int(round(center[0] * (h - 1) - obj_r))
    col = int(round(center[1] * (w - 1) - obj_c))
    return min(max(row, 0), h - sh), min(max(col, 0), w - sw)


def composite_over(
    obj: RasterImage,
    region: ObjectRegion,
    background: RasterImage,
    offset: Tuple[int, int] = (0, 0),
) -> RasterImage:
    """Copy the object's masked pixels onto the background, shifted by ``offset``."""
    dr, dc = offset
    r0, c0, r1, c1 = region.bbox
    if r0 + dr < 0 or c0 + dc < 0 or r1 + dr >= background.height or c1 + dc >= background.width:
        raise OutOfBounds(f"object bbox {region.bbox} + {offset} outside background")
    if region.pixel_mask.shape != obj.pixels.shape[:2]:
        raise DimMismatch("object image and region mask differ in size")
    rr, cc = np.nonzero(region.pixel_mask)
    out = background.writable()
    out[rr + dr, cc + dc] = obj.pixels[rr, cc]
    return RasterImage(out)


# -- inpainting ----------------------------------------------------------------

def boxes_mask(boxes: Iterable[TextBox], width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), bool)
    for box in boxes:
        clipped = box.clipped(width, height)
        if clipped is not None:
            mask[clipped.top:clipped.bottom, clipped.left:clipped.right] = True
    return mask


def _neighbor_sums(values: np.ndarray, valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sum and count of valid 4-neighbors for every pixel."""
    total = np.zeros_like(values)
    count = np.zeros(valid.shape, dtype=np.float64)
    weighted = values * valid[..., None]
    total[1:] += weighted[:-1]
    count[1:] += valid[:-1]
    total[:-1] += weighted[1:]
    count[:-1] += valid[1:]
    total[:, 1:] += weighted[:, :-1]
    count[:, 1:] += valid[:, :-1]
    total[:, :-1] += weighted[:, 1:]
    count[:, :-1] += valid[:, 1:]
    return total, count


def inpaint(
    image: RasterImage,
    boxes: Sequence[TextBox],
    max_iter: int = 500,
    tol: float = 1.0,
) -> RasterImage:
    """Fill box interiors by iterated 4-neighbor averaging (harmonic fill).

    The hole starts at the mean of its outer ring, then each hole pixel is
    replaced by the mean of its in-image neighbors until the largest
    per-channel update drops below ``tol`` or ``max_iter`` sweeps ran.
    Pixels outside the boxes are returned untouched.
    """
    hole = boxes_mask(boxes, image.width, image.height)
    if not hole.any() or hole.all():
        return image
    known = ~hole
    values = image.pixels.astype(np.float64)
    ring_sum, ring_count = _neighbor_sums(values, known)
    ring = hole & (ring_count > 0)
    start = ring_sum[ring].sum(axis=0) / ring_count[ring].sum()
    values[hole] = start
    everywhere = np.ones(hole.shape, bool)
    _, count = _neighbor_sums(values, everywhere)
    for _ in range(max_iter):
        total, _ = _neighbor_sums(values, everywhere)
        update = total[hole] / count[hole][:, None]
        change = np.abs(update - values[hole]).max()
        values[hole] = update
        if change < tol:
            break
    out = image.writable()
    out[hole] = np.clip(np.rint(values[hole]), 0, 255).astype(np.uint8)
    return RasterImage(out)
