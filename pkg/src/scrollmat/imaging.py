"""Raster and mask primitives: decoding, saturation, morphology, cropping."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DecodeError, MaskError

PathLike = Union[str, Path]

MASK_KINDS = ("fragment", "text", "fill")

# Larger plates are legitimate inputs; Pillow's bomb guard is meant for web uploads.
Image.MAX_IMAGE_PIXELS = None

_SQUARE3 = np.ones((3, 3), dtype=bool)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Raster:
    """8-bit RGB image, ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"raster pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        object.__setattr__(self, "pixels", _frozen(px.astype(np.uint8, copy=False)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def crop(self, x: int, y: int, w: int, h: int) -> "Raster":
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValueError(f"crop ({x},{y},{w},{h}) outside {self.width}x{self.height} raster")
        return Raster(self.pixels[y:y + h, x:x + w].copy(), self.source_id)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.source_id == other.source_id and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray
    kind: str = "fragment"

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask bits must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool, copy=False)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def crop(self, x: int, y: int, w: int, h: int) -> "BinaryMask":
        return BinaryMask(self.bits[y:y + h, x:x + w].copy(), self.kind)

    def with_kind(self, kind: str) -> "BinaryMask":
        return BinaryMask(self.bits, kind)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.bits, other.bits)


def empty_mask(height: int, width: int, kind: str = "fill") -> BinaryMask:
    return BinaryMask(np.zeros((height, width), dtype=bool), kind)


def _to_rgb8(img: Image.Image, path: PathLike) -> np.ndarray:
    mode = img.mode
    if mode in ("RGB", "L"):
        return np.asarray(img.convert("RGB"))
    if mode in ("RGBA", "LA", "P", "PA", "1"):
        return np.asarray(img.convert("RGBA" if mode != "1" else "L").convert("RGB"))
    if mode.startswith("I;16") or mode == "I":
        # 16-bit grayscale; keep the high byte.
        a = np.asarray(img, dtype=np.int64)
        a = np.clip(a >> 8, 0, 255).astype(np.uint8)
        return np.repeat(a[:, :, None], 3, axis=2)
    raise DecodeError(f"{path}: unsupported image mode {mode!r}")


def load_image(path: PathLike, source_id: str | None = None) -> Raster:
    """Decode a PNG/JPEG/TIFF file into an 8-bit RGB raster."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            pixels = _to_rgb8(img, path)
    except DecodeError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    return Raster(pixels, source_id if source_id is not None else path.stem)


def load_mask(path: PathLike, kind: str = "fragment") -> BinaryMask:
    """Read a 1-bit or 8-bit mask image; any nonzero pixel is set."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("1", "L", "P", "LA", "RGB", "RGBA", "I;16", "I"):
                raise DecodeError(f"{path}: unsupported mask mode {img.mode!r}")
            a = np.asarray(img)
    except DecodeError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode mask ({exc})") from exc
    if a.ndim == 3:
        a = a.any(axis=2)
    return BinaryMask(a != 0, kind)


def save_image(raster: Raster, path: PathLike) -> None:
    Image.fromarray(np.asarray(raster.pixels), mode="RGB").save(path, format="PNG")


def save_mask(mask: BinaryMask, path: PathLike) -> None:
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def saturation_of(pixels: np.ndarray) -> np.ndarray:
    """Hexcone HSV saturation of an (..., 3) uint8 array; 0 where max is 0."""
    px = np.asarray(pixels)
    mx = px.max(axis=-1).astype(np.float64)
    mn = px.min(axis=-1).astype(np.float64)
    out = np.zeros_like(mx)
    np.divide(mx - mn, mx, out=out, where=mx > 0)
    return out


def to_saturation(r: Raster) -> np.ndarray:
    """Per-pixel saturation in [0, 1], shape (height, width)."""
    return saturation_of(r.pixels)


def dilate_mask(m: BinaryMask) -> BinaryMask:
    """Grow a text mask by a 3x3 square; output is clipped to the image."""
    if m.kind != "text":
        raise MaskError(f"dilate_mask expects a text mask, got kind={m.kind!r}")
    out = ndimage.binary_dilation(m.bits, structure=_SQUARE3, border_value=0)
    return BinaryMask(out, "text")


def union_masks(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if a.shape != b.shape:
        raise MaskError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    return BinaryMask(a.bits | b.bits, "fill")
