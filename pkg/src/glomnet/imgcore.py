"""Raster types and the handful of pixel operations every other stage builds on.

Images are kept as 8-bit ``(height, width, channels)`` arrays. Conversion to
floating point only happens at the network boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

PathLike = Union[str, Path]


class ImageError(ValueError):
    """Raised for undecodable files and geometry that an operation rejects."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (H, W, C) uint8, C in {1, 3}
    pixel_size_um: Optional[float] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ImageError(f"expected (H, W, 1|3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError("image dimensions must be >= 1")
        if px.dtype != np.uint8:
            if px.min(initial=0) < 0 or px.max(initial=0) > 255:
                raise ImageError("pixel values outside 0..255")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray = field()  # (H, W) bool

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ImageError(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and np.array_equal(self.bits, other.bits)

    def __invert__(self) -> "Mask":
        return Mask(~self.bits)

    def __repr__(self):
        return f"Mask({self.width}x{self.height}, area={self.area})"


def load_image(path: PathLike) -> Image:
    """Decode a PNG or 8-bit TIFF. Grayscale stays single-channel."""
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"no such file: {path}")
    try:
        with PILImage.open(path) as im:
            if im.format not in ("PNG", "TIFF"):
                raise ImageError(f"unsupported format {im.format!r}: {path}")
            im.load()
            if im.mode in ("1", "L"):
                arr = np.asarray(im.convert("L"))
            elif im.mode in ("RGB", "P"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise ImageError(f"unsupported pixel mode {im.mode!r}: {path}")
            dpi = im.info.get("dpi")
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"decode failure: {path}: {exc}") from exc
    pixel_size = None
    if dpi and dpi[0]:
        pixel_size = round(25400.0 / float(dpi[0]), 6)
    return Image(arr, pixel_size_um=pixel_size)


def save_image(img: Image, path: PathLike) -> None:
    """Write ``img`` as PNG (always lossless, regardless of suffix)."""
    path = Path(path)
    px = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    mode = "L" if img.channels == 1 else "RGB"
    kwargs = {}
    if img.pixel_size_um:
        dpi = 25400.0 / img.pixel_size_um
        kwargs["dpi"] = (dpi, dpi)
    try:
        PILImage.fromarray(np.ascontiguousarray(px), mode=mode).save(path, format="PNG", **kwargs)
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def downsample(img: Image, factor: int) -> Image:
    """Block-mean downsample; each output sample is the half-up rounded mean."""
    if factor < 1:
        raise ImageError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    h, w, c = img.pixels.shape
    if h % factor or w % factor:
        raise ImageError(f"{w}x{h} image not divisible by downsample factor {factor}")
    blocks = img.pixels.reshape(h // factor, factor, w // factor, factor, c)
    total = blocks.sum(axis=(1, 3), dtype=np.int64)
    n = factor * factor
    # integer half-up: floor(total / n + 1/2)
    out = (2 * total + n) // (2 * n)
    pixel_size = img.pixel_size_um * factor if img.pixel_size_um else None
    return Image(out.astype(np.uint8), pixel_size_um=pixel_size)


def crop(img: Image, top: int, left: int, out_h: int, out_w: int) -> Image:
    if top < 0 or left < 0 or top + out_h > img.height or left + out_w > img.width:
        raise ImageError(f"crop {out_w}x{out_h}@({left},{top}) outside {img.width}x{img.height}")
    return Image(img.pixels[top:top + out_h, left:left + out_w], pixel_size_um=img.pixel_size_um)


def center_crop(img: Image, out_h: int, out_w: int) -> Image:
    if out_h > img.height or out_w > img.width or out_h < 1 or out_w < 1:
        raise ImageError(f"crop {out_w}x{out_h} larger than image {img.width}x{img.height}")
    top = (img.height - out_h) // 2
    left = (img.width - out_w) // 2
    return crop(img, top, left, out_h, out_w)


def as_fill(fill: Union[int, Sequence[int]], channels: int) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(fill, dtype=np.float64), (channels,))
    return arr.copy()


def bilinear_sample(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill) -> np.ndarray:
    """Sample ``pixels`` (H, W, C) at fractional pixel-center coordinates.

    Coordinates outside ``[0, W-1] x [0, H-1]`` take ``fill``. Returns uint8
    with the same leading shape as ``xs``.
    """
    h, w, c = pixels.shape
    # snap float noise from composed rotations onto the integer grid
    xs = np.where(np.abs(xs - np.rint(xs)) < 1e-9, np.rint(xs), xs)
    ys = np.where(np.abs(ys - np.rint(ys)) < 1e-9, np.rint(ys), ys)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    src = pixels.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    val = top * (1 - fy) + bot * fy
    val = np.where(inside[..., None], val, as_fill(fill, c))
    return np.clip(np.rint(val), 0, 255).astype(np.uint8)


def to_float(img: Image) -> np.ndarray:
    """(C, H, W) float64 in [0, 1]."""
    return np.transpose(img.pixels, (2, 0, 1)).astype(np.float64) / 255.0
