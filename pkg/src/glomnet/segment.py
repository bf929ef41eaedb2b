"""Automatic tissue segmentation for slide QA.

Pipeline: luminance Otsu threshold (tissue is darker than the slide), erosion
then dilation to drop dust, 8-connected components, and a PCA-oriented
bounding box per component whose contents are resampled upright.

Coordinates follow the raster: ``x`` is the column, ``y`` the row (pointing
down), and pixel centers sit on integer coordinates. A positive angle turns
the +x axis towards +y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy import ndimage

from .imgcore import Image, ImageError, Mask, bilinear_sample

FULL_SE = np.ones((3, 3), dtype=bool)
_EIGHT = np.ones((3, 3), dtype=int)


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class OrientedBox:
    center_x: float
    center_y: float
    length: float
    width: float
    angle_deg: float

    def __post_init__(self):
        if not (self.length >= self.width > 0):
            raise ValueError(f"need length >= width > 0, got {self.length}, {self.width}")
        if not (-90 < self.angle_deg <= 90):
            raise ValueError(f"angle {self.angle_deg} outside (-90, 90]")

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        """(4, 2) array of (x, y) corners."""
        t = math.radians(self.angle_deg)
        ux, uy = math.cos(t), math.sin(t)
        hl, hw = self.length / 2, self.width / 2
        pts = []
        for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            pts.append((self.center_x + su * hl * ux - sv * hw * uy,
                        self.center_y + su * hl * uy + sv * hw * ux))
        return np.array(pts)


@dataclass(frozen=True)
class SegmentConfig:
    erode_iters: int = 2
    dilate_iters: int = 2
    structuring_element: np.ndarray = field(default_factory=lambda: FULL_SE.copy(), compare=False)
    min_area_px: int = 50_000
    background: int = 255

    def __post_init__(self):
        if self.erode_iters < 0 or self.dilate_iters < 0 or self.min_area_px < 0:
            raise ValueError("iteration counts and min_area_px must be >= 0")
        se = np.asarray(self.structuring_element, dtype=bool)
        if se.shape != (3, 3):
            raise ValueError("structuring element must be 3x3")
        object.__setattr__(self, "structuring_element", se)

    def for_downsample(self, factor: int) -> "SegmentConfig":
        """Area threshold is set at full resolution; rescale for a thumbnail."""
        return replace(self, min_area_px=max(1, self.min_area_px // (factor * factor)))


def luminance(img: Image) -> np.ndarray:
    """Integer luminance, half-up rounded Rec.601 weights."""
    px = img.pixels.astype(np.int64)
    if img.channels == 1:
        return px[:, :, 0]
    weighted = 299 * px[:, :, 0] + 587 * px[:, :, 1] + 114 * px[:, :, 2]
    return (weighted + 500) // 1000


def otsu_from_histogram(hist) -> int:
    """Smallest threshold t in 1..255 maximizing between-class variance.

    Class 0 is ``value < t``. Scores are compared as exact rationals:
    ``(N*S0 - n0*S)^2 / (n0*n1)`` is proportional to the between-class
    variance and avoids floating-point near-ties.
    """
    hist = [int(h) for h in hist]
    if len(hist) != 256:
        raise ValueError("histogram must have 256 bins")
    if sum(1 for h in hist if h) < 2:
        raise SegmentationError("degenerate histogram")
    total = sum(hist)
    s_total = sum(i * h for i, h in enumerate(hist))
    best_t, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for t in range(1, 256):
        n0 += hist[t - 1]
        s0 += (t - 1) * hist[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total * s0 - n0 * s_total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(img: Image) -> Tuple[int, Mask]:
    lum = luminance(img)
    hist = np.bincount(lum.ravel(), minlength=256)
    t = otsu_from_histogram(hist)
    return t, Mask(lum < t)


def _shifted(bits: np.ndarray, dy: int, dx: int, pad: bool) -> np.ndarray:
    """out[y, x] = bits[y + dy, x + dx], with ``pad`` outside the raster."""
    h, w = bits.shape
    padded = np.pad(bits, 1, constant_values=pad)
    return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]


def erode(mask: Mask, se=FULL_SE, iters: int = 1, border: bool = False) -> Mask:
    """Binary erosion; pixels outside the raster count as ``border``."""
    se = np.asarray(se, dtype=bool)
    bits = mask.bits
    for _ in range(iters):
        out = np.ones_like(bits)
        for dy, dx in zip(*np.nonzero(se)):
            out &= _shifted(bits, dy - 1, dx - 1, border)
        bits = out
    return Mask(bits)


def dilate(mask: Mask, se=FULL_SE, iters: int = 1) -> Mask:
    se = np.asarray(se, dtype=bool)
    bits = mask.bits
    for _ in range(iters):
        out = np.zeros_like(bits)
        for dy, dx in zip(*np.nonzero(se)):
            # reflected element: x is set if x - b is foreground
            out |= _shifted(bits, 1 - dy, 1 - dx, False)
        bits = out
    return Mask(bits)


def connected_components(mask: Mask, min_area_px: int = 0) -> List[Mask]:
    """8-connected components, largest first; ties by first pixel in raster order."""
    labels, n = ndimage.label(mask.bits, structure=_EIGHT)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    # ndimage numbers labels in raster order of each component's first pixel
    order = sorted(range(n), key=lambda i: -areas[i])
    return [Mask(labels == i + 1) for i in order if areas[i] >= min_area_px]


def _norm_angle(deg: float) -> float:
    deg = deg % 180.0
    if deg > 90.0:
        deg -= 180.0
    if abs(deg) < 1e-9:
        deg = 0.0
    return 90.0 if deg == -90.0 else deg


def box_at_angle(xs: np.ndarray, ys: np.ndarray, angle_deg: float):
    """Tightest box around unit pixels at a fixed orientation.

    Returns (center_x, center_y, extent_along, extent_across). Extents add one
    pixel so a filled axis-aligned n-pixel run measures exactly n.
    """
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    u = xs * c + ys * s
    v = -xs * s + ys * c
    umin, umax, vmin, vmax = u.min(), u.max(), v.min(), v.max()
    uc, vc = (umin + umax) / 2, (vmin + vmax) / 2
    return uc * c - vc * s, uc * s + vc * c, umax - umin + 1.0, vmax - vmin + 1.0


def oriented_bbox(component: Mask) -> OrientedBox:
    ys, xs = np.nonzero(component.bits)
    if xs.size == 0:
        raise SegmentationError("empty mask has no bounding box")
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)
    if xs.size == 1:
        angle = 0.0
    else:
        cov = np.cov(np.vstack([xs, ys]), bias=True)
        evals, evecs = np.linalg.eigh(cov)
        vx, vy = evecs[:, np.argmax(evals)]
        angle = _norm_angle(math.degrees(math.atan2(vy, vx)))
    cx, cy, length, width = box_at_angle(xs, ys, angle)
    if width > length:
        angle = _norm_angle(angle + 90.0)
        cx, cy, length, width = box_at_angle(xs, ys, angle)
    return OrientedBox(float(cx), float(cy), float(length), float(width), angle)


def extract_rotated(img: Image, box: OrientedBox, background=255) -> Image:
    """Resample the box contents upright: major axis along output columns."""
    out_w = int(round(box.length))
    out_h = int(round(box.width))
    if out_w < 1 or out_h < 1:
        raise ImageError(f"degenerate box {box}")
    t = math.radians(box.angle_deg)
    c, s = (1.0, 0.0) if box.angle_deg == 0 else (math.cos(t), math.sin(t))
    v, u = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    u -= (out_w - 1) / 2
    v -= (out_h - 1) / 2
    xs = box.center_x + u * c - v * s
    ys = box.center_y + u * s + v * c
    if not ((xs >= 0) & (xs <= img.width - 1) & (ys >= 0) & (ys <= img.height - 1)).any():
        raise ImageError(f"box {box} does not overlap the {img.width}x{img.height} image")
    return Image(bilinear_sample(img.pixels, xs, ys, background), pixel_size_um=img.pixel_size_um)


class Segment(NamedTuple):
    box: OrientedBox
    image: Image
    area_px: int


def find_segments(img: Image, cfg: SegmentConfig = SegmentConfig()) -> List[Segment]:
    try:
        _, mask = otsu_threshold(img)
    except SegmentationError:
        return []  # constant slide: nothing to separate from background
    mask = erode(mask, cfg.structuring_element, cfg.erode_iters)
    mask = dilate(mask, cfg.structuring_element, cfg.dilate_iters)
    out = []
    for comp in connected_components(mask, cfg.min_area_px):
        box = oriented_bbox(comp)
        out.append(Segment(box, extract_rotated(img, box, cfg.background), comp.area))
    return out


def segment_slide(img: Image, cfg: SegmentConfig = SegmentConfig()) -> List[Tuple[OrientedBox, Image]]:
    return [(s.box, s.image) for s in find_segments(img, cfg)]
