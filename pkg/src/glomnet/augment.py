"""On-the-fly chip augmentation.

Order is fixed: load-time downsample, flips, one composed
rotate/scale/translate about the image center (bilinear, single
interpolation), then a center crop. All randomness comes from the explicit
generator passed in; see :func:`glomnet.rng.stream`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import Image, ImageError, bilinear_sample, center_crop, downsample


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 15.0
    translate_frac: float = 0.07
    zoom_frac: float = 0.05
    flip_prob: float = 0.5
    crop_px: int = 400
    load_downsample: int = 2
    fill: int = 255

    def __post_init__(self):
        if min(self.rotation_deg, self.translate_frac, self.zoom_frac) < 0:
            raise ValueError("augmentation magnitudes must be >= 0")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.zoom_frac >= 1:
            raise ValueError("zoom_frac must be < 1")
        if self.load_downsample < 1 or self.crop_px < 1:
            raise ValueError("load_downsample and crop_px must be >= 1")

    @classmethod
    def identity(cls, crop_px: int = 400, load_downsample: int = 2) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0, crop_px, load_downsample)


@dataclass(frozen=True)
class AugmentParams:
    angle_deg: float = 0.0
    dx_px: float = 0.0
    dy_px: float = 0.0
    scale: float = 1.0
    flip_lr: bool = False
    flip_ud: bool = False


def sample_params(rng: np.random.Generator, cfg: AugmentConfig, side_px: int) -> AugmentParams:
    t = cfg.translate_frac * side_px
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    dx = rng.uniform(-t, t)
    dy = rng.uniform(-t, t)
    scale = rng.uniform(1 - cfg.zoom_frac, 1 + cfg.zoom_frac)
    flip_lr = bool(rng.random() < cfg.flip_prob)
    flip_ud = bool(rng.random() < cfg.flip_prob)
    return AugmentParams(float(angle), float(dx), float(dy), float(scale), flip_lr, flip_ud)


def apply_affine(img: Image, p: AugmentParams, fill=255) -> Image:
    px = img.pixels
    if p.flip_lr:
        px = px[:, ::-1]
    if p.flip_ud:
        px = px[::-1]
    if p.angle_deg == 0 and p.scale == 1 and p.dx_px == 0 and p.dy_px == 0:
        return Image(px, pixel_size_um=img.pixel_size_um)
    h, w = px.shape[:2]
    cx, cy = (w - 1) / 2, (h - 1) / 2
    t = math.radians(p.angle_deg)
    c, s = math.cos(t), math.sin(t)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # forward: dst = C + scale * R (src - C) + d, inverted per output pixel
    ux = (xs - cx - p.dx_px) / p.scale
    uy = (ys - cy - p.dy_px) / p.scale
    src_x = cx + c * ux + s * uy
    src_y = cy - s * ux + c * uy
    return Image(bilinear_sample(px, src_x, src_y, fill), pixel_size_um=img.pixel_size_um)


def center_path(img: Image, cfg: AugmentConfig) -> Image:
    """Deterministic preprocessing used at inference time."""
    small = downsample(img, cfg.load_downsample)
    return center_crop(small, cfg.crop_px, cfg.crop_px)


def augment_chip(img: Image, rng: np.random.Generator, cfg: AugmentConfig) -> Image:
    return augment_downsampled(downsample(img, cfg.load_downsample), rng, cfg)


def augment_downsampled(small: Image, rng: np.random.Generator, cfg: AugmentConfig) -> Image:
    """augment_chip for a chip already reduced by ``cfg.load_downsample``."""
    if min(small.width, small.height) < cfg.crop_px:
        raise ImageError(f"downsampled chip {small.width}x{small.height} is smaller than "
                         f"a {cfg.crop_px} px crop")
    if small.channels != 3:
        raise ImageError("augmentation expects 3-channel chips")
    params = sample_params(rng, cfg, small.width)
    return center_crop(apply_affine(small, params, cfg.fill), cfg.crop_px, cfg.crop_px)
