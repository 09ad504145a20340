"""Object-aware mask sampling.

A mask draw picks one of three generators (free-form brush strokes,
object-shaped silhouette, rectangle) by fixed mixture weights, then
subtracts any instance that the mask would mostly swallow: an instance
whose overlap ratio |mask & instance| / |instance| exceeds the threshold
is carved out of the mask with a dilated boundary, which biases training
toward completing partially-occluded objects instead of hallucinating
whole new ones.  Draws whose area falls below the minimum are rejected
and resampled up to a budget; if every attempt fails, the largest
candidate is returned and flagged.

Masks are boolean [H, W], True = hole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .prng import Prng

TYPE_NAMES = ("freeform", "object", "rectangle")


@dataclass
class MaskConfig:
    mixture: tuple = (0.45, 0.45, 0.10)
    overlap_threshold: float = 0.5
    boundary_dilation: int = 2
    min_area_frac: float = 0.05
    max_iterations: int = 5
    # free-form strokes
    stroke_count: tuple = (1, 4)
    vertex_count: tuple = (3, 8)
    brush_width_frac: tuple = (0.08, 0.2)
    segment_length_frac: tuple = (0.15, 0.35)
    angle_jitter: float = 1.2
    extra_rect_prob: float = 0.3
    extra_rect_side_frac: tuple = (0.1, 0.25)
    # object-shaped
    object_scale_frac: tuple = (0.4, 0.9)
    object_dilation: tuple = (0, 3)
    # rectangle branch
    rect_side_frac: tuple = (0.3, 0.65)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)-square structuring element."""
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    out = mask.astype(bool).copy()
    if radius == 0:
        return out
    h, w = mask.shape
    src = mask.astype(bool)
    for dy in range(-radius, radius + 1):
        ys = slice(max(0, dy), min(h, h + dy))
        yd = slice(max(0, -dy), min(h, h - dy))
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            xs = slice(max(0, dx), min(w, w + dx))
            xd = slice(max(0, -dx), min(w, w - dx))
            out[yd, xd] |= src[ys, xs]
    return out


def _stamp_disc(mask: np.ndarray, cy: float, cx: float, radius: float) -> None:
    h, w = mask.shape
    r = max(int(math.ceil(radius)), 0)
    y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
    if y0 >= y1 or x0 >= x1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] |= (ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2


def free_form_mask(rng: Prng, h: int, w: int, cfg: MaskConfig) -> np.ndarray:
    """Union of polyline brush strokes plus optional rectangles."""
    mask = np.zeros((h, w), dtype=bool)
    scale = min(h, w)
    lo, hi = cfg.stroke_count
    strokes = int(rng.randint(lo, hi + 1)) if hi >= lo else lo
    for _ in range(strokes):
        width = (cfg.brush_width_frac[0]
                 + float(rng.uniform()) * (cfg.brush_width_frac[1] - cfg.brush_width_frac[0])) * scale
        cy = float(rng.uniform()) * (h - 1)
        cx = float(rng.uniform()) * (w - 1)
        angle = float(rng.uniform()) * 2 * math.pi
        _stamp_disc(mask, cy, cx, width / 2)
        for _ in range(int(rng.randint(cfg.vertex_count[0], cfg.vertex_count[1] + 1))):
            angle += (float(rng.uniform()) * 2 - 1) * cfg.angle_jitter
            length = (cfg.segment_length_frac[0]
                      + float(rng.uniform()) * (cfg.segment_length_frac[1] - cfg.segment_length_frac[0])) * scale
            ny = cy + length * math.sin(angle)
            nx = cx + length * math.cos(angle)
            steps = max(int(math.ceil(length)), 1)
            for t in range(1, steps + 1):
                _stamp_disc(mask, cy + (ny - cy) * t / steps, cx + (nx - cx) * t / steps, width / 2)
            cy = min(max(ny, 0.0), h - 1.0)
            cx = min(max(nx, 0.0), w - 1.0)
    if strokes > 0 and float(rng.uniform()) < cfg.extra_rect_prob:
        mask |= rectangle_mask(rng, h, w, side_frac=cfg.extra_rect_side_frac)
    return mask


def rectangle_mask(rng: Prng, h: int, w: int, side_frac=None) -> np.ndarray:
    lo, hi = side_frac if side_frac is not None else (0.3, 0.65)
    rh = max(1, int(round((lo + float(rng.uniform()) * (hi - lo)) * h)))
    rw = max(1, int(round((lo + float(rng.uniform()) * (hi - lo)) * w)))
    y0 = int(rng.randint(0, h - rh + 1))
    x0 = int(rng.randint(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[y0 : y0 + rh, x0 : x0 + rw] = True
    return mask


def _nearest_resize(sil: np.ndarray, nh: int, nw: int) -> np.ndarray:
    sh, sw = sil.shape
    rows = np.minimum((np.arange(nh) + 0.5) * sh / nh, sh - 1).astype(int)
    cols = np.minimum((np.arange(nw) + 0.5) * sw / nw, sw - 1).astype(int)
    return sil[rows][:, cols]


def object_shaped_mask(rng: Prng, h: int, w: int, silhouettes: list, cfg: MaskConfig) -> np.ndarray:
    """A library silhouette, randomly scaled, placed, and dilated."""
    if not silhouettes:
        raise ValueError("silhouette library is empty")
    sil = silhouettes[int(rng.randint(0, len(silhouettes)))].astype(bool)
    if not sil.any():
        raise ValueError("silhouette has no foreground pixels")
    lo, hi = cfg.object_scale_frac
    target = (lo + float(rng.uniform()) * (hi - lo)) * min(h, w)
    factor = target / max(sil.shape)
    nh = min(max(int(round(sil.shape[0] * factor)), 1), h)
    nw = min(max(int(round(sil.shape[1] * factor)), 1), w)
    resized = _nearest_resize(sil, nh, nw)
    y0 = int(rng.randint(0, h - nh + 1))
    x0 = int(rng.randint(0, w - nw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[y0 : y0 + nh, x0 : x0 + nw] = resized
    radius = int(rng.randint(cfg.object_dilation[0], cfg.object_dilation[1] + 1))
    return dilate(mask, radius) if radius > 0 else mask


def overlap_ratio(mask: np.ndarray, silhouette: np.ndarray) -> float:
    """|mask & silhouette| / |silhouette|."""
    area = int(silhouette.sum())
    if area == 0:
        raise ValueError("silhouette has zero area")
    return float(np.logical_and(mask, silhouette).sum()) / area


def exclude_instances(mask: np.ndarray, instance_map: np.ndarray, cfg: MaskConfig):
    """Carve mostly-covered instances (dilated) out of the mask.

    Ratios are measured against the incoming mask for every instance, so
    the result does not depend on instance order.
    """
    ids = np.unique(instance_map)
    excluded = []
    carve = np.zeros_like(mask)
    for iid in ids:
        if iid == 0:
            continue
        sil = instance_map == iid
        if overlap_ratio(mask, sil) > cfg.overlap_threshold:
            carve |= dilate(sil, cfg.boundary_dilation)
            excluded.append(int(iid))
    return np.logical_and(mask, np.logical_not(carve)), excluded


def sample_object_aware_mask(rng: Prng, instance_map: np.ndarray, cfg: MaskConfig, silhouettes: list):
    """Full pipeline: mixture draw, generate, exclude, area-check, retry.

    Returns (mask bool [H,W], info dict).  info records the generator type,
    iteration count, excluded instance ids, final area fraction, and
    whether the largest-candidate fallback fired.
    """
    h, w = instance_map.shape
    min_area = cfg.min_area_frac * h * w
    best = None
    for it in range(cfg.max_iterations):
        kind = rng.choice_index(cfg.mixture)
        if kind == 0:
            raw = free_form_mask(rng, h, w, cfg)
        elif kind == 1:
            raw = object_shaped_mask(rng, h, w, silhouettes, cfg)
        else:
            raw = rectangle_mask(rng, h, w, side_frac=cfg.rect_side_frac)
        mask, excluded = exclude_instances(raw, instance_map, cfg)
        area = int(mask.sum())
        info = {
            "type": TYPE_NAMES[kind],
            "iterations": it + 1,
            "excluded": excluded,
            "area_frac": area / (h * w),
            "fallback": False,
        }
        if area >= min_area:
            return mask, info
        if best is None or area > best[2]:
            best = (mask, info, area)
    mask, info, _ = best
    info["fallback"] = True
    info["iterations"] = cfg.max_iterations
    return mask, info


def make_blob_silhouettes(seed: int, count: int = 8, size: int = 48) -> list:
    """Procedural smooth-contour blobs for the object-mask library."""
    rng = Prng(seed).substream("silhouettes")
    ys, xs = np.mgrid[0:size, 0:size]
    cy = cx = (size - 1) / 2
    dy, dx = ys - cy, xs - cx
    theta = np.arctan2(dy, dx)
    rr = np.sqrt(dy**2 + dx**2)
    out = []
    for i in range(count):
        srng = rng.substream(f"blob{i}")
        base = size * (0.28 + 0.08 * float(srng.uniform()))
        radius = np.full_like(theta, base)
        for k in range(2, 6):
            amp = base * 0.22 * float(srng.uniform()) / k
            phase = float(srng.uniform()) * 2 * np.pi
            radius += amp * np.cos(k * theta + phase)
        out.append(rr <= radius)
    return out


def load_silhouettes(directory: str) -> list:
    """Binary silhouettes from a directory of PNGs (any nonzero pixel = fg)."""
    import os

    from .pngio import read_png

    files = sorted(f for f in os.listdir(directory) if f.lower().endswith(".png"))
    if not files:
        raise ValueError(f"no PNG silhouettes found in {directory}")
    sils = []
    for f in files:
        arr = read_png(os.path.join(directory, f))
        if arr.ndim == 3:
            arr = arr.max(axis=2)
        sils.append(arr > 0)
    return sils
