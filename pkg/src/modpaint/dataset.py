"""Procedural training images with instance-segmentation maps.

Each image is a textured background (gradient, stripes, checker, or soft
blobs) with up to four non-overlapping flat-colored objects (ellipses and
rectangles) painted on top.  The instance map labels object pixels with
ids 1..n, background 0.  Everything is a pure function of (seed, index),
so any sample can be regenerated without storing the dataset.
"""

from __future__ import annotations

import numpy as np

from .prng import Prng


def _grid(res):
    ys, xs = np.mgrid[0:res, 0:res]
    return ys / (res - 1), xs / (res - 1)


def _background(rng: Prng, res: int) -> np.ndarray:
    kind = rng.randint(0, 4)
    ys, xs = _grid(res)
    c0 = rng.uniform((3,)) * 2 - 1
    c1 = rng.uniform((3,)) * 2 - 1
    if kind == 0:  # linear gradient
        theta = float(rng.uniform()) * 2 * np.pi
        t = (np.cos(theta) * xs + np.sin(theta) * ys + 1) / 2
    elif kind == 1:  # stripes
        theta = float(rng.uniform()) * 2 * np.pi
        freq = 2 + float(rng.uniform()) * 8
        t = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys))
    elif kind == 2:  # checker
        n = int(rng.randint(2, 7))
        t = ((np.floor(xs * n) + np.floor(ys * n)) % 2).astype(np.float64)
    else:  # soft blobs
        t = np.zeros((res, res))
        for _ in range(int(rng.randint(2, 6))):
            cy, cx = rng.uniform((2,))
            sigma = 0.1 + float(rng.uniform()) * 0.25
            t += np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma**2))
        t = t / max(t.max(), 1e-9)
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]
    return np.clip(img, -1.0, 1.0)


def _object_footprint(rng: Prng, res: int) -> np.ndarray:
    ys, xs = np.mgrid[0:res, 0:res]
    cy = int(rng.randint(res // 6, res - res // 6))
    cx = int(rng.randint(res // 6, res - res // 6))
    ry = int(rng.randint(res // 10, res // 3))
    rx = int(rng.randint(res // 10, res // 3))
    if rng.uniform() < 0.5:
        return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    return (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)


class ProceduralDataset:
    def __init__(self, seed: int, size: int = 10000, resolution: int = 64):
        if size <= 0:
            raise ValueError(f"dataset size must be positive, got {size}")
        self.seed = seed
        self.size = size
        self.resolution = resolution
        self._root = Prng(seed).substream("dataset")

    def __len__(self) -> int:
        return self.size

    def sample(self, index: int):
        """Returns (image float64 [3,H,W] in [-1,1], instances uint16 [H,W])."""
        if not 0 <= index < self.size:
            raise IndexError(f"index {index} out of range [0, {self.size})")
        rng = self._root.substream(f"img{index}")
        res = self.resolution
        img = _background(rng.substream("bg"), res)
        instances = np.zeros((res, res), dtype=np.uint16)
        n_objects = int(rng.randint(0, 5))
        placed = 0
        obj_rng = rng.substream("objects")
        for _ in range(n_objects * 4):  # rejection budget
            if placed >= n_objects:
                break
            fp = _object_footprint(obj_rng, res)
            if fp.sum() < 8 or (instances[fp] != 0).any():
                continue
            placed += 1
            color = obj_rng.uniform((3,)) * 2 - 1
            shade = 1.0 - 0.15 * obj_rng.uniform()
            img[:, fp] = (color * shade)[:, None]
            instances[fp] = placed
        return img, instances

    def batch(self, rng: Prng, batch_size: int):
        """Draw a batch by random indices; rng controls the index draw only."""
        idx = [int(rng.randint(0, self.size)) for _ in range(batch_size)]
        imgs, insts = zip(*(self.sample(i) for i in idx))
        return np.stack(imgs), np.stack(insts), idx
