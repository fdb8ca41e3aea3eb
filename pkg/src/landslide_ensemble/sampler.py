"""Positive-guaranteed random crops and 90-degree rotations for training."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .scenes import BandSetting, NormStats, Scene, normalized_stack, select_bands

logger = logging.getLogger(__name__)

CROP_SIZE = 256


class SamplerError(ValueError):
    pass


@dataclass
class Patch:
    stack: np.ndarray  # (C, size, size) float32
    label: np.ndarray  # (size, size) uint8
    valid: np.ndarray  # (size, size) uint8
    source_scene: str
    origin: tuple[int, int]
    k: int = 0  # number of 90-degree rotations applied


def _crop_origin(scene: Scene, size: int, rng: np.random.Generator) -> tuple[int, int]:
    h, w = scene.shape
    if h < size or w < size:
        raise SamplerError(f"scene {scene.id} ({h}x{w}) is smaller than crop {size}x{size}")
    pos = np.flatnonzero(scene.positive_valid)
    if pos.size == 0:
        raise SamplerError(f"scene {scene.id} has no valid positive pixels")
    r, c = divmod(int(pos[rng.integers(pos.size)]), w)
    # windows [r0, r0 + size) containing r and lying in-bounds
    r0 = int(rng.integers(max(0, r - size + 1), min(r, h - size) + 1))
    c0 = int(rng.integers(max(0, c - size + 1), min(c, w - size) + 1))
    return r0, c0


def smart_crop(
    scene: Scene,
    setting: BandSetting | str,
    size: int = CROP_SIZE,
    rng: np.random.Generator | None = None,
    stats: NormStats | None = None,
) -> Patch:
    """Random ``size`` x ``size`` crop that contains a valid landslide pixel.

    A valid positive pixel is drawn uniformly first, then a window is drawn
    uniformly among all in-bounds windows that contain it. With ``stats`` the
    stack is normalized; otherwise raw band values are returned.
    """
    rng = rng if rng is not None else np.random.default_rng()
    r0, c0 = _crop_origin(scene, size, rng)
    sl = (slice(r0, r0 + size), slice(c0, c0 + size))
    if stats is not None:
        full = normalized_stack(scene, setting, stats)
    else:
        full = select_bands(scene, setting)
    return Patch(
        stack=np.ascontiguousarray(full[(slice(None),) + sl]),
        label=scene.label[sl].copy(),
        valid=scene.valid_mask[sl].copy(),
        source_scene=scene.id,
        origin=(r0, c0),
    )


def rotate90(patch: Patch, k: int) -> Patch:
    if k not in (0, 1, 2, 3):
        raise SamplerError(f"rotation k must be in 0..3, got {k}")
    return Patch(
        stack=np.ascontiguousarray(np.rot90(patch.stack, k, axes=(1, 2))),
        label=np.ascontiguousarray(np.rot90(patch.label, k)),
        valid=np.ascontiguousarray(np.rot90(patch.valid, k)),
        source_scene=patch.source_scene,
        origin=patch.origin,
        k=(patch.k + k) % 4,
    )


def eligible_scenes(scenes: Sequence[Scene], size: int = CROP_SIZE) -> list[Scene]:
    keep = []
    for s in scenes:
        if s.height < size or s.width < size:
            logger.warning("excluding scene %s (%dx%d) smaller than crop %d", s.id, s.height, s.width, size)
        elif not s.positive_valid.any():
            logger.warning("excluding scene %s without valid positive pixels", s.id)
        else:
            keep.append(s)
    return keep


def batches(
    scenes: Sequence[Scene],
    setting: BandSetting | str,
    batch_size: int = 4,
    rng: np.random.Generator | None = None,
    stats: NormStats | None = None,
    size: int = CROP_SIZE,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Endless stream of ``(stacks, labels, valids)`` batches.

    Each patch: scene drawn uniformly with replacement, smart crop, then a
    rotation by a uniformly drawn k in {0, 1, 2, 3}.
    """
    rng = rng if rng is not None else np.random.default_rng()
    pool = eligible_scenes(scenes, size)
    if not pool:
        raise SamplerError("no scenes eligible for smart cropping")
    setting = BandSetting.parse(setting)
    # normalize each scene once; crops slice the cached stack
    cache = {}
    for s in pool:
        cache[s.id] = normalized_stack(s, setting, stats) if stats is not None else select_bands(s, setting)
    while True:
        xs, ys, vs = [], [], []
        for _ in range(batch_size):
            scene = pool[int(rng.integers(len(pool)))]
            r0, c0 = _crop_origin(scene, size, rng)
            sl = (slice(r0, r0 + size), slice(c0, c0 + size))
            p = Patch(
                stack=cache[scene.id][(slice(None),) + sl],
                label=scene.label[sl],
                valid=scene.valid_mask[sl],
                source_scene=scene.id,
                origin=(r0, c0),
            )
            p = rotate90(p, int(rng.integers(4)))
            xs.append(p.stack)
            ys.append(p.label)
            vs.append(p.valid)
        yield np.stack(xs), np.stack(ys), np.stack(vs)


__all__ = ["CROP_SIZE", "Patch", "SamplerError", "batches", "eligible_scenes", "rotate90", "smart_crop"]
