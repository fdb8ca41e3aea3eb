"""Desk-scale synthetic case studies.

Landslides are elliptical blobs with a strong dNDVI drop and a weak SAR
backscatter change buried in speckle and correlated clutter. Water ponds are
ellipses of the same size with the same dNDVI drop but are dark in SAR, so
optical-only models confuse them with landslides while SAR+optical models
can separate the two.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .scenes import DatasetSplit, Scene, SceneError, save_scene, write_dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    height: int = 256
    width: int = 256
    n_blobs: tuple[int, int] = (3, 8)
    blob_radius: tuple[float, float] = (4.0, 11.0)
    min_positive_fraction: float = 0.001
    max_positive_fraction: float = 0.05
    water_fraction: float = 0.008
    sar_noise: float = 2.0  # dB, per-pixel speckle std
    sar_clutter: float = 0.8  # dB, spatially correlated change unrelated to landslides
    sar_signal: float = 1.4  # dB, backscatter increase inside landslides
    optical_signal: float = 0.35  # dNDVI drop inside landslides
    optical_noise: float = 0.05  # dNDVI background std

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise SceneError("synthetic scene size must be positive")
        lo, hi = self.n_blobs
        if hi < 1 or lo > hi or lo < 0:
            raise SceneError(f"n_blobs range {self.n_blobs} yields no landslides")
        if not 0 <= self.water_fraction < 1:
            raise SceneError("water_fraction must lie in [0, 1)")
        if self.blob_radius[0] <= 0 or self.blob_radius[0] > self.blob_radius[1]:
            raise SceneError(f"bad blob_radius range {self.blob_radius}")
        if not 0 < self.min_positive_fraction <= self.max_positive_fraction <= 1:
            raise SceneError("positive fraction bounds must satisfy 0 < min <= max <= 1")


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="reflect")
    sd = f.std()
    return (f - f.mean()) / sd if sd > 0 else f


def _ellipse(shape, cy, cx, ry, rx, theta) -> np.ndarray:
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return (u * u + v * v) <= 1.0


def _water_mask(rng, params: SynthSpec) -> np.ndarray:
    shape = (params.height, params.width)
    water = np.zeros(shape, dtype=bool)
    target = params.water_fraction * params.height * params.width
    attempts = 0
    while water.sum() < target and attempts < 1000:
        attempts += 1
        pond = _ellipse(
            shape,
            rng.uniform(0, params.height),
            rng.uniform(0, params.width),
            rng.uniform(*params.blob_radius),
            rng.uniform(*params.blob_radius),
            rng.uniform(0, np.pi),
        )
        water |= pond
    return water


def _landslides(rng, params: SynthSpec, water: np.ndarray) -> np.ndarray:
    shape = (params.height, params.width)
    n_px = params.height * params.width
    label = np.zeros(shape, dtype=bool)
    target = int(rng.integers(params.n_blobs[0], params.n_blobs[1] + 1))
    placed = 0
    attempts = 0
    while attempts < 50 * max(target, 1):
        attempts += 1
        enough = placed >= target and label.sum() >= params.min_positive_fraction * n_px
        if enough:
            break
        ry = rng.uniform(*params.blob_radius)
        rx = rng.uniform(*params.blob_radius)
        cy = rng.uniform(0, params.height)
        cx = rng.uniform(0, params.width)
        blob = _ellipse(shape, cy, cx, ry, rx, rng.uniform(0, np.pi))
        if not blob.any():
            # radius smaller than a pixel: take the centre pixel
            blob = np.zeros(shape, dtype=bool)
            blob[min(int(cy), params.height - 1), min(int(cx), params.width - 1)] = True
        if (blob & water).any() or (blob & label).any():
            continue
        if (label | blob).sum() > params.max_positive_fraction * n_px:
            continue
        label |= blob
        placed += 1
    if not label.any():
        raise SceneError("synthetic params yields zero positive pixels")
    if label.sum() < params.min_positive_fraction * n_px:
        raise SceneError(
            f"synthetic params reaches only {label.sum() / n_px:.4%} positive pixels "
            f"(min {params.min_positive_fraction:.2%}); enlarge blob_radius or n_blobs"
        )
    return label


def synth_case_study(seed: int, params: SynthSpec | None = None, scene_id: str | None = None) -> Scene:
    """Generate one deterministic synthetic scene for ``(seed, params)``."""
    params = params or SynthSpec()
    params.validate()
    rng = np.random.default_rng(seed)
    shape = (params.height, params.width)

    elevation = 800.0 + 400.0 * _smooth_field(rng, shape, sigma=max(shape) / 8)
    gy, gx = np.gradient(elevation, 10.0)
    slope = np.degrees(np.arctan(np.hypot(gx, gy)))
    aspect = np.arctan2(gy, gx)

    water = _water_mask(rng, params)
    label = _landslides(rng, params, water)

    def speckle() -> np.ndarray:
        return params.sar_noise * rng.standard_normal(shape)

    texture = 1.5 * _smooth_field(rng, shape, sigma=3.0)
    pre_vv = -9.0 + texture + speckle()
    pre_vh = -15.0 + texture + speckle()
    pre_vv[water] = -21.0 + 0.5 * rng.standard_normal(int(water.sum()))
    pre_vh[water] = -27.0 + 0.5 * rng.standard_normal(int(water.sum()))
    clutter = params.sar_clutter * _smooth_field(rng, shape, sigma=4.0)
    change = params.sar_signal * label + clutter
    post_vv = pre_vv + change + speckle()
    post_vh = pre_vh + change + speckle()
    post_vv[water] = -21.0 + 0.5 * rng.standard_normal(int(water.sum()))
    post_vh[water] = -27.0 + 0.5 * rng.standard_normal(int(water.sum()))

    layover = (slope > np.quantile(slope, 0.99)) & (np.cos(aspect) > 0)
    shadow = (slope > np.quantile(slope, 0.99)) & (np.cos(aspect) <= 0)
    lia = 39.0 + slope * np.cos(aspect) + 0.5 * rng.standard_normal(shape)

    climate_codes = np.array([14, 15, 26, 27, 43])  # Köppen-Geiger-style class codes
    climate = np.where(_smooth_field(rng, shape, sigma=max(shape) / 4) > 0, *rng.choice(climate_codes, 2, replace=False))
    tree = np.clip(12.0 + 6.0 * _smooth_field(rng, shape, sigma=6.0), 0.0, None)
    tree[water] = 0.0
    landcover = np.digitize(_smooth_field(rng, shape, sigma=8.0), [-1.0, -0.3, 0.3, 1.0]) + 1

    # background noise is clipped so only landslides and water reach landslide-like drops
    dndvi = params.optical_noise * np.clip(rng.standard_normal(shape), -3.0, 3.0)
    drop = label | water
    edge = ndimage.gaussian_filter(drop.astype(float), 0.7)
    dndvi -= params.optical_signal * np.clip(1.5 * edge, 0.0, 1.0) * drop

    bands = np.stack(
        [
            pre_vv,
            post_vv,
            post_vv - pre_vv,
            pre_vh,
            post_vh,
            post_vh - pre_vh,
            layover,
            shadow,
            lia,
            elevation,
            slope,
            climate,
            tree,
            landcover,
            dndvi,
        ]
    ).astype(np.float32)
    meta = {
        "synthetic": True,
        "seed": int(seed),
        "resolution_m": 10,
        "params": json.loads(json.dumps(asdict(params))),
    }
    return Scene(
        id=scene_id or f"synth_{seed}",
        bands=bands,
        label=label.astype(np.uint8),
        valid_mask=np.ones(shape, dtype=np.uint8),
        meta=meta,
    )


def synth_dataset(
    out_dir: str | Path,
    n_scenes: int = 21,
    seed: int = 7,
    size: tuple[int, int] = (256, 256),
    params: SynthSpec | None = None,
    n_val: int = 4,
    n_test: int = 1,
) -> Path:
    """Write ``n_scenes`` synthetic scenes plus a ``dataset.json`` manifest.

    The first ``n_scenes - n_val - n_test`` scenes form the train split, the
    next ``n_val`` the validation split and the rest the test split.
    """
    if n_scenes < n_val + n_test + 1:
        raise SceneError(f"{n_scenes} scenes cannot fill a split with {n_val} val and {n_test} test scenes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = replace(params or SynthSpec(), height=size[0], width=size[1])
    files, ids = [], []
    for i in range(n_scenes):
        sid = f"scene_{i:02d}"
        scene = synth_case_study(seed * 1000 + i, base, scene_id=sid)
        fname = f"{sid}.bst"
        save_scene(scene, out / fname)
        files.append(fname)
        ids.append(sid)
    n_train = n_scenes - n_val - n_test
    split = DatasetSplit(train=ids[:n_train], val=ids[n_train : n_train + n_val], test=ids[n_train + n_val :])
    return write_dataset(out / "dataset.json", files, split)
