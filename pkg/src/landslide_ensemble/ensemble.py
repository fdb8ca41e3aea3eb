"""Validation-ranked top-K ensembles built by pixel-averaging member probability maps."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .matrix import MatrixManifest
from .metrics import ConfusionCounts, confusion, scores
from .models import ModelError, predict_scene
from .scenes import BandSetting, NormStats, Scene, SceneError, read_container, write_container
from .trainer import ModelRecord, RunStore, lr_tag

logger = logging.getLogger(__name__)

MODES = ("mean", "vote")


class EnsembleError(ValueError):
    pass


def _rank_key(r: ModelRecord) -> tuple:
    return (-r.best_val_f1, r.config.arch, r.config.loss, r.config.learning_rate)


def rank_models(manifest: MatrixManifest, setting: BandSetting | str) -> list[ModelRecord]:
    """Successful records sorted by descending validation F1, ties by (arch, loss, lr)."""
    setting = BandSetting.parse(setting)
    ok = [r for r in manifest.for_setting(setting) if r.ok]
    if not ok:
        raise EnsembleError(f"no successful records for setting {setting.value}")
    return sorted(ok, key=_rank_key)


@dataclass(frozen=True)
class EnsembleSpec:
    setting: BandSetting
    k: int
    members: tuple[ModelRecord, ...]
    threshold: float = 0.5
    mode: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "setting", BandSetting.parse(self.setting))
        object.__setattr__(self, "members", tuple(self.members))
        if self.k < 1 or self.k != len(self.members):
            raise EnsembleError(f"k={self.k} does not match {len(self.members)} members")
        if not 0 < self.threshold < 1:
            raise EnsembleError("threshold must lie in (0, 1)")
        if self.mode not in MODES:
            raise EnsembleError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for m in self.members:
            if m.config.setting != self.setting:
                raise EnsembleError(f"member {m.config.key} belongs to {m.config.setting.value}, not {self.setting.value}")
            if not m.ok:
                raise EnsembleError(f"member {m.config.key} is a failed session")

    @property
    def member_keys(self) -> list[str]:
        return [m.config.key for m in self.members]

    def provenance(self) -> dict[str, Any]:
        return {
            "kind": "ensemble",
            "setting": self.setting.value,
            "k": self.k,
            "threshold": self.threshold,
            "mode": self.mode,
            "members": [
                {
                    "arch": m.config.arch,
                    "loss": m.config.loss,
                    "lr": m.config.learning_rate,
                    "key": m.config.key,
                    "best_val_f1": m.best_val_f1,
                    "weights": m.weights_path,
                }
                for m in self.members
            ],
        }


def top_k(manifest: MatrixManifest, setting: BandSetting | str, k: int, threshold: float = 0.5, mode: str = "mean") -> EnsembleSpec:
    ranked = rank_models(manifest, setting)
    if not 1 <= k <= len(ranked):
        raise EnsembleError(f"k={k} outside 1..{len(ranked)} successful records")
    return EnsembleSpec(BandSetting.parse(setting), k, tuple(ranked[:k]), threshold, mode)


@dataclass
class ProbabilityMap:
    values: np.ndarray  # (H, W) float32 in [0, 1]
    scene_id: str
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise EnsembleError(f"probability map must be 2-D, got shape {self.values.shape}")
        if self.values.size and (not np.isfinite(self.values).all() or self.values.min() < 0 or self.values.max() > 1):
            raise EnsembleError("probability values must lie in [0, 1]")


def average_maps(maps: Mapping[str, np.ndarray]) -> np.ndarray:
    """Mean of member maps, summed pairwise in sorted-id order so the result
    does not depend on the order members were supplied in."""
    if not maps:
        raise EnsembleError("no member maps to average")
    ids = sorted(maps)
    shapes = {np.shape(maps[i]) for i in ids}
    if len(shapes) != 1:
        raise EnsembleError(f"member maps differ in shape: {sorted(shapes)}")
    stack = np.stack([np.asarray(maps[i], dtype=np.float64) for i in ids])
    mean = _kernels.pairwise_sum(stack) / len(ids)
    return np.clip(mean, 0.0, 1.0).astype(np.float32)


def binarize(values: ProbabilityMap | np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where value >= threshold, else 0."""
    if not 0 < threshold < 1:
        raise EnsembleError(f"threshold {threshold} outside (0, 1)")
    arr = values.values if isinstance(values, ProbabilityMap) else np.asarray(values)
    return (arr >= threshold).astype(np.uint8)


def member_map(record: ModelRecord, scene: Scene, stats: NormStats, store: RunStore, tile: int | None = None) -> np.ndarray:
    tile = tile or record.config.crop_size
    try:
        model = store.load_model(record)
    except (OSError, ModelError) as exc:
        raise EnsembleError(f"cannot load weights for {record.config.key}: {exc}") from exc
    return predict_scene(model, scene, record.config.setting, stats, tile=tile, stride=tile)


def _combine(plan: EnsembleSpec, maps: Mapping[str, np.ndarray]) -> np.ndarray:
    if plan.mode == "vote":
        # fraction of members voting positive; >= 0.5 is a majority (ties count)
        maps = {k: binarize(v, plan.threshold).astype(np.float64) for k, v in maps.items()}
    return average_maps(maps)


def ensemble_predict(
    plan: EnsembleSpec,
    scene: Scene,
    stats: NormStats,
    store: RunStore,
    cache: dict[str, np.ndarray] | None = None,
) -> ProbabilityMap:
    """Pixel-wise mean of the members' probability maps over ``scene``.

    ``cache`` maps member keys to already computed maps for this scene and is
    filled in as a side effect.
    """
    cache = {} if cache is None else cache
    for m in plan.members:
        if m.config.key not in cache:
            cache[m.config.key] = member_map(m, scene, stats, store)
    values = _combine(plan, {m.config.key: cache[m.config.key] for m in plan.members})
    values[scene.valid_mask == 0] = 0.0
    return ProbabilityMap(values, scene.id, {**plan.provenance(), "scene_id": scene.id})


def evaluate_map(pm: ProbabilityMap | np.ndarray, scene: Scene, threshold: float = 0.5) -> ConfusionCounts:
    return confusion(binarize(pm, threshold), scene.label, scene.valid_mask)


def ensemble_counts(
    plan: EnsembleSpec,
    scenes: Sequence[Scene],
    stats: NormStats,
    store: RunStore,
    caches: dict[str, dict[str, np.ndarray]] | None = None,
) -> ConfusionCounts:
    """Pooled confusion counts of the ensemble over ``scenes``."""
    caches = {} if caches is None else caches
    total = ConfusionCounts()
    for s in scenes:
        pm = ensemble_predict(plan, s, stats, store, caches.setdefault(s.id, {}))
        total = total + evaluate_map(pm, s, plan.threshold)
    return total


def size_sweep(
    manifest: MatrixManifest,
    setting: BandSetting | str,
    scenes: Scene | Sequence[Scene],
    k_values: Iterable[int],
    stats: NormStats,
    store: RunStore,
    threshold: float = 0.5,
    mode: str = "mean",
) -> list[tuple[int, float]]:
    """Test F1 of the top-k ensemble for each k, ordered by k. Member maps are
    computed once and reused across sizes."""
    scenes = [scenes] if isinstance(scenes, Scene) else list(scenes)
    caches: dict[str, dict[str, np.ndarray]] = {}
    out = []
    for k in sorted(set(int(k) for k in k_values)):
        plan = top_k(manifest, setting, k, threshold, mode)
        out.append((k, scores(ensemble_counts(plan, scenes, stats, store, caches)).f1))
    return out


def cached_scores(
    manifest: MatrixManifest,
    setting: BandSetting | str,
    k: int,
    scenes: Sequence[Scene],
    stats: NormStats,
    store: RunStore,
    caches: dict[str, dict[str, np.ndarray]] | None = None,
) -> dict[str, Any]:
    """Top-k mean-ensemble scores at threshold 0.5, memoized in ``manifest.ensembles``.

    The cache entry records which scenes were scored; a request over
    different scenes recomputes and overwrites it.
    """
    setting = BandSetting.parse(setting)
    ids = [s.id for s in scenes]
    entry = manifest.ensembles.get(setting.value, {}).get(str(k))
    if entry is not None and entry.get("scenes", ids) == ids:
        return entry
    plan = top_k(manifest, setting, k)
    c = ensemble_counts(plan, scenes, stats, store, caches)
    entry = {
        "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
        **scores(c).to_dict(),
        "scenes": ids,
        "members": plan.member_keys,
    }
    manifest.ensembles.setdefault(setting.value, {})[str(k)] = entry
    return entry


# --------------------------------------------------------------------------
# output files


def write_probability_map(pm: ProbabilityMap, path: str | os.PathLike, scene: Scene | None = None) -> Path:
    """Single-band container plus ``<path>.json`` provenance sidecar."""
    path = Path(path)
    h, w = pm.values.shape
    label = scene.label if scene is not None else np.zeros((h, w), np.uint8)
    valid = scene.valid_mask if scene is not None else np.ones((h, w), np.uint8)
    header = {"id": pm.scene_id, "band_names": ["probability"], "nodata_value": None, "meta": {"kind": "probability"}}
    write_container(path, header, pm.values[None], label, valid)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(pm.provenance, indent=2, sort_keys=True))
    return path


def read_probability_map(path: str | os.PathLike) -> ProbabilityMap:
    path = Path(path)
    header, bands, _, _ = read_container(path)
    if bands.shape[0] != 1:
        raise SceneError(f"{path}: expected a single-band probability raster, found {bands.shape[0]} bands")
    sidecar = path.with_name(path.name + ".json")
    prov = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return ProbabilityMap(bands[0], str(header["id"]), prov)


def single_provenance(record: ModelRecord, scene_id: str) -> dict[str, Any]:
    c = record.config
    return {
        "kind": "single",
        "setting": c.setting.value,
        "scene_id": scene_id,
        "arch": c.arch,
        "loss": c.loss,
        "lr": lr_tag(c.learning_rate),
        "best_val_f1": record.best_val_f1,
        "weights": record.weights_path,
    }


__all__ = [
    "EnsembleError",
    "EnsembleSpec",
    "ProbabilityMap",
    "average_maps",
    "binarize",
    "cached_scores",
    "ensemble_counts",
    "ensemble_predict",
    "evaluate_map",
    "member_map",
    "rank_models",
    "read_probability_map",
    "single_provenance",
    "size_sweep",
    "top_k",
    "write_probability_map",
]
