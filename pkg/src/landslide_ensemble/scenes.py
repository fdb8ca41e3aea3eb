"""Multi-band scenes, band settings, normalization and the dataset manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

BAND_NAMES = (
    "preVV",
    "postVV",
    "dVV",
    "preVH",
    "postVH",
    "dVH",
    "Layover",
    "Shadow",
    "liaDeg",
    "Elevation",
    "Slope",
    "KG_climate",
    "Popatpv_tree_height",
    "CART_LC_classification",
    "dNDVI",
)
N_BANDS = len(BAND_NAMES)
CATEGORICAL_BANDS = (11, 13)
CATEGORICAL_SCALE = 100.0

MAGIC = b"BSTACK01"
_HEADER_LEN = struct.Struct("<I")


class SceneError(ValueError):
    """Raised for malformed scenes, containers and dataset manifests."""


class BandSetting(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S1S2 = "S1S2"
    ALL = "ALL"

    @property
    def indices(self) -> tuple[int, ...]:
        return _SETTING_INDICES[self]

    @property
    def n_channels(self) -> int:
        return len(self.indices)

    @classmethod
    def parse(cls, name: "str | BandSetting") -> "BandSetting":
        if isinstance(name, BandSetting):
            return name
        key = str(name).strip().upper().replace("+", "")
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise SceneError(f"unknown band setting {name!r}; expected one of {valid}") from None


_SETTING_INDICES = {
    BandSetting.S1: tuple(range(9)),
    BandSetting.S2: (13, 14),
    BandSetting.S1S2: tuple(range(9)) + (13, 14),
    BandSetting.ALL: tuple(range(15)),
}


@dataclass(eq=False)
class Scene:
    """One case study: 15 float32 bands plus label and validity masks."""

    id: str
    bands: np.ndarray  # (15, H, W) float32
    label: np.ndarray  # (H, W) uint8
    valid_mask: np.ndarray  # (H, W) uint8
    meta: dict[str, Any] = field(default_factory=dict)
    nodata_value: float | None = None

    def __post_init__(self) -> None:
        self.bands = np.ascontiguousarray(self.bands, dtype=np.float32)
        self.label = np.ascontiguousarray(self.label, dtype=np.uint8)
        self.valid_mask = np.ascontiguousarray(self.valid_mask, dtype=np.uint8)
        self.validate()

    @property
    def height(self) -> int:
        return int(self.bands.shape[1])

    @property
    def width(self) -> int:
        return int(self.bands.shape[2])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def validate(self) -> None:
        if self.bands.ndim != 3:
            raise SceneError(f"scene {self.id}: bands must be (15, H, W), got shape {self.bands.shape}")
        if self.bands.shape[0] != N_BANDS:
            raise SceneError(f"scene {self.id}: band count {self.bands.shape[0]} ≠ {N_BANDS}")
        hw = self.bands.shape[1:]
        if self.label.shape != hw:
            raise SceneError(f"scene {self.id}: label shape {self.label.shape} does not match bands {hw}")
        if self.valid_mask.shape != hw:
            raise SceneError(f"scene {self.id}: valid_mask shape {self.valid_mask.shape} does not match bands {hw}")
        if self.label.size and self.label.max() > 1:
            raise SceneError(f"scene {self.id}: label must be binary")
        if self.valid_mask.size and self.valid_mask.max() > 1:
            raise SceneError(f"scene {self.id}: valid_mask must be binary")
        bad = ~np.isfinite(self.bands).all(axis=0) & (self.valid_mask == 1)
        if bad.any():
            raise SceneError(f"scene {self.id}: non-finite band values at {int(bad.sum())} valid pixels")

    @property
    def positive_valid(self) -> np.ndarray:
        return (self.label == 1) & (self.valid_mask == 1)

    def equals(self, other: "Scene") -> bool:
        """Bit-exact comparison (NaN payloads included)."""
        return (
            self.id == other.id
            and self.meta == other.meta
            and self.nodata_value == other.nodata_value
            and self.bands.shape == other.bands.shape
            and self.bands.tobytes() == other.bands.tobytes()
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.valid_mask, other.valid_mask)
        )


def derive_valid_mask(bands: np.ndarray, nodata_value: float | None = None, base: np.ndarray | None = None) -> np.ndarray:
    valid = np.isfinite(bands).all(axis=0)
    if nodata_value is not None:
        valid &= ~(bands == np.float32(nodata_value)).any(axis=0)
    if base is not None:
        valid &= base.astype(bool)
    return valid.astype(np.uint8)


# --------------------------------------------------------------------------
# raw container


def write_container(
    path: str | os.PathLike,
    header: dict[str, Any],
    bands: np.ndarray,
    label: np.ndarray,
    valid: np.ndarray,
) -> None:
    """Low-level BSTACK01 writer for any band count."""
    c, h, w = bands.shape
    header = {**header, "band_count": int(c), "height": int(h), "width": int(w)}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_HEADER_LEN.pack(len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(bands, dtype="<f4").tobytes(order="C"))
            fh.write(np.ascontiguousarray(label, dtype=np.uint8).tobytes(order="C"))
            fh.write(np.ascontiguousarray(valid, dtype=np.uint8).tobytes(order="C"))
    except OSError as exc:
        raise SceneError(f"cannot write container {path}: {exc}") from exc


def read_container(path: str | os.PathLike) -> tuple[dict[str, Any], np.ndarray, np.ndarray, np.ndarray]:
    """Read ``(header, bands, label, stored_valid)`` from a BSTACK01 file."""
    path = Path(path)
    header, offset = read_header(path)
    h, w, c = int(header["height"]), int(header["width"]), int(header["band_count"])
    names = header.get("band_names")
    if names is not None and len(names) != c:
        raise SceneError(f"{path}: band_names lists {len(names)} names for {c} bands")
    data = path.read_bytes()[offset:]
    n_band = c * h * w * 4
    expected = n_band + 2 * h * w
    if len(data) != expected:
        raise SceneError(f"{path}: payload has {len(data)} bytes, header implies {expected} (bands/label shape mismatch)")
    bands = np.frombuffer(data, dtype="<f4", count=c * h * w).reshape(c, h, w).astype(np.float32)
    label = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=n_band).reshape(h, w).copy()
    valid = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=n_band + h * w).reshape(h, w).copy()
    return header, bands, label, valid


def save_scene(scene: Scene, path: str | os.PathLike) -> None:
    """Write ``scene`` to the BSTACK01 container at ``path``."""
    scene.validate()
    header = {
        "id": scene.id,
        "band_names": list(BAND_NAMES),
        "nodata_value": scene.nodata_value,
        "meta": scene.meta,
    }
    write_container(path, header, scene.bands, scene.label, scene.valid_mask)


def read_header(path: str | os.PathLike) -> tuple[dict[str, Any], int]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise SceneError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
            raw_len = fh.read(_HEADER_LEN.size)
            if len(raw_len) != _HEADER_LEN.size:
                raise SceneError(f"{path}: truncated header length")
            (n,) = _HEADER_LEN.unpack(raw_len)
            raw = fh.read(n)
    except OSError as exc:
        raise SceneError(f"cannot read {path}: {exc}") from exc
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SceneError(f"{path}: unreadable header ({exc})") from exc
    if not isinstance(header, dict):
        raise SceneError(f"{path}: unreadable header (not a JSON object)")
    for key in ("id", "width", "height", "band_count"):
        if key not in header:
            raise SceneError(f"{path}: header missing field {key!r}")
    return header, len(MAGIC) + _HEADER_LEN.size + n


def load_scene(path: str | os.PathLike) -> Scene:
    path = Path(path)
    if path.suffix.lower() in {".tif", ".tiff"}:
        raise SceneError(f"{path}: GeoTIFF input needs the optional geospatial adapter (rasterio), not bundled")
    header, _ = read_header(path)
    if int(header["band_count"]) != N_BANDS:
        raise SceneError(f"{path}: band count {header['band_count']} ≠ {N_BANDS}")
    header, bands, label, stored_valid = read_container(path)
    nodata = header.get("nodata_value")
    valid = derive_valid_mask(bands, nodata, stored_valid)
    return Scene(
        id=str(header["id"]),
        bands=bands,
        label=label,
        valid_mask=valid,
        meta=dict(header.get("meta") or {}),
        nodata_value=nodata,
    )


# --------------------------------------------------------------------------
# band selection and normalization


def select_bands(scene: Scene, setting: BandSetting | str) -> np.ndarray:
    setting = BandSetting.parse(setting)
    return scene.bands[list(setting.indices)]


@dataclass
class NormStats:
    mean: np.ndarray  # (15,) float64
    std: np.ndarray  # (15,) float64
    categorical: np.ndarray  # (15,) bool
    constant: np.ndarray  # (15,) bool

    def to_dict(self) -> dict[str, list]:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "categorical": self.categorical.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, list]) -> "NormStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            categorical=np.asarray(d["categorical"], dtype=bool),
            constant=np.asarray(d["constant"], dtype=bool),
        )


def fit_norm_stats(train_scenes: Sequence[Scene]) -> NormStats:
    """Per-band mean/std over the valid pixels of the training scenes."""
    if not train_scenes:
        raise SceneError("cannot fit normalization on an empty train set")
    mean = np.zeros(N_BANDS)
    std = np.ones(N_BANDS)
    constant = np.zeros(N_BANDS, dtype=bool)
    categorical = np.zeros(N_BANDS, dtype=bool)
    categorical[list(CATEGORICAL_BANDS)] = True
    for b in range(N_BANDS):
        n = 0
        total = 0.0
        for s in train_scenes:
            cnt, sm, _ = _kernels.masked_moments(s.bands[b], s.valid_mask)
            n += cnt
            total += sm
        if n == 0:
            raise SceneError(f"band {b} ({BAND_NAMES[b]}) has no valid train pixels")
        mu = total / n
        ss = 0.0
        for s in train_scenes:
            cnt, sm, dev = _kernels.masked_moments(s.bands[b] - mu, s.valid_mask)
            # dev is about the per-scene mean; shift back to the pooled mean
            ss += dev + (sm * sm / cnt if cnt else 0.0)
        sd = float(np.sqrt(ss / n))
        mean[b] = mu
        if sd > 0 and np.isfinite(sd):
            std[b] = sd
        else:
            constant[b] = True
            std[b] = 1.0
    return NormStats(mean=mean, std=std, categorical=categorical, constant=constant)


def apply_norm(stack: np.ndarray, stats: NormStats, setting: BandSetting | str, valid: np.ndarray | None = None) -> np.ndarray:
    """Normalize a band stack selected with ``setting``; masked pixels become 0.

    Continuous bands map to ``(x - mean) / std``; categorical bands are scaled
    codes ``x / 100``. Constant bands come out as exactly 0.
    """
    setting = BandSetting.parse(setting)
    idx = list(setting.indices)
    if stack.shape[0] != len(idx):
        raise SceneError(f"stack has {stack.shape[0]} planes, setting {setting.value} needs {len(idx)}")
    x = stack.astype(np.float64)
    out = np.empty_like(x)
    for c, b in enumerate(idx):
        if stats.categorical[b]:
            out[c] = x[c] / CATEGORICAL_SCALE
        elif stats.constant[b]:
            out[c] = 0.0
        else:
            out[c] = (x[c] - stats.mean[b]) / stats.std[b]
    if valid is not None:
        out[:, valid == 0] = 0.0
    out[~np.isfinite(out)] = 0.0
    return out.astype(np.float32)


def normalized_stack(scene: Scene, setting: BandSetting | str, stats: NormStats) -> np.ndarray:
    return apply_norm(select_bands(scene, setting), stats, setting, scene.valid_mask)


# --------------------------------------------------------------------------
# dataset manifest


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]

    def validate(self, all_ids: Iterable[str] | None = None, faithful: bool = False) -> None:
        groups = {"train": self.train, "val": self.val, "test": self.test}
        for name, ids in groups.items():
            if len(set(ids)) != len(ids):
                raise SceneError(f"{name} split has duplicate scene ids")
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise SceneError("splits must be disjoint")
        if all_ids is not None:
            ids = set(all_ids)
            missing = (a | b | c) - ids
            if missing:
                raise SceneError(f"split references unknown scenes: {sorted(missing)}")
            uncovered = ids - (a | b | c)
            if faithful and uncovered:
                raise SceneError(f"scenes not assigned to any split: {sorted(uncovered)}")
        if not self.train:
            raise SceneError("train split is empty")
        if not self.val:
            raise SceneError("val split is empty")
        if faithful:
            for name, ids, n in (("train", self.train, 16), ("val", self.val, 4), ("test", self.test, 1)):
                if len(ids) != n:
                    raise SceneError(f"{name} split must have {n} scenes (has {len(ids)})")


class Dataset:
    """A dataset manifest (``dataset.json``) plus lazily loaded scenes."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        try:
            doc = json.loads(self.path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneError(f"cannot read dataset manifest {self.path}: {exc}") from exc
        if "scenes" not in doc or "split" not in doc:
            raise SceneError(f"{self.path}: manifest needs 'scenes' and 'split'")
        self.root = self.path.parent
        self.scene_paths = [self.root / p for p in doc["scenes"]]
        sp = doc["split"]
        self.split = DatasetSplit(list(sp.get("train", [])), list(sp.get("val", [])), list(sp.get("test", [])))
        self._ids: dict[str, Path] | None = None
        self._cache: dict[str, Scene] = {}
        self._stats: NormStats | None = None

    @property
    def ids(self) -> dict[str, Path]:
        if self._ids is None:
            ids: dict[str, Path] = {}
            for p in self.scene_paths:
                header, _ = read_header(p)
                sid = str(header["id"])
                if sid in ids:
                    raise SceneError(f"duplicate scene id {sid!r} in {self.path}")
                ids[sid] = p
            self._ids = ids
        return self._ids

    def scene(self, scene_id: str) -> Scene:
        if scene_id not in self._cache:
            if scene_id not in self.ids:
                raise SceneError(f"unknown scene id {scene_id!r}")
            self._cache[scene_id] = load_scene(self.ids[scene_id])
        return self._cache[scene_id]

    def scenes(self, ids: Iterable[str]) -> list[Scene]:
        return [self.scene(i) for i in ids]

    def validate(self, faithful: bool = False) -> None:
        self.split.validate(self.ids.keys(), faithful=faithful)
        for sid in self.ids:
            self.scene(sid)

    @property
    def norm_stats(self) -> NormStats:
        if self._stats is None:
            self._stats = fit_norm_stats(self.scenes(self.split.train))
        return self._stats

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.path.read_bytes())
        for p in self.scene_paths:
            h.update(Path(p).read_bytes())
        return h.hexdigest()


def write_dataset(path: str | os.PathLike, scene_files: Sequence[str], split: DatasetSplit) -> Path:
    path = Path(path)
    doc = {
        "scenes": [str(p) for p in scene_files],
        "split": {"train": split.train, "val": split.val, "test": split.test},
    }
    path.write_text(json.dumps(doc, indent=2))
    return path
