"""Experiment grid: enumeration, execution and the resumable run manifest."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import multiprocessing as mp
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .losses import LOSS_NAMES
from .models import arch_names
from .scenes import BandSetting, Dataset
from .trainer import GRID_LEARNING_RATES, ModelRecord, RunStore, TrainConfig, lr_tag, train_session

logger = logging.getLogger(__name__)

GRID_ARCHS = tuple(arch_names())
GRID_LOSSES = LOSS_NAMES
GRID_LRS = GRID_LEARNING_RATES
MANIFEST_NAME = "manifest.json"
SEED_POLICY = "sha256(global_seed|setting|arch|loss|lr) -> first 4 bytes, masked to 31 bits"


class MatrixError(RuntimeError):
    pass


def derive_seed(global_seed: int, setting: BandSetting | str, arch: str, loss: str, lr: float) -> int:
    setting = BandSetting.parse(setting)
    msg = f"{int(global_seed)}|{setting.value}|{arch}|{loss}|{lr_tag(lr)}".encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:4], "big") & 0x7FFFFFFF


def _no_duplicates(name: str, values: Sequence) -> None:
    if len(set(values)) != len(values):
        raise MatrixError(f"duplicate entries in {name}: {list(values)}")
    if not values:
        raise MatrixError(f"{name} must not be empty")


def enumerate_matrix(
    setting: BandSetting | str,
    archs: Sequence[str] = GRID_ARCHS,
    losses: Sequence[str] = GRID_LOSSES,
    lrs: Sequence[float] = GRID_LRS,
    global_seed: int = 0,
    **train_kwargs,
) -> list[TrainConfig]:
    """Cartesian product of the factors in lexicographic (arch, loss, lr) order."""
    setting = BandSetting.parse(setting)
    _no_duplicates("archs", list(archs))
    _no_duplicates("losses", list(losses))
    _no_duplicates("lrs", [float(x) for x in lrs])
    return [
        TrainConfig(
            arch=a,
            loss=l,
            learning_rate=float(r),
            setting=setting,
            seed=derive_seed(global_seed, setting, a, l, r),
            **train_kwargs,
        )
        for a, l, r in itertools.product(sorted(archs), sorted(losses), sorted(float(x) for x in lrs))
    ]


@dataclass
class MatrixManifest:
    dataset_fingerprint: str
    global_seed: int = 0
    records: dict[str, list[ModelRecord]] = field(default_factory=dict)
    ensembles: dict[str, dict[str, dict]] = field(default_factory=dict)
    version: str = __version__
    seed_policy: str = SEED_POLICY

    def add(self, record: ModelRecord) -> None:
        key = record.config.setting.value
        rows = [r for r in self.records.get(key, []) if r.config.key != record.config.key]
        rows.append(record)
        rows.sort(key=lambda r: r.config.sort_key())
        self.records[key] = rows
        # cached ensemble scores no longer describe this setting's record set
        self.ensembles.pop(key, None)

    def find(self, config: TrainConfig) -> ModelRecord | None:
        for r in self.records.get(config.setting.value, []):
            if r.config == config:
                return r
        return None

    def for_setting(self, setting: BandSetting | str) -> list[ModelRecord]:
        return list(self.records.get(BandSetting.parse(setting).value, []))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "dataset_fingerprint": self.dataset_fingerprint,
            "global_seed": self.global_seed,
            "seed_policy": self.seed_policy,
            "records": {k: [r.to_dict() for r in v] for k, v in sorted(self.records.items())},
            "ensembles": self.ensembles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixManifest":
        m = cls(
            dataset_fingerprint=d.get("dataset_fingerprint", ""),
            global_seed=int(d.get("global_seed", 0)),
            ensembles=d.get("ensembles", {}),
            version=d.get("version", __version__),
            seed_policy=d.get("seed_policy", SEED_POLICY),
        )
        for key, rows in d.get("records", {}).items():
            m.records[key] = [ModelRecord.from_dict(r) for r in rows]
        return m

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MatrixManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise MatrixError(f"cannot read manifest {path}: {exc}") from exc


def comparable(manifest: MatrixManifest) -> dict:
    """Manifest content without wall-clock fields, for run-to-run comparison."""
    d = manifest.to_dict()
    for rows in d["records"].values():
        for r in rows:
            r.pop("elapsed_s", None)
    return d


def _worker_init() -> None:
    import torch

    torch.set_num_threads(1)


def _run_one(config: dict, dataset_path: str, runs_root: str) -> dict:
    record = train_session(TrainConfig.from_dict(config), Dataset(dataset_path), RunStore(runs_root))
    return record.to_dict()


def progress_line(k: int, n: int, record: ModelRecord) -> str:
    c = record.config
    return (
        f"[{k}/{n}] setting={c.setting.value} arch={c.arch} loss={c.loss} "
        f"lr={lr_tag(c.learning_rate)} val_f1={record.best_val_f1:.3f}"
    )


def run_matrix(
    configs: Iterable[TrainConfig],
    dataset: Dataset | str | os.PathLike,
    runs_root: str | os.PathLike,
    jobs: int = 1,
    resume: bool = False,
    global_seed: int = 0,
    on_complete: Callable[[ModelRecord, MatrixManifest], None] | None = None,
    out=sys.stdout,
) -> MatrixManifest:
    """Execute ``configs`` with at most ``jobs`` worker processes.

    The manifest at ``runs_root/manifest.json`` is rewritten atomically after
    every finished session. With ``resume`` any config that already has a
    record under the same dataset fingerprint is skipped.
    """
    dataset = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    configs = list(configs)
    if len({(c.setting, c.key) for c in configs}) != len(configs):
        raise MatrixError("duplicate configs in matrix")
    root = Path(runs_root)
    path = root / MANIFEST_NAME
    fingerprint = dataset.fingerprint()
    if path.exists():
        manifest = MatrixManifest.load(path)
        if manifest.dataset_fingerprint != fingerprint:
            if resume:
                raise MatrixError(
                    f"dataset fingerprint mismatch: manifest has {manifest.dataset_fingerprint[:12]}, "
                    f"dataset is {fingerprint[:12]}"
                )
            manifest = MatrixManifest(fingerprint, global_seed)
    else:
        manifest = MatrixManifest(fingerprint, global_seed)
    manifest.global_seed = global_seed

    todo = [c for c in configs if not (resume and manifest.find(c) is not None)]
    skipped = len(configs) - len(todo)
    if skipped:
        logger.info("resume: skipping %d completed sessions", skipped)
    manifest.save(path)
    n = len(configs)
    done = skipped

    def finish(record: ModelRecord) -> None:
        nonlocal done
        done += 1
        manifest.add(record)
        manifest.save(path)
        if out is not None:
            print(progress_line(done, n, record), file=out, flush=True)
        if on_complete is not None:
            on_complete(record, manifest)

    if jobs <= 1 or len(todo) <= 1:
        store = RunStore(root)
        for c in todo:
            finish(train_session(c, dataset, store))
        return manifest

    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx, initializer=_worker_init) as pool:
        futures = {pool.submit(_run_one, c.to_dict(), str(dataset.path), str(root)): c for c in todo}
        try:
            for fut in as_completed(futures):
                finish(ModelRecord.from_dict(fut.result()))
        except BaseException:
            for f in futures:
                f.cancel()
            raise
    return manifest


def full_grid(settings: Sequence[BandSetting | str], global_seed: int = 0, **train_kwargs) -> list[TrainConfig]:
    out: list[TrainConfig] = []
    for s in settings:
        out.extend(enumerate_matrix(s, global_seed=global_seed, **train_kwargs))
    return out
