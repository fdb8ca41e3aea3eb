"""One training session: fixed-length epochs, validation-F1 early stopping."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .losses import LOSS_NAMES, LossConfig, get_loss
from .metrics import ConfusionCounts, confusion, scores
from .models import ArchSpec, Model, build_model, load_weights, predict_scene, save_weights
from .sampler import CROP_SIZE, batches
from .scenes import BandSetting, Dataset, NormStats, Scene

logger = logging.getLogger(__name__)

GRID_LEARNING_RATES = (0.01, 0.001)
FAILED_SCORE = -1.0


class TrainError(RuntimeError):
    pass


def lr_tag(lr: float) -> str:
    return repr(float(lr))


@dataclass(frozen=True)
class TrainConfig:
    arch: str
    loss: str
    learning_rate: float
    setting: BandSetting
    seed: int = 0
    iters_per_epoch: int = 1000
    batch_size: int = 4
    patience_epochs: int = 50
    max_epochs: int = 300
    val_threshold: float = 0.5
    width: int = 16
    depth: int = 4
    crop_size: int = CROP_SIZE
    smooth_eps: float = 1.0
    focal_gamma: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "setting", BandSetting.parse(self.setting))
        ArchSpec(self.arch, self.setting.n_channels, self.width, self.depth)
        LossConfig(self.loss)
        if self.learning_rate <= 0:
            raise TrainError("learning_rate must be positive")
        if self.iters_per_epoch < 1 or self.batch_size < 1 or self.max_epochs < 1 or self.patience_epochs < 1:
            raise TrainError("iters_per_epoch, batch_size, max_epochs and patience_epochs must be >= 1")
        if not 0 < self.val_threshold < 1:
            raise TrainError("val_threshold must lie in (0, 1)")

    @property
    def exploratory(self) -> bool:
        """True when the learning rate is outside the two grid values."""
        return not any(math.isclose(self.learning_rate, lr) for lr in GRID_LEARNING_RATES)

    def check_faithful(self) -> None:
        if self.exploratory:
            raise TrainError(f"learning rate {self.learning_rate} not in {GRID_LEARNING_RATES} (faithful mode)")

    @property
    def key(self) -> str:
        return f"{self.arch}_{self.loss}_{lr_tag(self.learning_rate)}"

    @property
    def arch_spec(self) -> ArchSpec:
        return ArchSpec(self.arch, self.setting.n_channels, self.width, self.depth)

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, smooth_eps=self.smooth_eps, focal_gamma=self.focal_gamma)

    def sort_key(self) -> tuple:
        return (self.arch, self.loss, self.learning_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setting"] = self.setting.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class ModelRecord:
    config: TrainConfig
    weights_path: str | None
    best_val_f1: float
    best_epoch: int
    epochs_run: int
    history: list[tuple[float, float]] = field(default_factory=list)  # (train_loss_mean, val_f1)
    status: str = "ok"
    hit_max_epochs: bool = False
    test: dict | None = None
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "weights_path": self.weights_path,
            "best_val_f1": self.best_val_f1,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "history": [list(h) for h in self.history],
            "status": self.status,
            "hit_max_epochs": self.hit_max_epochs,
            "test": self.test,
            "elapsed_s": self.elapsed_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRecord":
        return cls(
            config=TrainConfig.from_dict(d["config"]),
            weights_path=d.get("weights_path"),
            best_val_f1=float(d["best_val_f1"]),
            best_epoch=int(d["best_epoch"]),
            epochs_run=int(d["epochs_run"]),
            history=[tuple(h) for h in d.get("history", [])],
            status=d.get("status", "ok"),
            hit_max_epochs=bool(d.get("hit_max_epochs", False)),
            test=d.get("test"),
            elapsed_s=float(d.get("elapsed_s", 0.0)),
        )


class RunStore:
    """Layout of a runs directory: ``<root>/<setting>/<arch>_<loss>_<lr>/``."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def run_dir(self, config: TrainConfig) -> Path:
        return self.root / config.setting.value / config.key

    def weights_path(self, config: TrainConfig) -> Path:
        return self.run_dir(config) / "weights.pt"

    def record_path(self, config: TrainConfig) -> Path:
        return self.run_dir(config) / "record.json"

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def write_record(self, record: ModelRecord) -> None:
        d = self.run_dir(record.config)
        d.mkdir(parents=True, exist_ok=True)
        tmp = d / "record.json.tmp"
        tmp.write_text(json.dumps(record.to_dict(), indent=2))
        os.replace(tmp, d / "record.json")
        with open(d / "history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_f1"])
            for i, (loss, f1) in enumerate(record.history, start=1):
                w.writerow([i, repr(loss), repr(f1)])

    def load_model(self, record: ModelRecord) -> Model:
        if not record.weights_path:
            raise TrainError(f"record {record.config.key} has no weights")
        return load_weights(record.config.arch_spec, self.resolve(record.weights_path))


@contextlib.contextmanager
def single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def pooled_counts(
    model: Model,
    scenes: Sequence[Scene],
    setting: BandSetting,
    stats: NormStats,
    threshold: float = 0.5,
    tile: int = CROP_SIZE,
) -> ConfusionCounts:
    total = ConfusionCounts()
    for s in scenes:
        probs = predict_scene(model, s, setting, stats, tile=tile, stride=tile)
        total = total + confusion(probs >= threshold, s.label, s.valid_mask)
    return total


def validate(
    model: Model,
    val_scenes: Sequence[Scene],
    setting: BandSetting | str,
    stats: NormStats,
    threshold: float = 0.5,
    tile: int = CROP_SIZE,
) -> float:
    """Micro-averaged F1 over all validation scenes at ``threshold``."""
    if not val_scenes:
        raise TrainError("empty validation set")
    c = pooled_counts(model, val_scenes, BandSetting.parse(setting), stats, threshold, tile)
    return scores(c).f1


def _to_tensors(batch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    x, y, v = batch
    return (
        torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)),
        torch.from_numpy(np.ascontiguousarray(y[:, None], dtype=np.float32)),
        torch.from_numpy(np.ascontiguousarray(v[:, None], dtype=np.float32)),
    )


def train_session(
    config: TrainConfig,
    dataset: Dataset,
    store: RunStore,
    *,
    validate_fn: Callable[[Model, int], float] | None = None,
    on_step: Callable[[int, int, int], None] | None = None,
    on_epoch_end: Callable[[int, Model, float], None] | None = None,
    evaluate_test: bool = True,
) -> ModelRecord:
    """Train one configuration and persist its best checkpoint and record.

    ``validate_fn(model, epoch)`` replaces the real validation pass and
    ``on_step(epoch, iteration, batch_size)`` is called after every optimizer
    step; both exist for instrumentation.
    """
    t0 = time.perf_counter()
    setting = config.setting
    stats = dataset.norm_stats
    train = dataset.scenes(dataset.split.train)
    val = dataset.scenes(dataset.split.val)
    weights = store.weights_path(config)
    rel_weights = str(weights.relative_to(store.root))

    with single_thread():
        model = build_model(config.arch_spec, config.seed)
        rng = np.random.default_rng(config.seed)
        stream: Iterator = batches(train, setting, config.batch_size, rng, stats, config.crop_size)
        loss_fn = get_loss(config.loss_config)
        opt = torch.optim.Adam(model.net.parameters(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)

        history: list[tuple[float, float]] = []
        best, best_epoch = -math.inf, 0
        failed = False
        for epoch in range(1, config.max_epochs + 1):
            model.net.train()
            total = 0.0
            for it in range(config.iters_per_epoch):
                x, y, v = _to_tensors(next(stream))
                opt.zero_grad(set_to_none=True)
                loss = loss_fn(model.net(x), y, v)
                if not torch.isfinite(loss):
                    failed = True
                    break
                loss.backward()
                opt.step()
                total += float(loss.detach())
                if on_step is not None:
                    on_step(epoch, it, x.shape[0])
            if failed:
                logger.warning("session %s/%s diverged in epoch %d", setting.value, config.key, epoch)
                break
            if validate_fn is not None:
                val_f1 = float(validate_fn(model, epoch))
            else:
                val_f1 = validate(model, val, setting, stats, config.val_threshold, config.crop_size)
            history.append((total / config.iters_per_epoch, val_f1))
            if on_epoch_end is not None:
                on_epoch_end(epoch, model, val_f1)
            if val_f1 > best:
                best, best_epoch = val_f1, epoch
                save_weights(model, weights)
            elif epoch - best_epoch >= config.patience_epochs:
                break

    elapsed = time.perf_counter() - t0
    if failed:
        record = ModelRecord(config, None, FAILED_SCORE, best_epoch, len(history), history, status="failed", elapsed_s=elapsed)
    else:
        record = ModelRecord(
            config,
            rel_weights,
            best,
            best_epoch,
            len(history),
            history,
            hit_max_epochs=len(history) == config.max_epochs and epoch - best_epoch < config.patience_epochs,
            elapsed_s=elapsed,
        )
        if evaluate_test and dataset.split.test:
            best_model = store.load_model(record)
            with single_thread():
                c = pooled_counts(best_model, dataset.scenes(dataset.split.test), setting, stats, config.val_threshold, config.crop_size)
            record.test = {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn, **scores(c).to_dict()}
    store.write_record(record)
    return record


__all__ = [
    "FAILED_SCORE",
    "LOSS_NAMES",
    "ModelRecord",
    "GRID_LEARNING_RATES",
    "RunStore",
    "TrainConfig",
    "TrainError",
    "pooled_counts",
    "train_session",
    "validate",
]
