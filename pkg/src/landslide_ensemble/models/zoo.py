from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..scenes import BandSetting, NormStats, Scene, normalized_stack
from .archs import ARCHITECTURES, SegNet

WEIGHTS_FORMAT_VERSION = 1
VALID_IN_CHANNELS = (2, 9, 11, 15)


class ModelError(ValueError):
    pass


def _check_arch(name: str) -> str:
    if name not in ARCHITECTURES:
        raise ModelError(f"unknown architecture {name!r}; valid names: {', '.join(ARCHITECTURES)}")
    return name


@dataclass(frozen=True)
class ArchSpec:
    name: str
    in_channels: int
    width: int = 16
    depth: int = 4

    def __post_init__(self):
        _check_arch(self.name)
        if self.in_channels < 1:
            raise ModelError("in_channels must be positive")
        if self.width < 1 or self.depth < 1:
            raise ModelError("width and depth must be positive")

    @property
    def standard_channels(self) -> bool:
        return self.in_channels in VALID_IN_CHANNELS


class Model:
    """A built network plus the architecture and seed it was built from."""

    def __init__(self, arch: ArchSpec, net: SegNet, seed: int):
        self.arch = arch
        self.net = net
        self.seed = seed

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def parameter_bytes(self) -> bytes:
        return b"".join(t.detach().cpu().numpy().tobytes() for t in self.net.state_dict().values())

    def __repr__(self) -> str:
        return f"Model({self.arch.name}, in={self.arch.in_channels}, params={self.param_count})"


def build_model(arch: ArchSpec, seed: int = 0) -> Model:
    cls = ARCHITECTURES[_check_arch(arch.name)]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = cls(arch.in_channels, width=arch.width, depth=arch.depth)
    return Model(arch, net, seed)


def forward(model: Model, stack) -> np.ndarray:
    """Logits for a single ``C x H x W`` stack (numpy or torch); returns ``1 x H x W``."""
    x = torch.as_tensor(np.asarray(stack, dtype=np.float32))
    if x.ndim != 3:
        raise ModelError(f"expected a C x H x W stack, got shape {tuple(x.shape)}")
    model.net.eval()
    with torch.no_grad():
        try:
            out = model.net(x[None])
        except ValueError as exc:
            raise ModelError(str(exc)) from exc
    return out[0].numpy()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-z.astype(np.float64)))).astype(np.float32)


def _origins(extent: int, tile: int, stride: int) -> list[int]:
    starts = list(range(0, extent - tile + 1, stride))
    if starts[-1] != extent - tile:
        starts.append(extent - tile)
    return starts


def predict_stack(model: Model, stack: np.ndarray, tile: int = 256, stride: int = 256, batch: int = 4) -> np.ndarray:
    """Tiled probability map for a normalized ``C x H x W`` stack."""
    if stack.shape[0] != model.arch.in_channels:
        raise ModelError(f"setting provides {stack.shape[0]} channels, model expects {model.arch.in_channels}")
    if stride < 1 or stride > tile:
        raise ModelError(f"stride must lie in [1, tile], got {stride}")
    _, h, w = stack.shape
    ph = -(-h // tile) * tile
    pw = -(-w // tile) * tile
    padded = np.pad(stack, ((0, 0), (0, ph - h), (0, pw - w)), mode="reflect" if min(h, w) > 1 else "edge")
    acc = np.zeros((ph, pw), dtype=np.float64)
    cnt = np.zeros((ph, pw), dtype=np.float64)
    windows = [(r, c) for r in _origins(ph, tile, stride) for c in _origins(pw, tile, stride)]
    model.net.eval()
    with torch.no_grad():
        for i in range(0, len(windows), batch):
            chunk = windows[i : i + batch]
            x = torch.from_numpy(np.stack([padded[:, r : r + tile, c : c + tile] for r, c in chunk]))
            probs = _sigmoid(model.net(x)[:, 0].numpy())
            for (r, c), p in zip(chunk, probs):
                acc[r : r + tile, c : c + tile] += p
                cnt[r : r + tile, c : c + tile] += 1.0
    return (acc / cnt)[:h, :w].astype(np.float32)


def predict_scene(
    model: Model,
    scene: Scene,
    setting: BandSetting | str,
    stats: NormStats,
    tile: int = 256,
    stride: int = 256,
) -> np.ndarray:
    """Probability map in [0, 1] over the whole scene; invalid pixels are 0.

    The normalized stack is reflect-padded to a multiple of ``tile``, every
    window on the ``stride`` grid is run through the model, overlapping
    probabilities are averaged and the padding is cut away.
    """
    setting = BandSetting.parse(setting)
    if setting.n_channels != model.arch.in_channels:
        raise ModelError(
            f"setting {setting.value} has {setting.n_channels} bands, model expects {model.arch.in_channels}"
        )
    probs = predict_stack(model, normalized_stack(scene, setting, stats), tile=tile, stride=stride)
    probs[scene.valid_mask == 0] = 0.0
    return probs


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_weights(model: Model, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().clone() for k, v in model.net.state_dict().items()}
    torch.save(state, path)
    meta = {
        "arch": model.arch.name,
        "in_channels": model.arch.in_channels,
        "width": model.arch.width,
        "depth": model.arch.depth,
        "seed": model.seed,
        "format_version": WEIGHTS_FORMAT_VERSION,
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def read_sidecar(path: str | os.PathLike) -> dict:
    side = _sidecar(Path(path))
    try:
        return json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read weight sidecar {side}: {exc}") from exc


def load_weights(arch: ArchSpec, path: str | os.PathLike) -> Model:
    path = Path(path)
    meta = read_sidecar(path)
    if meta.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported weight format {meta.get('format_version')!r}")
    found = ArchSpec(meta["arch"], int(meta["in_channels"]), int(meta["width"]), int(meta["depth"]))
    if found != arch:
        raise ModelError(f"{path}: file holds {found}, requested {arch}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ModelError(f"cannot read weights {path}: {exc}") from exc
    if "sha256" in meta and hashlib.sha256(raw).hexdigest() != meta["sha256"]:
        raise ModelError(f"{path}: checksum mismatch, weight file is corrupted")
    model = build_model(arch, int(meta.get("seed", 0)))
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        model.net.load_state_dict(state)
    except Exception as exc:  # torch raises several unrelated types here
        raise ModelError(f"{path}: corrupted or incompatible weight file ({exc})") from exc
    model.net.eval()
    return model


def spec_from_sidecar(path: str | os.PathLike) -> ArchSpec:
    meta = read_sidecar(path)
    return ArchSpec(meta["arch"], int(meta["in_channels"]), int(meta["width"]), int(meta["depth"]))


def arch_names() -> list[str]:
    return list(ARCHITECTURES)


__all__ = [
    "ArchSpec",
    "Model",
    "ModelError",
    "arch_names",
    "build_model",
    "forward",
    "load_weights",
    "predict_scene",
    "predict_stack",
    "save_weights",
    "spec_from_sidecar",
]

