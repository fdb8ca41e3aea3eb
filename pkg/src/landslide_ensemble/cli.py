"""Command-line entry point: ``landslide-ensemble <command> ...``.

Exit codes: 0 success, 2 invalid input (bad flags, malformed data, failed
invariants), 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .ensemble import (
    cached_scores,
    ensemble_predict,
    member_map,
    rank_models,
    read_probability_map,
    size_sweep,
    top_k,
    write_probability_map,
    binarize,
)
from .losses import LOSS_NAMES
from .matrix import (
    MANIFEST_NAME,
    GRID_ARCHS,
    GRID_LOSSES,
    GRID_LRS,
    MatrixError,
    MatrixManifest,
    derive_seed,
    enumerate_matrix,
    run_matrix,
)
from .metrics import confusion, diagram_data, eval_record, improvement, SkillScores
from .models import arch_names
from .render import diff_map, render_diagram, write_diff_png
from .scenes import BandSetting, Dataset
from .synth import synth_dataset
from .trainer import RunStore, TrainConfig, TrainError, train_session

logger = logging.getLogger("landslide_ensemble")

RUNS_ENV = "LANDSLIDE_ENSEMBLE_RUNS"
DATASET_ENV = "LANDSLIDE_ENSEMBLE_DATASET"


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# argument helpers


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 256x256, got {text!r}") from None
    return h, w


def _common(p: argparse.ArgumentParser, dataset: bool = True) -> None:
    p.add_argument("--runs", default=None, help=f"runs directory (default ${RUNS_ENV} or ./runs)")
    if dataset:
        p.add_argument("--dataset", default=None, help=f"dataset.json (default ${DATASET_ENV})")
    p.add_argument("--faithful", action="store_true", help="restrict factors and splits to the published design")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_knobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters-per-epoch", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--crop-size", type=int, default=256)


def _knob_kwargs(args) -> dict:
    return {
        "iters_per_epoch": args.iters_per_epoch,
        "batch_size": args.batch_size,
        "patience_epochs": args.patience,
        "max_epochs": args.max_epochs,
        "width": args.width,
        "depth": args.depth,
        "crop_size": args.crop_size,
    }


def _runs_root(args) -> Path:
    return Path(args.runs or os.environ.get(RUNS_ENV) or "runs")


def _dataset(args) -> Dataset:
    path = getattr(args, "dataset", None) or os.environ.get(DATASET_ENV)
    if not path:
        raise UsageError(f"no dataset given (use --dataset or set ${DATASET_ENV})")
    return Dataset(path)


def _manifest(args) -> MatrixManifest:
    path = _runs_root(args) / MANIFEST_NAME
    if not path.exists():
        raise UsageError(f"no manifest at {path}; run 'matrix run' or 'train' first")
    return MatrixManifest.load(path)


def _save_manifest(args, manifest: MatrixManifest) -> None:
    manifest.save(_runs_root(args) / MANIFEST_NAME)


def _settings(text: str) -> list[BandSetting]:
    return [BandSetting.parse(s) for s in _csv_list(text)]


# --------------------------------------------------------------------------
# commands


def cmd_dataset_synth(args) -> int:
    n_val, n_test = 4, 1
    if args.scenes < n_val + n_test + 1:
        raise UsageError(f"--scenes must be at least {n_val + n_test + 1}")
    if args.faithful and args.scenes != 21:
        raise UsageError("faithful mode needs --scenes 21 (16/4/1 split)")
    path = synth_dataset(args.out, n_scenes=args.scenes, seed=args.seed, size=args.size, n_val=n_val, n_test=n_test)
    print(f"wrote {path} ({args.scenes} scenes, split {args.scenes - n_val - n_test}/{n_val}/{n_test})")
    return 0


def cmd_dataset_validate(args) -> int:
    ds = Dataset(args.manifest)
    ds.validate(faithful=args.faithful)
    s = ds.split
    print(f"ok: {len(ds.ids)} scenes, split {len(s.train)}/{len(s.val)}/{len(s.test)}")
    return 0


def cmd_train(args) -> int:
    ds = _dataset(args)
    if args.faithful:
        ds.validate(faithful=True)
    cfg = TrainConfig(
        arch=args.arch,
        loss=args.loss,
        learning_rate=args.lr,
        setting=args.setting,
        seed=derive_seed(args.seed, args.setting, args.arch, args.loss, args.lr),
        **_knob_kwargs(args),
    )
    if args.faithful:
        cfg.check_faithful()
    elif cfg.exploratory:
        logger.warning("learning rate %s is exploratory", args.lr)
    root = _runs_root(args)
    path = root / MANIFEST_NAME
    fingerprint = ds.fingerprint()
    manifest = MatrixManifest.load(path) if path.exists() else MatrixManifest(fingerprint, args.seed)
    if manifest.dataset_fingerprint != fingerprint:
        raise MatrixError(f"{path} belongs to a different dataset")
    record = train_session(cfg, ds, RunStore(root))
    manifest.add(record)
    manifest.save(path)
    print(json.dumps({k: v for k, v in record.to_dict().items() if k != "history"}, indent=2))
    return 0 if record.ok else 1


def cmd_matrix_run(args) -> int:
    ds = _dataset(args)
    archs = _csv_list(args.archs) if args.archs else list(GRID_ARCHS)
    losses = _csv_list(args.losses) if args.losses else list(GRID_LOSSES)
    lrs = args.lrs if args.lrs else list(GRID_LRS)
    if args.faithful:
        ds.validate(faithful=True)
        if sorted(archs) != sorted(GRID_ARCHS) or sorted(losses) != sorted(GRID_LOSSES) or sorted(lrs) != sorted(GRID_LRS):
            raise UsageError("faithful mode runs the full architecture, loss and learning-rate grid")
    configs = []
    for s in _settings(args.settings):
        configs.extend(enumerate_matrix(s, archs, losses, lrs, global_seed=args.seed, **_knob_kwargs(args)))
    manifest = run_matrix(configs, ds, _runs_root(args), jobs=args.jobs, resume=args.resume, global_seed=args.seed)
    failed = [r for rows in manifest.records.values() for r in rows if not r.ok]
    if failed:
        logger.warning("%d sessions failed: %s", len(failed), ", ".join(r.config.key for r in failed))
    return 0


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.3f}"


def cmd_rank(args) -> int:
    ranked = rank_models(_manifest(args), args.setting)
    if args.top:
        ranked = ranked[: args.top]
    rows = []
    for i, r in enumerate(ranked, start=1):
        t = r.test or {}
        rows.append(
            {
                "rank": i,
                "val_f1": r.best_val_f1,
                "loss": r.config.loss,
                "lr": r.config.learning_rate,
                "arch": r.config.arch,
                "test_precision": t.get("precision"),
                "test_recall": t.get("recall"),
                "test_f1": t.get("f1"),
            }
        )
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'rank':>4} {'val_f1':>7} {'loss':<12} {'lr':<7} {'arch':<14} {'P':>6} {'R':>6} {'F1':>6}")
    for row in rows:
        print(
            f"{row['rank']:>4} {row['val_f1']:>7.3f} {row['loss']:<12} {row['lr']:<7g} {row['arch']:<14} "
            f"{_fmt(row['test_precision']):>6} {_fmt(row['test_recall']):>6} {_fmt(row['test_f1']):>6}"
        )
    return 0


def cmd_ensemble_predict(args) -> int:
    ds = _dataset(args)
    plan = top_k(_manifest(args), args.setting, args.top, args.threshold, args.mode)
    scene = ds.scene(args.scene)
    pm = ensemble_predict(plan, scene, ds.norm_stats, RunStore(_runs_root(args)))
    out = write_probability_map(pm, args.out, scene)
    print(f"wrote {out} (k={plan.k}, members: {', '.join(plan.member_keys)})")
    return 0


def cmd_eval(args) -> int:
    ds = _dataset(args)
    pm = read_probability_map(args.pred)
    scene = ds.scene(args.scene)
    if pm.values.shape != scene.shape:
        raise UsageError(f"prediction shape {pm.values.shape} does not match scene {scene.shape}")
    rec = {"scene_id": scene.id, "threshold": args.threshold, **eval_record(confusion(binarize(pm, args.threshold), scene.label, scene.valid_mask))}
    text = json.dumps(rec, indent=2)
    if args.json:
        Path(args.json).write_text(text)
    print(text)
    return 0


def _single_scores(manifest: MatrixManifest, setting: BandSetting) -> dict:
    best = rank_models(manifest, setting)[0]
    if not best.test:
        raise UsageError(f"best {setting.value} record {best.config.key} has no test scores")
    return best.test


def _ensemble_entry(args, manifest, setting, k, state) -> dict:
    entry = manifest.ensembles.get(setting.value, {}).get(str(k))
    if entry is not None and "scenes" not in entry:
        return entry  # imported or hand-written entry without scene provenance
    if "ds" not in state:
        state["ds"] = _dataset(args)
        state["caches"] = {}
    ds = state["ds"]
    scenes = ds.scenes(ds.split.test)
    before = json.dumps(manifest.ensembles, sort_keys=True)
    entry = cached_scores(manifest, setting, k, scenes, ds.norm_stats, RunStore(_runs_root(args)), state["caches"])
    if json.dumps(manifest.ensembles, sort_keys=True) != before:
        state["dirty"] = True
    return entry


def improvement_rows(args, manifest: MatrixManifest, settings, sizes) -> list[dict]:
    state: dict = {}
    rows = []
    for s in settings:
        single = _single_scores(manifest, s)["f1"]
        row = {"setting": s.value, "single_f1": single, "ensembles": []}
        for k in sizes:
            f1 = _ensemble_entry(args, manifest, s, k, state)["f1"]
            pct = improvement(single, f1) if f1 > 0 else None
            row["ensembles"].append({"k": k, "f1": f1, "improvement_pct": pct})
        rows.append(row)
    if state.get("dirty"):
        _save_manifest(args, manifest)
    return rows


def cmd_report_improvements(args) -> int:
    manifest = _manifest(args)
    rows = improvement_rows(args, manifest, _settings(args.settings), args.sizes)
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
    header = f"{'setting':<8} {'F1 single':>9}" + "".join(f" {'F1 ens(' + str(k) + ')':>18}" for k in args.sizes)
    print(header)
    for row in rows:
        cells = []
        for e in row["ensembles"]:
            pct = "n/a" if e["improvement_pct"] is None else f"{e['improvement_pct']:+.0f}%"
            cells.append(f" {e['f1']:.2f} ({pct})".rjust(19))
        print(f"{row['setting']:<8} {row['single_f1']:>9.2f}" + "".join(cells))
    return 0


def cmd_sweep(args) -> int:
    ds = _dataset(args)
    manifest = _manifest(args)
    n = len(rank_models(manifest, args.setting))
    ks = list(range(1, min(args.kmax, n) + 1))
    if args.kmax > n:
        logger.warning("only %d successful records; sweeping k=1..%d", n, n)
    res = size_sweep(manifest, args.setting, ds.scenes(ds.split.test), ks, ds.norm_stats, RunStore(_runs_root(args)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "k", "test_f1"])
        for k, f1 in res:
            w.writerow([BandSetting.parse(args.setting).value, k, repr(f1)])
    print(f"wrote {out} ({len(res)} rows)")
    return 0


def cmd_render_diff(args) -> int:
    ds = _dataset(args)
    manifest = _manifest(args)
    store = RunStore(_runs_root(args))
    scene = ds.scene(args.scene)
    plan = top_k(manifest, args.setting, args.top, args.threshold)
    cache: dict = {}
    ens = ensemble_predict(plan, scene, ds.norm_stats, store, cache)
    single = cache.get(plan.members[0].config.key)
    if single is None:
        single = member_map(plan.members[0], scene, ds.norm_stats, store)
    rgb = diff_map(scene.label, binarize(single, args.threshold), binarize(ens, args.threshold), scene.valid_mask)
    out = write_diff_png(rgb, args.out)
    print(f"wrote {out}")
    return 0


def cmd_render_diagram(args) -> int:
    manifest = _manifest(args)
    rows = []
    state: dict = {}
    for s in _settings(args.settings):
        t = _single_scores(manifest, s)
        rows.append((f"{s.value} single", SkillScores(t["precision"], t["recall"], t["f1"], t["frequency_bias"])))
        for k in args.sizes:
            e = _ensemble_entry(args, manifest, s, k, state)
            rows.append((f"{s.value} ens({k})", SkillScores(e["precision"], e["recall"], e["f1"], e["frequency_bias"])))
    if state.get("dirty"):
        _save_manifest(args, manifest)
    out = render_diagram(diagram_data(rows), args.out, title=args.title)
    print(f"wrote {out} ({len(rows)} markers)")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="landslide-ensemble", description="Heterogeneous segmentation ensembles for landslide mapping.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="create or check a dataset").add_subparsers(dest="action", required=True)
    q = ds.add_parser("synth", help="generate a synthetic dataset")
    q.add_argument("--out", required=True)
    q.add_argument("--scenes", type=int, default=21)
    q.add_argument("--seed", type=int, default=7)
    q.add_argument("--size", type=_size, default=(256, 256))
    _common(q, dataset=False)
    q.set_defaults(func=cmd_dataset_synth)
    q = ds.add_parser("validate", help="check scene and split invariants")
    q.add_argument("manifest")
    _common(q, dataset=False)
    q.set_defaults(func=cmd_dataset_validate)

    q = sub.add_parser("train", help="run one training session")
    q.add_argument("--setting", required=True, type=BandSetting.parse)
    q.add_argument("--arch", required=True, choices=arch_names())
    q.add_argument("--loss", required=True, choices=LOSS_NAMES)
    q.add_argument("--lr", required=True, type=float)
    q.add_argument("--seed", type=int, default=0)
    _train_knobs(q)
    _common(q)
    q.set_defaults(func=cmd_train)

    mx = sub.add_parser("matrix", help="grid execution").add_subparsers(dest="action", required=True)
    q = mx.add_parser("run")
    q.add_argument("--settings", required=True)
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--resume", action="store_true")
    q.add_argument("--archs", default=None, help="comma-separated (default: all nine)")
    q.add_argument("--losses", default=None, help="comma-separated (default: all five)")
    q.add_argument("--lrs", type=_float_list, default=None, help="comma-separated (default: 0.01,0.001)")
    q.add_argument("--seed", type=int, default=0)
    _train_knobs(q)
    _common(q)
    q.set_defaults(func=cmd_matrix_run)

    q = sub.add_parser("rank", help="print models ranked by validation F1")
    q.add_argument("--setting", required=True)
    q.add_argument("--top", type=int, default=None)
    q.add_argument("--json", action="store_true", help="print JSON instead of a table")
    _common(q, dataset=False)
    q.set_defaults(func=cmd_rank)

    en = sub.add_parser("ensemble", help="ensemble inference").add_subparsers(dest="action", required=True)
    q = en.add_parser("predict")
    q.add_argument("--setting", required=True)
    q.add_argument("--top", type=int, required=True)
    q.add_argument("--scene", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--threshold", type=float, default=0.5)
    q.add_argument("--mode", choices=("mean", "vote"), default="mean")
    _common(q)
    q.set_defaults(func=cmd_ensemble_predict)

    q = sub.add_parser("eval", help="score a probability raster against a scene label")
    q.add_argument("--pred", required=True)
    q.add_argument("--scene", required=True)
    q.add_argument("--threshold", type=float, default=0.5)
    q.add_argument("--json", default=None, help="write the scores to this file")
    _common(q)
    q.set_defaults(func=cmd_eval)

    rp = sub.add_parser("report", help="summary tables").add_subparsers(dest="action", required=True)
    q = rp.add_parser("improvements")
    q.add_argument("--settings", required=True)
    q.add_argument("--sizes", type=_int_list, default=[10, 20, 40])
    q.add_argument("--json", default=None)
    _common(q)
    q.set_defaults(func=cmd_report_improvements)

    q = sub.add_parser("sweep", help="test F1 against ensemble size")
    q.add_argument("--setting", required=True)
    q.add_argument("--kmax", type=int, required=True)
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_sweep)

    rd = sub.add_parser("render", help="figures").add_subparsers(dest="action", required=True)
    q = rd.add_parser("diff", help="single-vs-ensemble disagreement PNG")
    q.add_argument("--setting", required=True)
    q.add_argument("--scene", required=True)
    q.add_argument("--top", type=int, default=20)
    q.add_argument("--threshold", type=float, default=0.5)
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_render_diff)
    q = rd.add_parser("diagram", help="performance diagram SVG")
    q.add_argument("--settings", required=True)
    q.add_argument("--sizes", type=_int_list, default=[10, 20, 40])
    q.add_argument("--title", default="")
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_render_diagram)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except (ValueError, TrainError, MatrixError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
