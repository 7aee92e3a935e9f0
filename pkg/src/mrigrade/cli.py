"""Command-line pipeline: phantom -> preprocess -> extract -> train -> cascade -> report.

Every command reads one TOML config plus a few path flags, writes
deterministic artifacts (CSV, JSON, raw blobs, graymaps, plots) and exits 0
on success, 1 on runtime failure, 2 on configuration or validation problems.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cascade import (
    CascadeSpec,
    LEAF_LABELS,
    STAGES,
    cascade_evaluate,
    group_confusion,
    grouped_recalls,
    multiclass_confusion,
    relabel_for_stage,
)
from .config import ConfigError, ExperimentConfig, from_dict, load_config_raw
from .feature_extract import extract_features, intermediate_maps
from .losses import LOSS_KINDS
from .metrics import gaussian_smooth
from .phantom import generate_volume, volume_name
from .preprocess import preprocess_volume
from .trainer import (
    evaluate,
    load_checkpoint,
    pool_dataset,
    save_checkpoint,
    split_dataset,
    train,
    write_log_csv,
)
from .volume_store import (
    DatasetManifest,
    ManifestEntry,
    _atomic_write_bytes,
    load_manifest,
    manifest_bytes,
    read_volume,
    save_manifest,
    volume_blobs,
    volume_file_paths,
    write_volume,
)

STAGE_CHOICES = ("1", "2", "3", "six")


def _require_sections(raw: dict, *names: str):
    for name in names:
        if name not in raw:
            raise ConfigError(f"config is missing the required [{name}] section")


def _write_if_changed(path: Path, blob: bytes) -> bool:
    if path.exists() and path.read_bytes() == blob:
        return False
    _atomic_write_bytes(path, blob)
    return True


def _write_json(path: Path, payload: dict):
    blob = (json.dumps(payload, sort_keys=True, indent=2, default=float) + "\n").encode()
    _atomic_write_bytes(path, blob)


def _write_matrix_csv(path: Path, matrix: np.ndarray, labels: tuple[str, ...]):
    lines = ["true\\pred," + ",".join(labels)]
    for name, row in zip(labels, np.asarray(matrix)):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def write_pgm(image: np.ndarray, path: Path):
    """Binary portable graymap, intensities min-max scaled to 0..255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("graymap dumps need a 2-D image")
    lo, hi = image.min(), image.max()
    scaled = np.zeros_like(image) if hi == lo else (image - lo) * (255.0 / (hi - lo))
    body = np.rint(scaled).astype(np.uint8).tobytes()
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode()
    _atomic_write_bytes(path, header + body)


def _split_manifest_for(data_dir: Path, cfg: ExperimentConfig) -> DatasetManifest:
    """Load the shared split-tagged manifest, creating it on first use."""
    split_path = data_dir / "manifest_split.csv"
    if split_path.exists():
        return load_manifest(split_path)
    manifest = load_manifest(data_dir / "manifest.csv")
    tagged = split_dataset(manifest, cfg.train.split_seed)
    _write_if_changed(split_path, manifest_bytes(tagged))
    return tagged


def cmd_phantom(cfg: ExperimentConfig, raw: dict, args) -> int:
    _require_sections(raw, "phantom")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    changed = 0
    manifest = DatasetManifest(seed=cfg.phantom.seed)
    for grade, count in enumerate(cfg.phantom.counts):
        for index in range(count):
            vol = generate_volume(cfg.phantom, grade, index)
            name = volume_name(grade, index)
            sidecar, raw_path, mask_path = volume_file_paths(out / name)
            sidecar_blob, payload, mask_blob = volume_blobs(vol)
            for path, blob in ((raw_path, payload), (mask_path, mask_blob), (sidecar, sidecar_blob)):
                if blob is not None and _write_if_changed(path, blob):
                    changed += 1
            manifest.entries.append(ManifestEntry(name, grade, "train"))
    changed += _write_if_changed(out / "manifest.csv", manifest_bytes(manifest))
    _write_json(out / "run.json", {
        "command": "phantom",
        "volumes": len(manifest.entries),
        "counts": list(cfg.phantom.counts),
        "seed": cfg.phantom.seed,
    })
    print(out / "manifest.csv")
    if changed == 0:
        print("up-to-date")
    return 0


def cmd_preprocess(cfg: ExperimentConfig, raw: dict, args) -> int:
    _require_sections(raw, "preprocess")
    data, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(data / "manifest.csv")
    for entry in manifest.entries:
        vol = read_volume(data / entry.path)
        write_volume(preprocess_volume(vol, cfg.preprocess), out / entry.path)
    save_manifest(manifest, out / "manifest.csv")
    _write_json(out / "run.json", {
        "command": "preprocess",
        "volumes": len(manifest.entries),
        "target": [cfg.preprocess.target_height, cfg.preprocess.target_width],
    })
    print(out / "manifest.csv")
    return 0


def cmd_extract(cfg: ExperimentConfig, raw: dict, args) -> int:
    _require_sections(raw, "feature_extract")
    data, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_dir = Path(args.dump_maps) if args.dump_maps else None
    if dump_dir:
        dump_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(data / "manifest.csv")
    failures = []
    for entry in manifest.entries:
        vol = read_volume(data / entry.path)
        try:
            enriched = extract_features(vol, cfg.feature_extract)
        except ValueError as exc:
            failures.append(f"{entry.path}: {exc}")
            continue
        write_volume(enriched, out / entry.path)
        if dump_dir:
            mid = vol.spatial_shape[0] // 2
            stem = Path(entry.path).name
            for channel in ("T2W", "ADC", "DWI"):
                for op_name, volume in intermediate_maps(vol, cfg.feature_extract, channel).items():
                    write_pgm(volume[mid], dump_dir / f"{stem}_{channel}_{op_name}.pgm")
            write_pgm(enriched.channel("FE")[mid], dump_dir / f"{stem}_FE.pgm")
    save_manifest(manifest, out / "manifest.csv")
    _write_json(out / "run.json", {
        "command": "extract",
        "volumes": len(manifest.entries) - len(failures),
        "failed": len(failures),
    })
    print(out / "manifest.csv")
    if failures:
        for line in failures:
            print(f"error: {line}", file=sys.stderr)
        return 1
    return 0


def cmd_train(cfg: ExperimentConfig, raw: dict, args) -> int:
    _require_sections(raw, "model", "train", "loss")
    data, out = Path(args.data), Path(args.out)
    loss_cfg = cfg.loss if args.loss is None else replace(cfg.loss, kind=args.loss)
    tagged = _split_manifest_for(data, cfg)
    if args.stage == "six":
        stage_manifest, n_classes = tagged, 6
    else:
        stage_manifest, n_classes = relabel_for_stage(tagged, int(args.stage)), 2
    run_dir = out / f"stage{args.stage}_{loss_cfg.kind}"
    run_dir.mkdir(parents=True, exist_ok=True)

    if cfg.train.folds:
        manifests = split_dataset(load_manifest(data / "manifest.csv"),
                                  cfg.train.split_seed, folds=cfg.train.folds)
        fold_rows = []
        for i, fold_manifest in enumerate(manifests):
            if args.stage != "six":
                fold_manifest = relabel_for_stage(fold_manifest, int(args.stage))
            dataset = pool_dataset(fold_manifest, data, cfg.model.pooled_grid)
            result = train(dataset, cfg.model, cfg.train, loss_cfg, cfg.feedback, n_classes)
            write_log_csv(result.log, run_dir / f"fold{i}_log.csv")
            save_checkpoint(result.selected, run_dir / f"fold{i}_checkpoint")
            sel = result.selected
            fold_rows.append((i, sel.epoch, sel.val_acc, sel.val_recall, sel.val_ars))
        lines = ["fold,epoch,val_acc,val_recall,val_ars"]
        lines += [f"{i},{e},{a!r},{r!r},{s!r}" for i, e, a, r, s in fold_rows]
        _atomic_write_bytes(run_dir / "folds.csv", ("\n".join(lines) + "\n").encode())
        _write_json(run_dir / "summary.json", {
            "command": "train",
            "stage": args.stage,
            "loss": loss_cfg.kind,
            "folds": len(fold_rows),
            "mean_val_ars": float(np.mean([s for *_, s in fold_rows])),
        })
        print(run_dir)
        return 0

    dataset = pool_dataset(stage_manifest, data, cfg.model.pooled_grid)
    result = train(dataset, cfg.model, cfg.train, loss_cfg, cfg.feedback, n_classes)
    write_log_csv(result.log, run_dir / "log.csv")
    save_checkpoint(result.selected, run_dir / "checkpoint")
    _write_json(run_dir / "summary.json", {
        "command": "train",
        "stage": args.stage,
        "loss": loss_cfg.kind,
        "stopped_epoch": result.stopped_epoch,
        "excellent_checkpoints": len(result.checkpoints),
        "selected": {
            "epoch": result.selected.epoch,
            "val_acc": result.selected.val_acc,
            "val_recall": result.selected.val_recall,
            "val_ars": result.selected.val_ars,
        },
    })
    print(run_dir)
    return 0


def _print_bundle(bundle) -> None:
    rows = bundle.as_dict()
    for key in ("accuracy", "precision", "recall", "ars", "f2", "auc"):
        value = rows[key]
        print(f"{key:>9}  {'n/a' if value is None else f'{value:.4f}'}")
    print(f"{'tp/fp/fn/tn':>9}  {rows['tp']}/{rows['fp']}/{rows['fn']}/{rows['tn']}")


def cmd_eval(cfg: ExperimentConfig, raw: dict, args) -> int:
    data = Path(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    tagged = _split_manifest_for(data, cfg)
    if args.stage == "six":
        if ckpt.n_classes != 6:
            raise ConfigError("stage six evaluation needs a six-class checkpoint")
        dataset = pool_dataset(tagged, data, ckpt.model_cfg.pooled_grid)
        counts = multiclass_confusion(ckpt, dataset, args.split)
        acc = float(np.trace(counts) / counts.sum())
        print(f"accuracy  {acc:.4f}")
        if args.out:
            _write_matrix_csv(Path(args.out), counts.astype(float),
                              tuple(str(g) for g in range(6)))
            _write_json(Path(args.out).with_suffix(".json"), {
                "command": "eval",
                "stage": args.stage,
                "split": args.split,
                "accuracy": acc,
            })
        return 0
    if ckpt.n_classes != 2:
        raise ConfigError("stages 1-3 need a binary checkpoint")
    stage_manifest = relabel_for_stage(tagged, int(args.stage))
    dataset = pool_dataset(stage_manifest, data, ckpt.model_cfg.pooled_grid)
    bundle = evaluate(ckpt, dataset, args.split)
    _print_bundle(bundle)
    if args.out:
        items = sorted(bundle.as_dict().items())
        lines = [",".join(k for k, _ in items),
                 ",".join("" if v is None else repr(v) for _, v in items)]
        _atomic_write_bytes(Path(args.out), ("\n".join(lines) + "\n").encode())
        _write_json(Path(args.out).with_suffix(".json"), {
            "command": "eval",
            "stage": args.stage,
            "split": args.split,
            "metrics": bundle.as_dict(),
        })
    return 0


def cmd_cascade(cfg: ExperimentConfig, raw: dict, args) -> int:
    paths = {1: args.c1 or cfg.cascade.c1, 2: args.c2 or cfg.cascade.c2, 3: args.c3 or cfg.cascade.c3}
    missing = [f"c{s}" for s in STAGES if not paths[s]]
    if missing:
        raise ConfigError(f"missing stage checkpoint paths: {', '.join(missing)}")
    data, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = CascadeSpec({s: load_checkpoint(paths[s]) for s in STAGES})
    tagged = _split_manifest_for(data, cfg)
    dataset = pool_dataset(tagged, data, spec.checkpoints[1].model_cfg.pooled_grid)
    result = cascade_evaluate(spec, dataset, args.split)

    _write_matrix_csv(out / "composed.csv", result.composed, LEAF_LABELS)
    _write_matrix_csv(out / "empirical.csv", result.empirical, LEAF_LABELS)
    _write_matrix_csv(out / "empirical_counts.csv",
                      result.empirical_counts.astype(float), LEAF_LABELS)
    stage_lines = ["stage,tp,fp,fn,tn,accuracy,recall"]
    for s in STAGES:
        c = result.stage_confusions[s]
        stage_lines.append(f"{s},{c.tp},{c.fp},{c.fn},{c.tn},{c.accuracy!r},{c.recall!r}")
    _atomic_write_bytes(out / "stages.csv", ("\n".join(stage_lines) + "\n").encode())

    summary = {
        "command": "cascade",
        "composed_leaf_recalls": [float(v) for v in result.composed_leaf_recalls],
        "empirical_leaf_recalls": [float(v) for v in result.empirical_leaf_recalls],
        "composed_diagonal_mean": float(result.composed_leaf_recalls.mean()),
        "empirical_diagonal_mean": float(result.empirical_leaf_recalls.mean()),
        "leaves": list(LEAF_LABELS),
    }
    if args.baseline:
        baseline = load_checkpoint(args.baseline)
        grouped = group_confusion(multiclass_confusion(baseline, dataset, args.split))
        _write_matrix_csv(out / "baseline_grouped.csv", grouped.astype(float), LEAF_LABELS)
        recalls = grouped_recalls(grouped)
        summary["baseline_grouped_recalls"] = [float(v) for v in recalls]
        summary["baseline_diagonal_mean"] = float(recalls.mean())
    _write_json(out / "summary.json", summary)
    for leaf, value in zip(LEAF_LABELS, result.composed_leaf_recalls):
        print(f"recall[{leaf}]  {value:.4f}")
    print(out / "summary.json")
    return 0


def _read_log_rows(path: Path) -> dict[str, np.ndarray]:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    columns = {h: [] for h in header}
    for line in lines[1:]:
        for h, cell in zip(header, line.split(",")):
            columns[h].append(float(cell))
    return {h: np.array(v) for h, v in columns.items()}


def cmd_report(cfg: ExperimentConfig, raw: dict, args) -> int:
    run, out = Path(args.run), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sigma = cfg.report.smooth_sigma if args.smooth_sigma is None else args.smooth_sigma
    logs = sorted(run.rglob("*log.csv"))
    matrices = sorted(p for p in run.rglob("*.csv")
                      if p.name in ("composed.csv", "empirical.csv", "baseline_grouped.csv"))
    if not logs and not matrices:
        raise ConfigError(f"no log.csv or cascade matrices found under {run}")

    plots = []
    for log_path in logs:
        columns = _read_log_rows(log_path)
        smooth = gaussian_smooth(columns["train_loss"], sigma)
        stem = log_path.parent.name + "_" + log_path.stem
        lines = ["epoch,train_loss,train_loss_smooth,val_acc,val_recall,A,lr"]
        for i in range(len(columns["epoch"])):
            cells = [columns["train_loss"][i], smooth[i], columns["val_acc"][i],
                     columns["val_recall"][i], columns["A"][i], columns["lr"][i]]
            lines.append(
                str(int(columns["epoch"][i])) + ","
                + ",".join(repr(float(c)) for c in cells)
            )
        _atomic_write_bytes(out / f"{stem}_curve.csv", ("\n".join(lines) + "\n").encode())
        plots.append((stem, columns, smooth))

    if cfg.report.plots:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        def save(fig, path: Path):
            fig.savefig(path, metadata={"Software": None, "CreationDate": None})
            plt.close(fig)

        for stem, columns, smooth in plots:
            fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
            ax1.plot(columns["epoch"], columns["train_loss"], label="train loss", alpha=0.5)
            if sigma > 0:
                ax1.plot(columns["epoch"], smooth, label=f"smoothed (sigma={sigma:g})")
            ax1.set_ylabel("loss")
            ax1.legend()
            ax2.plot(columns["epoch"], columns["val_acc"], label="val accuracy")
            ax2.plot(columns["epoch"], columns["val_recall"], label="val recall")
            ax2.set_xlabel("epoch")
            ax2.set_ylabel("metric")
            ax2.legend()
            save(fig, out / f"{stem}_curve.png")
        for matrix_path in matrices:
            columns = matrix_path.read_text().strip().splitlines()
            labels = columns[0].split(",")[1:]
            values = np.array([[float(c) for c in line.split(",")[1:]] for line in columns[1:]])
            fig, ax = plt.subplots(figsize=(5, 4.5))
            im = ax.imshow(values, cmap="viridis", vmin=0.0)
            ax.set_xticks(range(len(labels)), labels)
            ax.set_yticks(range(len(labels)), labels)
            ax.set_xlabel("predicted")
            ax.set_ylabel("true")
            for (i, j), v in np.ndenumerate(values):
                ax.text(j, i, f"{v:.2f}", ha="center", va="center",
                        color="white" if v < values.max() * 0.6 else "black", fontsize=8)
            fig.colorbar(im)
            stem = matrix_path.parent.name + "_" + matrix_path.stem
            save(fig, out / f"{stem}.png")
    _write_json(out / "run.json", {
        "command": "report",
        "curves": len(logs),
        "matrices": len(matrices),
        "smooth_sigma": sigma,
        "plots": bool(cfg.report.plots),
    })
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrigrade",
        description="Recall-feedback training pipeline for graded multi-channel volumes",
    )
    parser.add_argument(
        "--config",
        default=os.environ.get("MRIGRADE_CONFIG", "experiment.toml"),
        help="TOML experiment config (env MRIGRADE_CONFIG overrides the default)",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="override the experiment seed from the config")
    parser.add_argument("--jobs", type=int, default=1,
                        help="upper bound on worker processes (current stages run serially)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="crop, resize and normalize volumes")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("extract", help="append the fused feature channel")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-maps", default=None,
                   help="directory for graymap dumps of the intermediate maps")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one stage classifier or the six-class baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", required=True, choices=STAGE_CHOICES)
    p.add_argument("--loss", default=None, choices=LOSS_KINDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stage", required=True, choices=STAGE_CHOICES)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default=None, help="optional CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cascade", help="compose three stage checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c1", default=None)
    p.add_argument("--c2", default=None)
    p.add_argument("--c3", default=None)
    p.add_argument("--baseline", default=None,
                   help="optional six-class checkpoint for the grouped comparison")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("report", help="render curves and matrices from run outputs")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smooth-sigma", type=float, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config_raw(args.config)
        cfg = from_dict(raw, args.seed)
        return args.func(cfg, raw, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
