"""Command-line entry point.

Commands: train, eval, gradcheck, ablate, robustness, gendata.
Exit codes: 0 success, 1 check failure, 2 usage/config error.
The environment variable MGT_SEED overrides the configured seed.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from . import checks
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (DEFAULTS, RunConfig, checkpoint_config_text,
                     parse_checkpoint_config, parse_scales)
from .data import (DatasetManifest, SHAPE_NAMES, fps_drop, generate_synthetic,
                   load_dataset, save_split)
from .errors import ConfigError, FormatError, NumericError
from .model import MgtModel
from .training import evaluate, load_state, train

def _fmt(value):
    return repr(value) if isinstance(value, float) else str(value)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    for key, (default, _) in DEFAULTS.items():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}",
                            metavar="V", help=f"override {key} (default {default})")


def _resolve_config(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items()
                 if k.startswith("cfg_") and v is not None}
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config, overrides)
    else:
        cfg = RunConfig(overrides)
    if "MGT_SEED" in os.environ:
        cfg.update({"seed": os.environ["MGT_SEED"]})
    return cfg


def _load_data(cfg_or_path):
    path = cfg_or_path if isinstance(cfg_or_path, str) else cfg_or_path["data"]
    if not path:
        raise ConfigError("no dataset manifest given (key 'data')")
    if not Path(path).exists():
        raise ConfigError(f"dataset manifest not found: {path}")
    return load_dataset(path)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _train_run(cfg: RunConfig, out_dir: Path, manifest, train_clouds, test_clouds,
               quiet=False):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.serialize(), encoding="utf-8")
    model = MgtModel(cfg.model_config(len(manifest.classes), manifest.channels),
                     seed=cfg["seed"])
    if not quiet:
        print(f"model parameters: {model.param_count}")

    rows = []

    def on_epoch(row):
        rows.append(row)
        if not quiet:
            print(f"epoch {row['epoch']:3d} lr {row['lr']:.5f} "
                  f"loss {row['train_loss']:.4f} oa {row['test_oa']:.4f} "
                  f"macc {row['test_macc']:.4f}")

    result = train(model, train_clouds, test_clouds, cfg.train_config(),
                   epoch_callback=on_epoch)
    _write_csv(out_dir / "metrics.csv",
               ["epoch", "lr", "train_loss", "test_oa", "test_macc"],
               [[r["epoch"], r["lr"], r["train_loss"], r["test_oa"], r["test_macc"]]
                for r in rows])
    save_checkpoint(out_dir / "best.mgtc", result["best_state"],
                    checkpoint_config_text(cfg, len(manifest.classes),
                                           manifest.channels))
    return result


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    manifest, train_clouds, test_clouds = _load_data(cfg)
    result = _train_run(cfg, Path(cfg["out"]), manifest, train_clouds, test_clouds)
    print(f"best test OA: {result['best_oa']:.4f}")
    return 0


def _model_from_checkpoint(path, manifest):
    state, config_text = load_checkpoint(path)
    cfg, num_classes, c_in = parse_checkpoint_config(config_text)
    if num_classes != len(manifest.classes):
        raise ConfigError(
            f"checkpoint has {num_classes} classes, dataset has {len(manifest.classes)}")
    if c_in != manifest.channels:
        raise ConfigError(
            f"checkpoint expects {c_in} channels, dataset has {manifest.channels}")
    model = MgtModel(cfg.model_config(num_classes, c_in), seed=cfg["seed"])
    load_state(model, state)
    return model


def cmd_eval(args) -> int:
    manifest, train_clouds, test_clouds = _load_data(args.data)
    model = _model_from_checkpoint(args.checkpoint, manifest)
    clouds = train_clouds if args.split == "train" else test_clouds
    metrics = evaluate(model, clouds)
    print(f"OA {_fmt(metrics.oa)}")
    print(f"mAcc {_fmt(metrics.macc)}")
    if args.out:
        _write_csv(args.out, ["oa", "macc"], [[metrics.oa, metrics.macc]])
    return 0


def cmd_gradcheck(args) -> int:
    reports = checks.run_suite(step=args.step, tol=args.tol,
                               max_elements=args.max_elements)
    ok = True
    for group, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {group}: max relative error {rep.max_error:.3e}")
        if not rep.passed:
            ok = False
            for entry in rep.entries:
                if not entry.passed:
                    print(f"     {entry.name}: err {entry.max_error:.3e} "
                          f"at index {entry.worst_index}")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    manifest, train_clouds, test_clouds = _load_data(cfg)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.serialize(), encoding="utf-8")
    sweep = parse_scales(args.sweep_scales)

    rows = []

    def run_cell(name, values):
        cell = RunConfig(dict(cfg.values))
        cell.update(values)
        result = _train_run(cell, out_dir / name, manifest, train_clouds,
                            test_clouds, quiet=True)
        best = max(result["history"], key=lambda r: r["test_oa"])
        rows.append([name, cell["sphere_map"], cell["mrc"], cell["scales"],
                     best["test_oa"], best["test_macc"]])
        print(f"{name}: oa {best['test_oa']:.4f} macc {best['test_macc']:.4f}")

    for cell_name, sm, mc in (("A", False, False), ("B", False, True),
                              ("C", True, False), ("D", True, True)):
        run_cell(f"grid_{cell_name}", {"sphere_map": sm, "mrc": mc})
    for n_scales in (1, 2, 3):
        scales_text = ",".join(f"{k}x{s}" for k, s in list(sweep)[:n_scales])
        run_cell(f"scales_{n_scales}", {"scales": scales_text})

    _write_csv(out_dir / "ablation.csv",
               ["cell", "sphere_map", "mrc", "scales", "oa", "macc"], rows)
    return 0


def cmd_robustness(args) -> int:
    manifest, _, test_clouds = _load_data(args.data)
    model = _model_from_checkpoint(args.checkpoint, manifest)
    keep_values = [int(k) for k in args.keep.split(",")]
    rows = []
    for keep in keep_values:
        corrupted = [fps_drop(c, min(keep, c.n_points)) for c in test_clouds]
        metrics = evaluate(model, corrupted)
        rows.append([keep, metrics.oa])
        print(f"keep {keep}: oa {metrics.oa:.4f}")
    if args.out:
        _write_csv(args.out, ["keep", "oa"], rows)
    return 0


def cmd_gendata(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(os.environ.get("MGT_SEED", args.seed))
    train_clouds, test_clouds = generate_synthetic(
        per_class=args.per_class, n_points=args.n_points, seed=seed)
    save_split(out_dir / "train.pcs", train_clouds, args.n_points, 3)
    save_split(out_dir / "test.pcs", test_clouds, args.n_points, 3)
    DatasetManifest(classes=list(SHAPE_NAMES), train="train.pcs",
                    test="test.pcs", n_points=args.n_points,
                    channels=3).save(out_dir / "manifest.txt")
    print(f"wrote {len(train_clouds)} train / {len(test_clouds)} test objects "
          f"to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgt",
        description="Multi-scale geometry-aware point cloud classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="optional CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--step", type=float, default=3e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-elements", type=int, default=25,
                   help="finite-difference samples per large tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="sphere-map/MRC grid and scale sweep")
    _add_config_flags(p)
    p.add_argument("--sweep-scales", default="16x16,32x8,64x4",
                   help="scales whose prefixes form the 1/2/3-scale sweep")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robustness", help="missing-point robustness curve")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--keep", default="256,128,64", help="comma-separated keep counts")
    p.add_argument("--out", help="optional CSV output path")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("gendata", help="generate the synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=75)
    p.add_argument("--n-points", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gendata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
