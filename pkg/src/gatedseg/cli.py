"""Command-line entry point: phantom generation, DICOM ingestion, training,
inference, evaluation and gated-vs-non-gated comparison.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training or
inference error. Every subcommand writes a resolved-config snapshot and the
tool version into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig
from .errors import (ComparisonError, ConfigError, DataError, GatedSegError,
                     ShapeError, TrainingError, UsageError)

log = logging.getLogger("gatedseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3


def _parse_set(value: str) -> tuple[str, str]:
    if "=" not in value:
        raise UsageError(f"--set expects dotted.key=value, got {value!r}")
    key, _, raw = value.partition("=")
    return key.strip(), raw.strip()


def _coerce(raw: str):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if "," in raw:
        return [_coerce(part) for part in raw.split(",")]
    return raw


def _apply_overrides(tree: dict, overrides: list[str]):
    for item in overrides:
        key, raw = _parse_set(item)
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set key {key!r} descends into a non-table value")
        node[parts[-1]] = _coerce(raw)


def load_train_config(config_path: str | None, overrides: list[str]) -> TrainConfig:
    tree: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        tree = tomllib.loads(path.read_text())
    _apply_overrides(tree, overrides)
    return TrainConfig.from_dict(tree)


def _write_run_meta(out_dir: Path, resolved_config: dict, argv: list[str]):
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {"version": __version__, "argv": argv, "config": resolved_config}
    (out_dir / "run_config.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")


def _default_output_root() -> str:
    return os.environ.get("GATEDSEG_OUTPUT_ROOT", ".")


def cmd_synth(args, argv) -> int:
    from .data.manifest import Manifest, write_manifest
    from .data.phantom import default_phantom_spec, generate_phantom
    from .data.volume import save_volume_dir

    out = Path(args.output_dir)
    shape = tuple(int(v) for v in args.shape.split(","))
    if len(shape) != 3:
        raise UsageError(f"--shape must be Z,H,W, got {args.shape!r}")
    split_spec = {}
    total = 0
    for part in args.splits.split(","):
        name, _, count = part.partition("=")
        split_spec[name.strip()] = int(count)
        total += int(count)
    if total != args.subjects:
        raise UsageError(
            f"--splits counts sum to {total}, but --subjects is {args.subjects}"
        )
    subjects, splits = {}, {name: [] for name in split_spec}
    split_order = [name for name, count in split_spec.items() for _ in range(count)]
    for i in range(args.subjects):
        subject_id = f"subject{i:03d}"
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        spec = default_phantom_spec(shape, seed=seed, noise_sigma=args.noise_sigma)
        volume = generate_phantom(spec, subject_id)
        save_volume_dir(out / subject_id, volume,
                        extra_meta={"phantom_spec": spec.to_dict()})
        subjects[subject_id] = subject_id
        splits[split_order[i]].append(subject_id)
    manifest = Manifest(root=out, subjects=subjects, splits=splits)
    write_manifest(out / "manifest.json", manifest)
    _write_run_meta(out, {"subjects": args.subjects, "seed": args.seed,
                          "shape": list(shape), "splits": split_spec,
                          "noise_sigma": args.noise_sigma}, argv)
    print(f"wrote {args.subjects} phantom subjects to {out}")
    return EXIT_OK


def cmd_ingest(args, argv) -> int:
    from .data.dicom_io import load_ct_series, rtstruct_to_masks
    from .data.volume import VolumeRecord, save_volume_dir

    out = Path(args.output_dir)
    class_names = [c.strip() for c in args.classes.split(",") if c.strip()]
    volume, geometry = load_ct_series(args.ct_dir)
    masks = rtstruct_to_masks(args.rtstruct, geometry, class_names)
    record = VolumeRecord(image=volume.image, masks=masks, spacing=volume.spacing,
                          subject_id=args.subject_id or volume.subject_id,
                          class_names=class_names)
    save_volume_dir(out / record.subject_id, record)
    _write_run_meta(out, {"ct_dir": str(args.ct_dir), "rtstruct": str(args.rtstruct),
                          "classes": class_names}, argv)
    print(f"ingested {record.subject_id}: image {record.image.shape}, "
          f"{record.num_classes} structures")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    from .data.manifest import read_manifest
    from .training import train

    config = load_train_config(args.config, args.set or [])
    manifest = read_manifest(args.manifest)
    out = Path(args.output_dir)
    _write_run_meta(out, config.to_dict(), argv)
    final = train(manifest, config, out, resume_from=args.resume)
    print(f"final checkpoint: {final}")
    return EXIT_OK


def cmd_infer(args, argv) -> int:
    from .data.manifest import read_manifest
    from .data.normalize import NormStats
    from .inference import infer_volume
    from .model.net import load_checkpoint

    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, extra = load_checkpoint(ckpt)
    stats = NormStats.from_dict(extra["norm_stats"])
    manifest = read_manifest(args.manifest)
    volume = manifest.load_volume(args.subject)
    probs, hard, det = infer_volume(model, volume, stats, args.gating)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out / f"{args.subject}_prediction.npz",
                        probs=probs, masks=hard, det_probs=det)
    _write_run_meta(out, {"checkpoint": str(ckpt), "subject": args.subject,
                          "gating": args.gating}, argv)
    print(f"predicted {args.subject}: masks {hard.shape}, det {det.shape}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    from .data.manifest import read_manifest
    from .data.normalize import NormStats
    from .evaluation import evaluate, write_report
    from .model.net import load_checkpoint

    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, extra = load_checkpoint(ckpt)
    stats = NormStats.from_dict(extra["norm_stats"])
    manifest = read_manifest(args.manifest)
    report = evaluate(model, stats, manifest, args.split, args.gating,
                      run_id=args.run_id)
    out = Path(args.output_dir)
    write_report(report, out)
    _write_run_meta(out, {"checkpoint": str(ckpt), "split": args.split,
                          "gating": args.gating, "run_id": args.run_id}, argv)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_compare(args, argv) -> int:
    from .evaluation import compare, read_report_csv

    for path in (args.report_a, args.report_b):
        if not Path(path).exists():
            raise DataError(f"report not found: {path}")
    report_a = read_report_csv(args.report_a)
    report_b = read_report_csv(args.report_b)
    out = Path(args.output_dir)
    result = compare(report_a, report_b, out)
    _write_run_meta(out, {"report_a": str(args.report_a),
                          "report_b": str(args.report_b)}, argv)
    print(f"mean dice-loss delta ({result['run_a']} - {result['run_b']}): "
          f"{result['mean_delta']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatedseg",
        description="Detection-gated slice segmentation pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic phantom subjects + manifest")
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", default="32,128,128", help="volume shape Z,H,W")
    p.add_argument("--splits", default="train=6,val=1,test=1")
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--output-dir", "-o", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="ingest a DICOM CT series + RT structure set")
    p.add_argument("--ct-dir", required=True)
    p.add_argument("--rtstruct", required=True)
    p.add_argument("--classes", required=True, help="comma-separated structure names")
    p.add_argument("--subject-id", default=None)
    p.add_argument("--output-dir", "-o", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="TOML config file (TrainConfig schema)")
    p.add_argument("--set", action="append", metavar="dotted.key=value",
                   help="override any config key, e.g. --set model.gating_mode=hard")
    p.add_argument("--resume", default=None)
    p.add_argument("--output-dir", "-o", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="autoregressive inference over one subject")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--gating", default=None, choices=["none", "soft", "hard"])
    p.add_argument("--output-dir", "-o", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--gating", default="hard", choices=["none", "soft", "hard"])
    p.add_argument("--run-id", default="run")
    p.add_argument("--output-dir", "-o", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare two evaluation record CSVs")
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.add_argument("--output-dir", "-o", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def run(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if getattr(args, "output_dir", None) is None:
        args.output_dir = str(Path(_default_output_root()) / args.command)
    try:
        return args.func(args, argv)
    except (UsageError, ConfigError, ComparisonError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ShapeError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    except GatedSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
