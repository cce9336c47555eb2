"""Command-line interface.

Subcommands: corpus (write procedural textures), train, synthesize (corrupt
clean images with ground-truth masks), restore, evaluate (six-metric report),
and ablate (train and compare the three denoiser variants).

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import checkpoint as ckpt
from . import metrics as qm
from .data import DatasetSpec, ingest, write_texture_corpus
from .denoisers import build_denoiser, flop_count, param_count
from .diffusion import make_schedule
from .images import Domain, load_image, load_mask, save_image, save_mask
from .lab import SyntheticArtifactSpec, detect_artifacts, synthesize_artifact
from .restoration import restore
from .runconfig import ConfigError, load_run_config
from .training import TrainingDiverged, train

VARIANTS = {
    "swin_concat": {"backbone": "swin", "time_injection": "concat_token"},
    "swin_add": {"backbone": "swin", "time_injection": "add"},
    "unet": {"backbone": "unet", "time_injection": "add"},
}


def _image_files(path: Path) -> list:
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if files:
            return files
    raise ConfigError(f"no input images at {path}")


def _load_checkpoint_model(path: Path):
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    ck = ckpt.load_checkpoint(path)
    model = build_denoiser(ck.config)
    model.load_state_dict(ck.weights)
    schedule = make_schedule(**ck.schedule)
    return ck, model, schedule


def cmd_corpus(args) -> int:
    paths = write_texture_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} patches to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.override)
    data_root = args.data or cfg.data["root"]
    if data_root is None:
        raise ConfigError("[data] root: no dataset directory given "
                          "(flag --data or config key)")
    tc = cfg.train
    if args.steps is not None:
        tc = dataclasses.replace(tc, total_steps=args.steps)
    if args.seed is not None:
        tc = dataclasses.replace(tc, seed=args.seed)

    spec = DatasetSpec(root_path=data_root,
                       patch_size=cfg.data["patch_size"],
                       train_fraction=cfg.data["train_fraction"],
                       val_fraction=cfg.data["val_fraction"],
                       shuffle_seed=cfg.data["shuffle_seed"])
    dataset = ingest(spec, batch_size=tc.batch_size)
    schedule = make_schedule(**cfg.schedule_args)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    losses = []
    try:
        for event in train(dataset, cfg.denoiser, tc, schedule):
            losses.append((event.step, event.loss))
            if event.checkpoint is not None:
                ckpt.save_checkpoint(event.checkpoint,
                                     out / f"ckpt_step{event.step:06d}.bin")
                ckpt.save_checkpoint(event.checkpoint, out / "model.bin")
    except TrainingDiverged as exc:
        with open(out / "diverged.json", "w") as fh:
            json.dump(exc.dump, fh, indent=2)
        print(f"error: {exc} (dump in {out / 'diverged.json'})",
              file=sys.stderr)
        return 3
    finally:
        with open(out / "loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("step", "loss"))
            writer.writerows(losses)
    print(f"trained {len(losses)} steps; checkpoints in {out}")
    return 0


def cmd_synthesize(args) -> int:
    cfg = load_run_config(args.config, args.override)
    kind = args.kind or cfg.synthesize["kind"]
    intensity = args.intensity if args.intensity is not None \
        else cfg.synthesize["intensity"]
    seed = args.seed if args.seed is not None else cfg.synthesize["seed"]

    files = _image_files(Path(args.input))
    corrupted_dir = Path(args.out) / "corrupted"
    mask_dir = Path(args.out) / "masks"
    corrupted_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(files):
        image = load_image(path, Domain.BYTE255)
        spec = SyntheticArtifactSpec(kind=kind, seed=seed * 100003 + i,
                                     intensity=intensity)
        corrupted, truth = synthesize_artifact(image, spec)
        save_image(corrupted, corrupted_dir / f"{path.stem}.png")
        save_mask(truth, mask_dir / f"{path.stem}.png")
    print(f"synthesized {len(files)} {kind} artifacts under {args.out}")
    return 0


def cmd_restore(args) -> int:
    cfg = load_run_config(args.config, args.override)
    ck, model, schedule = _load_checkpoint_model(Path(args.checkpoint))
    snapshots = tuple(int(t) for t in args.snapshots.split(",")) \
        if args.snapshots else tuple(cfg.restore["snapshots"])
    seed = args.seed if args.seed is not None else cfg.restore["seed"]

    files = _image_files(Path(args.input))
    mask_dir = None
    if args.mask is None and not args.detect:
        raise ConfigError("either --mask or --detect is required")
    if args.mask is not None:
        mask_dir = Path(args.mask)
        if not mask_dir.exists():
            raise ConfigError(f"mask path not found: {mask_dir}")

    out = Path(args.out)
    restored_dir = out / "restored"
    out_mask_dir = out / "masks"
    restored_dir.mkdir(parents=True, exist_ok=True)
    out_mask_dir.mkdir(parents=True, exist_ok=True)

    for i, path in enumerate(files):
        image = load_image(path, Domain.BYTE255)
        if mask_dir is not None:
            mask_path = mask_dir if mask_dir.is_file() else \
                mask_dir / f"{path.stem}.png"
            if not mask_path.is_file():
                raise ConfigError(f"no mask for {path.stem} at {mask_path}")
            mask = load_mask(mask_path)
        else:
            mask = detect_artifacts(image, cfg.detect)
        trace = restore(image, mask, model, schedule, snapshot_ts=snapshots,
                        seed=seed + i, masked_init=cfg.restore["masked_init"])
        save_image(trace.final, restored_dir / f"{path.stem}.png")
        save_mask(mask, out_mask_dir / f"{path.stem}.png")
        snap_dir = out / "snapshots" / path.stem
        snap_dir.mkdir(parents=True, exist_ok=True)
        for t, snap in trace.snapshots:
            save_image(snap, snap_dir / f"snap_t{t}.png")
    print(f"restored {len(files)} images into {restored_dir}")
    return 0


def _paired_stems(dirs: list) -> list:
    stem_sets = [set(p.stem for p in _image_files(d)) for d in dirs]
    union = set().union(*stem_sets)
    common = set.intersection(*stem_sets)
    unmatched = sorted(union - common)
    if unmatched:
        raise ConfigError("unpaired ids: " + ", ".join(unmatched))
    return sorted(common)


def cmd_evaluate(args) -> int:
    clean_dir, restored_dir = Path(args.clean), Path(args.restored)
    mask_dir = Path(args.mask)
    stems = _paired_stems([clean_dir, restored_dir, mask_dir])
    rows = []
    for stem in stems:
        clean = load_image(clean_dir / f"{stem}.png", Domain.BYTE255)
        restored = load_image(restored_dir / f"{stem}.png", Domain.BYTE255)
        mask = load_mask(mask_dir / f"{stem}.png")
        rows.append(qm.compute_row(stem, clean, restored, mask))
    report = qm.build_report(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    qm.write_report_csv(report, out / "report.csv")
    qm.write_report_json(report, out / "report.json")
    print(f"evaluated {len(rows)} pairs; report in {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.override)
    data_root = args.data or cfg.data["root"]
    if data_root is None:
        raise ConfigError("[data] root: no dataset directory given")
    names = args.variants.split(",") if args.variants else list(VARIANTS)
    for name in names:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}")

    schedule = make_schedule(**cfg.schedule_args)
    spec = DatasetSpec(root_path=data_root,
                       patch_size=cfg.denoiser.image_size,
                       train_fraction=cfg.data["train_fraction"],
                       val_fraction=cfg.data["val_fraction"],
                       shuffle_seed=cfg.data["shuffle_seed"])
    dataset = ingest(spec, batch_size=cfg.train.batch_size)
    val = dataset.val_images()
    if not val:
        raise ConfigError("validation split is empty; lower train_fraction")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for name in names:
        dc = dataclasses.replace(cfg.denoiser, **VARIANTS[name])
        model = None
        for event in train(dataset, dc, cfg.train, schedule):
            if event.checkpoint is not None:
                model = event.checkpoint
        model_net = build_denoiser(dc)
        model_net.load_state_dict(model.weights)

        rows, timings = [], []
        i = 0
        while len(timings) < max(10, len(val)):
            image = val[i % len(val)].to_domain(Domain.BYTE255)
            aspec = SyntheticArtifactSpec(kind=cfg.synthesize["kind"],
                                          seed=cfg.synthesize["seed"] + i,
                                          intensity=cfg.synthesize["intensity"])
            corrupted, truth = synthesize_artifact(image, aspec)
            start = time.perf_counter()
            trace = restore(corrupted, truth, model_net, schedule,
                            seed=cfg.restore["seed"] + i,
                            masked_init=cfg.restore["masked_init"])
            timings.append(time.perf_counter() - start)
            if i < len(val):
                rows.append(qm.compute_row(f"val{i:03d}", image, trace.final,
                                           truth))
            i += 1
        report = qm.build_report(rows, complexity={
            "params": param_count(dc), "flops": flop_count(dc),
            "mean_inference_seconds": sum(timings) / len(timings)})
        qm.write_report_json(report, out / f"{name}.json")
        agg = report.aggregate
        table.append([name] + [agg[c] for c in qm.REPORT_COLUMNS]
                     + [report.complexity["params"],
                        report.complexity["flops"],
                        report.complexity["mean_inference_seconds"]])

    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("variant",) + qm.REPORT_COLUMNS
                        + ("params", "flops", "inference_seconds"))
        for row in table:
            writer.writerow([row[0]] + [qm.format_cell(v) if isinstance(v, float)
                                        else str(v) for v in row[1:]])
    print(f"ablation table in {out / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="artifact",
        description="Regional image restoration with a diffusion denoiser")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="config override, repeatable")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("corpus", help="write procedural texture patches")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train a denoiser on clean patches")
    common(p)
    p.add_argument("--data", default=None, help="directory of clean images")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="corrupt clean images with "
                                          "ground-truth masks")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("fold", "bubble", "ink", "illumination"),
                   default=None)
    p.add_argument("--intensity", type=float, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("restore", help="restore artifact regions")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default=None,
                   help="mask PNG or directory paired by basename")
    p.add_argument("--detect", action="store_true",
                   help="derive masks with the threshold detector")
    p.add_argument("--snapshots", default=None,
                   help="comma-separated timesteps, default 0,50,100,150")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="six-metric report over paired dirs")
    p.add_argument("--clean", required=True)
    p.add_argument("--restored", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare denoiser variants")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=None,
                   help="comma-separated subset of swin_concat,swin_add,unet")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract: exit 3
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())
