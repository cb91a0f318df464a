"""Command-line surface binding the library modules.

Global flags (before the subcommand): --config, --seed, --size, --out.
Precedence per field is CLI flag > config file > built-in default. All
file output stays inside the --out directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gbl as gbl_mod
from . import metrics, selfcheck, trainer
from .autodiff import Tensor
from .config import load_run_config
from .errors import CheckpointError, ConfigError, ImageFormatError, ManifestError
from .formation import FormationModel, reconstruct_tensor
from .imageio import load_image, load_manifest, resize_bilinear, save_image


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwenhance",
        description="Physics-constrained underwater image enhancement toolkit")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed override")
    parser.add_argument("--size", type=int, default=None,
                        help="working image size (default 256)")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_enh = sub.add_parser("enhance", help="enhance images with a trained checkpoint")
    p_enh.add_argument("inputs", nargs="+", help="input image paths")
    p_enh.add_argument("--checkpoint", required=True)
    p_enh.add_argument("--dump-components", action="store_true",
                       help="also write the five component images per input")

    p_dec = sub.add_parser("decompose",
                           help="enhance and write the five component images")
    p_dec.add_argument("inputs", nargs="+")
    p_dec.add_argument("--checkpoint", required=True)

    p_eval = sub.add_parser("evaluate", help="score images listed in a manifest")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--no-reference", action="store_true",
                        help="skip reference metrics (manifest has no labels)")

    p_train = sub.add_parser("train", help="train on a paired manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--steps", type=int, default=None)

    p_gbl = sub.add_parser("gbl", help="estimate the global background light")
    p_gbl.add_argument("image")
    p_gbl.add_argument("--image-out", default=None,
                       help="optionally write the estimate as a flat color image")

    p_hist = sub.add_parser("histogram", help="cumulative RGB histogram CSV")
    p_hist.add_argument("inputs", nargs="+")

    sub.add_parser("selftest", help="run the built-in verification suites")
    return parser


def _run_config(args, **extra):
    overrides = {"seed": args.seed, "size": args.size}
    overrides.update(extra)
    return load_run_config(args.config, overrides)


def _load_model(args, checkpoint_path: str):
    ckpt = trainer.load_checkpoint(checkpoint_path)
    cfg = ckpt.config
    if args.size is not None and args.size != cfg.size:
        raise CheckpointError(
            f"checkpoint was trained at size {cfg.size}, requested {args.size}")
    if args.seed is not None:
        cfg.seed = args.seed
    model = trainer.build_model(cfg)
    trainer.bind_weights(model, ckpt.tensors)
    return model, cfg


def _cmd_enhance(args, dump_components: bool) -> int:
    out_dir = Path(args.out)
    model, cfg = _load_model(args, args.checkpoint)
    for input_path in args.inputs:
        img = resize_bilinear(load_image(input_path), cfg.size, cfg.size)
        x = Tensor(np.moveaxis(img, 2, 0))
        j, t_d, t_b = trainer.forward_components(model, x)
        stem = Path(input_path).stem
        save_image(np.moveaxis(j.data, 0, 2), out_dir / f"{stem}_enhanced.png")
        if dump_components:
            a_vec = gbl_mod.estimate_background_light(img)
            recon = reconstruct_tensor(model.formation_model, j, t_d, t_b,
                                       Tensor(a_vec), psf=model.psf)
            t_b_img = (np.moveaxis(t_b.data, 0, 2) if t_b is not None
                       else np.ones_like(img))
            components = {
                "J": np.moveaxis(j.data, 0, 2),
                "td": np.moveaxis(t_d.data, 0, 2),
                "tb": t_b_img,
                "A": np.broadcast_to(a_vec, img.shape).copy(),
                "recon": np.moveaxis(recon.data, 0, 2),
            }
            for tag, array in components.items():
                save_image(array, out_dir / f"{stem}_{tag}.png")
        print(f"enhanced {input_path} -> {out_dir / (stem + '_enhanced.png')}")
    return 0


def _cmd_evaluate(args) -> int:
    entries = load_manifest(args.manifest)
    with_reference = not args.no_reference
    if with_reference and any(e.label_path is None for e in entries):
        raise ManifestError(
            "manifest has no labels; pass --no-reference for no-reference scoring")

    triples = []
    load_failures: list[tuple[str, str]] = []
    for entry in entries:
        try:
            image = load_image(entry.raw_path)
            reference = (load_image(entry.label_path)
                         if with_reference and entry.label_path else None)
            triples.append((entry.id, image, reference))
        except Exception as exc:
            load_failures.append((entry.id, f"{type(exc).__name__}: {exc}"))

    report = metrics.MetricReport(failures=load_failures)
    if triples:
        report = metrics.evaluate_images(triples, with_reference)
        report.failures = load_failures + report.failures
    lines = report.to_lines()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    if report.failures:
        print(f"{len(report.failures)} image(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_train(args) -> int:
    run_cfg = _run_config(args)
    cfg = run_cfg.to_train_config()
    steps = args.steps if args.steps is not None else cfg.steps
    entries = load_manifest(args.manifest)
    if any(e.label_path is None for e in entries):
        raise ManifestError("training needs a paired manifest (id raw label)")
    pairs = [(load_image(e.raw_path), load_image(e.label_path)) for e in entries]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, state, report = trainer.train_pairs(
        pairs, steps, cfg, log_path=out_dir / "train_log.jsonl")
    ckpt_path = (Path(run_cfg.checkpoint_path) if run_cfg.checkpoint_path
                 else out_dir / "checkpoint.muie")
    trainer.save_checkpoint(ckpt_path, model.named_params(), state, cfg)
    print(f"trained {steps} steps; total {report.final_total:.6f} "
          f"(from {report.initial_total:.6f}); checkpoint at {ckpt_path}")
    return 0


def _cmd_gbl(args) -> int:
    img = load_image(args.image)
    a = gbl_mod.estimate_background_light(img)
    print(" ".join(f"{v * 255.0:.4f}" for v in a))
    if args.image_out:
        out_path = Path(args.out) / args.image_out
        swatch = np.broadcast_to(a, (64, 64, 3)).copy()
        save_image(swatch, out_path)
    return 0


def _cmd_histogram(args) -> int:
    images = (load_image(p) for p in args.inputs)
    table = metrics.cumulative_histogram(images)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "histogram.csv"
    csv_path.write_text("\n".join(metrics.histogram_csv_lines(table)) + "\n",
                        encoding="utf-8")
    print(f"histogram written to {csv_path}")
    return 0


def _cmd_selftest() -> int:
    results = selfcheck.run_all(verbose=True)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "enhance":
            return _cmd_enhance(args, dump_components=args.dump_components)
        if args.command == "decompose":
            return _cmd_enhance(args, dump_components=True)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "gbl":
            return _cmd_gbl(args)
        if args.command == "histogram":
            return _cmd_histogram(args)
        if args.command == "selftest":
            return _cmd_selftest()
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, ManifestError, ImageFormatError, CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
