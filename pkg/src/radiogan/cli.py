"""Command-line entry point.

Subcommands: make-synthetic, prepare-data, train, synthesize, embed-genes,
evaluate. Flag values override config-file values, which override defaults.
Every run writes ``resolved_config.json`` into its output directory so the
run can be reproduced from that snapshot alone. The RADIOGAN_OUT environment
variable provides the default output root when --out is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from radiogan import __version__

log = logging.getLogger("radiogan")


def build_parser():
    parser = argparse.ArgumentParser(prog="radiogan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"radiogan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (default: $RADIOGAN_OUT/<command>)")
        p.add_argument("--seed", type=int, help="seed override, wins over config file")
        p.add_argument("--config", help="JSON config file for this command")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("make-synthetic", help="generate the planted-factor oracle corpus")
    common(p)
    p.add_argument("--subjects", type=int, help="number of synthetic subjects")
    p.add_argument("--image-size", type=int, help="square patch side in pixels")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("prepare-data", help="build a corpus from volumes, masks, and genes")
    common(p)
    p.add_argument("image_root", help="directory of per-subject volume/mask folders")
    p.add_argument("gene_csv", help="gene expression table (CSV)")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train the GAN on a corpus")
    common(p)
    p.add_argument("corpus", help="corpus directory (with manifest.json)")
    p.add_argument("--steps", type=int, help="training steps override")
    p.add_argument("--lambda", dest="lam", type=float, help="background L1 weight override")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="synthesize one nodule image from a checkpoint")
    common(p)
    p.add_argument("corpus", help="corpus directory providing the gene table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--background", required=True,
                   help="background .npy path, or an index into the corpus backgrounds")
    p.add_argument("--gene-row", type=int, required=True, help="row index into the gene table")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("embed-genes", help="write the learned per-subject gene codes")
    common(p)
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_embed_genes)

    p = sub.add_parser("evaluate", help="clustering, factor recovery, and synthesis metrics")
    common(p)
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def resolve_out(args):
    if args.out:
        return Path(args.out)
    root = os.environ.get("RADIOGAN_OUT")
    if root:
        return Path(root) / args.command
    raise ValueError("no output directory: pass --out or set RADIOGAN_OUT")


def load_config_doc(args):
    if not args.config:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_snapshot(out_dir, command, resolved):
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, "resolved": resolved}
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _dataclass_from(doc, cls, overrides):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    config = cls(**doc)
    applied = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **applied)


def cmd_make_synthetic(args):
    from radiogan.data.synthetic import SyntheticCorpusConfig, generate_synthetic_corpus

    out_dir = resolve_out(args)
    config = _dataclass_from(
        load_config_doc(args), SyntheticCorpusConfig,
        {"n_subjects": args.subjects, "image_size": args.image_size, "seed": args.seed},
    ).validate()
    write_snapshot(out_dir, args.command, asdict(config))
    manifest = generate_synthetic_corpus(config, out_dir)
    log.info("wrote %d samples, %d backgrounds to %s",
             len(manifest.samples), len(manifest.backgrounds), out_dir)
    return 0


def cmd_prepare_data(args):
    from radiogan.data.build import ProtocolConfig, build_dataset
    from radiogan.genomics import clean_genes, fit_normalizer, load_gene_table, normalize_table

    out_dir = resolve_out(args)
    doc = load_config_doc(args)
    scheme = doc.pop("normalization", "log1p-zscore")
    config = _dataclass_from(doc, ProtocolConfig, {"seed": args.seed})
    write_snapshot(out_dir, args.command, {
        "image_root": str(Path(args.image_root).resolve()),
        "gene_csv": str(Path(args.gene_csv).resolve()),
        "normalization": scheme,
        **asdict(config),
    })
    table = clean_genes(load_gene_table(args.gene_csv))
    table = normalize_table(fit_normalizer(table, scheme), table)
    manifest, report = build_dataset(args.image_root, table, config, out_dir)
    log.info("used %d/%d subjects, %d samples, %d backgrounds",
             report.subjects_used, report.subjects_found,
             report.n_samples, report.n_backgrounds)
    return 0


def cmd_train(args):
    from radiogan.data.manifest import CorpusData, DatasetManifest
    from radiogan.training import TrainingConfig, fit

    out_dir = resolve_out(args)
    corpus_dir = Path(args.corpus)
    if not (corpus_dir / "manifest.json").exists():
        raise FileNotFoundError(f"no corpus manifest under {corpus_dir}")
    config = _dataclass_from(
        load_config_doc(args), TrainingConfig,
        {"seed": args.seed, "steps": args.steps, "lam": args.lam},
    ).validate()
    write_snapshot(out_dir, args.command, {
        "corpus": str(corpus_dir.resolve()),
        "resume": args.resume and str(Path(args.resume).resolve()),
        **asdict(config),
    })
    data = CorpusData(DatasetManifest.load(corpus_dir))
    state, metrics_path = fit(data, config, out_dir, resume_from=args.resume)
    log.info("finished at step %d, metrics in %s", state.step, metrics_path)
    return 0


def _load_models_for(args, manifest):
    from radiogan.checkpoint import load_checkpoint, require_compatible, restore_models

    ckpt = load_checkpoint(args.checkpoint)
    require_compatible(ckpt, gene_dim=manifest.gene_dim, image_size=manifest.image_size)
    generator, _ = restore_models(ckpt)
    return generator


def cmd_synthesize(args):
    from radiogan.data.manifest import DatasetManifest
    from radiogan.evaluation import render_grid, synthesize_patches, to_uint8
    from PIL import Image

    out_dir = resolve_out(args)
    manifest = DatasetManifest.load(args.corpus)
    generator = _load_models_for(args, manifest)
    table = manifest.load_gene_table()
    if not (0 <= args.gene_row < table.n_subjects):
        raise ValueError(f"gene row {args.gene_row} out of range [0, {table.n_subjects})")

    try:
        bg_index = int(args.background)
    except ValueError:
        bg_path = Path(args.background)
        if not bg_path.exists():
            raise FileNotFoundError(f"background file not found: {bg_path}") from None
        background = np.load(bg_path)
    else:
        if not (0 <= bg_index < len(manifest.backgrounds)):
            raise ValueError(
                f"background index {bg_index} out of range [0, {len(manifest.backgrounds)})"
            )
        background = manifest.load_background(bg_index)

    seed = args.seed if args.seed is not None else 0
    write_snapshot(out_dir, args.command, {
        "corpus": str(Path(args.corpus).resolve()),
        "checkpoint": str(Path(args.checkpoint).resolve()),
        "background": str(args.background),
        "gene_row": args.gene_row,
        "seed": seed,
    })
    result = synthesize_patches(
        generator, background[None], table.values[args.gene_row : args.gene_row + 1], seed=seed
    )
    for name, array in (
        ("image", result["image"][0]),
        ("mask", result["mask"][0].astype(np.float64) * 2 - 1),
        ("weight_map", result["weight_map"][0] * 2 - 1),
    ):
        Image.fromarray(to_uint8(array), mode="L").save(out_dir / f"{name}.png")
        np.save(out_dir / f"{name}.npy", array if name == "image" else result[name][0])
    render_grid(
        [[background, result["image"][0], result["weight_map"][0] * 2 - 1,
          result["mask"][0].astype(np.float64) * 2 - 1]],
        out_dir / "panel.png",
    )
    log.info("wrote image/mask/weight_map rasters to %s", out_dir)
    return 0


def cmd_embed_genes(args):
    from radiogan.data.manifest import DatasetManifest
    from radiogan.evaluation import embed_genes

    out_dir = resolve_out(args)
    manifest = DatasetManifest.load(args.corpus)
    generator = _load_models_for(args, manifest)
    write_snapshot(out_dir, args.command, {
        "corpus": str(Path(args.corpus).resolve()),
        "checkpoint": str(Path(args.checkpoint).resolve()),
    })
    codes = embed_genes(generator, manifest)
    with (out_dir / "codes.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id"] + [f"code_{i:03d}" for i in range(codes.codes.shape[1])])
        for sid, row in zip(codes.subject_ids, codes.codes):
            writer.writerow([sid] + [repr(float(v)) for v in row])
    log.info("wrote %d codes of width %d", codes.codes.shape[0], codes.codes.shape[1])
    return 0


def cmd_evaluate(args):
    from radiogan.data.manifest import DatasetManifest
    from radiogan.evaluation import evaluate_checkpoint

    out_dir = resolve_out(args)
    manifest = DatasetManifest.load(args.corpus)
    seed = args.seed if args.seed is not None else 0
    write_snapshot(out_dir, args.command, {
        "corpus": str(Path(args.corpus).resolve()),
        "checkpoint": str(Path(args.checkpoint).resolve()),
        "seed": seed,
    })
    report = evaluate_checkpoint(args.checkpoint, manifest, out_dir, seed=seed)
    log.info("evaluation report written to %s", out_dir / "evaluation_report.json")
    print(json.dumps(asdict(report), indent=2))
    return 0


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
