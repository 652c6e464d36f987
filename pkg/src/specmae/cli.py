"""Command-line entry point: ``specmae <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .analysis import (
    compare_strategies,
    corpus_q_norms,
    curriculum_trace,
    mask_overlay_export,
    mask_ratio_sweep,
    reconstruct,
    ssm_distribution,
    ComparisonReport,
)
from .checkpoint import CheckpointError, load_checkpoint
from .config import CliConfig, ConfigError, load_config
from .masking import DEFAULT_EPSILON, STRATEGIES, plan_masking
from .optim import NonFiniteGradientError
from .patchify import PatchShapeError, patchify_knowledge
from .raster_io import Band, Raster, RasterIOError, ResolutionError, load_raster, save_raster
from .spectral import DEFAULT_KINDS, BandMap, BandMapError, compute_knowledge_tensor
from .synthetic import SceneSpec, generate_corpus, load_corpus
from .trainer import NonFiniteLossError, pretrain

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("specmae")


class DataError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _read_json_arg(value: str):
    """Inline JSON, or a path to a JSON file."""
    text = value
    if not value.lstrip().startswith(("{", "[")):
        try:
            text = Path(value).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {value}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {value!r}: {exc}") from exc


def _band_map(args, cfg: CliConfig, raster: Raster) -> BandMap:
    spec = _read_json_arg(args.bands) if getattr(args, "bands", None) else cfg.band_map
    if not isinstance(spec, dict):
        raise ConfigError("band map must be a JSON object of role -> band name or channel")
    try:
        return BandMap.parse(spec, raster.bands)
    except BandMapError as exc:
        raise ConfigError(str(exc)) from exc


def knowledge_raster(raster: Raster, band_map: BandMap) -> Raster:
    kt = compute_knowledge_tensor(raster, DEFAULT_KINDS, band_map)
    res = raster.bands[band_map.roles.get("Red", 0)].resolution_m
    return Raster(kt.psi.astype(np.float32), tuple(Band(k.name, res) for k in kt.kinds))


def build_mask_plan(raster: Raster, band_map: BandMap, epoch: int, epochs: int, ratio: float,
                    seed: int, patch: int, epsilon: float = DEFAULT_EPSILON, image_id: int = 0,
                    strategy: str = "ssdtm", static_gamma: float = 0.25):
    kt = compute_knowledge_tensor(raster, DEFAULT_KINDS, band_map)
    return plan_masking(
        patchify_knowledge(kt, patch), epoch, epochs, ratio, epsilon, seed, image_id,
        strategy=strategy, static_gamma=static_gamma,
    )


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg: CliConfig) -> int:
    spec = cfg.scene
    if args.spec:
        data = _read_json_arg(args.spec)
        try:
            spec = SceneSpec.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scene spec: {exc}") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    path = generate_corpus(spec, args.n, args.out)
    print(f"wrote {args.n} scenes to {Path(args.out)} ({path.name})")
    return EXIT_OK


def cmd_indices(args, cfg: CliConfig) -> int:
    raster = load_raster(args.inp)
    out = knowledge_raster(raster, _band_map(args, cfg, raster))
    save_raster(out, args.out)
    print(f"wrote {','.join(out.band_names)} to {args.out}")
    return EXIT_OK


def cmd_mask_plan(args, cfg: CliConfig) -> int:
    raster = load_raster(args.inp)
    patch = args.patch or cfg.model.patch_size
    try:
        plan = build_mask_plan(
            raster, _band_map(args, cfg, raster), args.epoch, args.epochs, args.ratio,
            args.seed, patch, args.epsilon, args.image_id, args.strategy, cfg.train.static_gamma,
        )
    except PatchShapeError as exc:
        raise ConfigError(str(exc)) from exc
    text = plan.to_json()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.overlay:
        mask_overlay_export(raster, plan, args.overlay, cfg.analysis.sentinel)
    return EXIT_OK


def cmd_pretrain(args, cfg: CliConfig) -> int:
    train = cfg.train
    overrides = {}
    if args.strategy:
        overrides["strategy"] = args.strategy
    if args.dataset:
        overrides["dataset"] = args.dataset
    if args.epochs is not None:
        overrides["total_epochs"] = args.epochs
        overrides["warmup_epochs"] = min(train.warmup_epochs, args.epochs - 1)
    if args.seed is not None:
        overrides["seed"] = args.seed
    out = Path(args.out)
    overrides["checkpoint"] = str(out / "checkpoint")
    try:
        train = replace(train, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not train.dataset:
        raise ConfigError("no dataset path: set train.dataset in the config or pass --dataset")
    if not Path(train.dataset).exists():
        raise DataError(f"dataset path {train.dataset} does not exist")
    rasters = load_corpus(train.dataset)
    band_map = cfg.resolve_band_map(rasters[0].bands)
    out.mkdir(parents=True, exist_ok=True)
    result = pretrain(train, rasters, cfg.model, band_map=band_map)
    result.log.to_csv(out / "trainlog.csv")
    (out / "init_hash.txt").write_text(result.init_hash + "\n", encoding="utf-8")
    print(f"final loss {result.log.losses[-1]:.6g}; checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_reconstruct(args, cfg: CliConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    raster = load_raster(args.inp)
    model = ckpt.model
    if (raster.channels, raster.height, raster.width) != (model.channels, model.image_size, model.image_size):
        raise CheckpointError(
            f"raster {raster.channels}x{raster.height}x{raster.width} does not match checkpoint model "
            f"{model.channels}x{model.image_size}x{model.image_size}"
        )
    train = ckpt.train
    epochs = int(train.get("total_epochs", 1))
    epoch = args.epoch if args.epoch is not None else epochs
    seed = args.seed if args.seed is not None else ckpt.seed
    plan = build_mask_plan(
        raster, _band_map(args, cfg, raster), epoch, epochs, float(train.get("mask_ratio", 0.75)),
        seed, model.patch_size, float(train.get("epsilon", DEFAULT_EPSILON)), args.image_id,
        train.get("strategy", "ssdtm"), float(train.get("static_gamma", 0.25)),
    )
    loss, rec = reconstruct(ckpt.params, model, raster, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_raster(raster, out / "original.msr")
    mask_overlay_export(raster, plan, out / "masked.msr", cfg.analysis.sentinel)
    save_raster(rec, out / "reconstructed.msr")
    (out / "plan.json").write_text(plan.to_json(), encoding="utf-8")
    print(f"loss {loss!r}")
    return EXIT_OK


def cmd_analyze(args, cfg: CliConfig) -> int:
    if not Path(args.corpus).exists():
        raise DataError(f"corpus {args.corpus} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.analysis
    P = cfg.model.patch_size
    eps = cfg.train.epsilon
    if args.mode == "ssm":
        report = ssm_distribution(args.corpus, P, eps, a.bins)
        (out / "ssm.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
    elif args.mode == "curriculum":
        q = corpus_q_norms(args.corpus, P, eps)[: a.sample_size]
        draws = max(1, -(-a.draws // len(q)))
        points = curriculum_trace(q, a.curriculum_epochs, cfg.train.mask_ratio, range(draws))
        with open(out / "curriculum.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "gamma", "spearman_mean", "spearman_std", "top_decile_masked", "draws"])
            for p in points:
                w.writerow([p.epoch, repr(p.gamma), repr(p.spearman_mean), repr(p.spearman_std),
                            repr(p.top_decile_masked), p.draws])
        (out / "curriculum.json").write_text(
            json.dumps([asdict(p) for p in points], indent=1) + "\n", encoding="utf-8")
    elif args.mode == "compare":
        report = compare_strategies(cfg.train, a.strategies, args.corpus, cfg.model)
        report.write(out)
    else:
        rows = mask_ratio_sweep(cfg.train, a.ratios, args.corpus, cfg.model, out / "exports",
                                sentinel=a.sentinel)
        ComparisonReport(sweep=rows).write(out)
    print(f"wrote {args.mode} report to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specmae", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic corpus")
    g.add_argument("--spec", help="scene spec JSON (file or inline)")
    g.add_argument("--n", type=int, default=256)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("indices", help="NDVI/NDWI/NDBI planes of one raster")
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--bands", help="band map JSON: role -> band name or channel index")
    i.set_defaults(func=cmd_indices)

    m = sub.add_parser("mask-plan", help="mask plan JSON for one raster and epoch")
    m.add_argument("--in", dest="inp", required=True)
    m.add_argument("--epoch", type=int, required=True)
    m.add_argument("--epochs", type=int, required=True)
    m.add_argument("--ratio", type=float, default=0.75)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="output JSON path, or - for stdout")
    m.add_argument("--patch", type=int)
    m.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    m.add_argument("--image-id", type=int, default=0)
    m.add_argument("--strategy", choices=STRATEGIES, default="ssdtm")
    m.add_argument("--overlay", help="also write the masked overlay raster here")
    m.add_argument("--bands")
    m.set_defaults(func=cmd_mask_plan)

    t = sub.add_parser("pretrain", help="run masked-autoencoder pretraining")
    t.add_argument("--config", dest="sub_config")
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--out", required=True)
    t.add_argument("--dataset")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("reconstruct", help="original/masked/reconstructed rasters from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--epoch", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--image-id", type=int, default=0)
    r.add_argument("--bands")
    r.set_defaults(func=cmd_reconstruct)

    a = sub.add_parser("analyze", help="saliency / curriculum / ablation / mask-ratio studies")
    a.add_argument("--corpus", required=True)
    a.add_argument("--mode", choices=("ssm", "curriculum", "compare", "sweep"), required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", dest="sub_config")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "sub_config", None) or args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, NonFiniteGradientError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, RasterIOError, CheckpointError, ResolutionError, BandMapError,
            PatchShapeError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
