"""Command-line entry point for the fingerprinting pipeline.

Every experiment lives in an output directory holding config.json plus the
staged artifacts. Stage commands validate their upstream manifests and are
idempotent: re-running with an unchanged config is a cache hit. Flags
override the persisted config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .pipeline import ExperimentConfig, RunLock, StageError, resolve_config
from .synth import generate_csv, load_profiles, preset_profiles

logger = logging.getLogger("zest.cli")


def _add_outdir(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--outdir", required=True,
                        help="experiment directory (holds config.json)")
    parser.add_argument("--config", help="JSON config file to merge in")


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="partition seed (default: first config seed)")


def _add_source_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", help="synthetic preset name")
    parser.add_argument("--profiles", help="device profile JSON file")
    parser.add_argument("--csv", help="packet CSV path")
    parser.add_argument("--sessions", type=int,
                        help="sessions per device for synthetic sources")
    parser.add_argument("--synth-seed", type=int, default=None,
                        help="generator seed for synthetic sources")
    parser.add_argument("--n", type=int, default=None,
                        help="sequence length (packets per data point)")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seeds", type=int, default=None,
                        help="number of partition seeds (0..k-1)")
    parser.add_argument("--seed-list", type=int, nargs="+", default=None,
                        help="explicit partition seeds")
    parser.add_argument("--num-unseen", type=int, default=None)
    parser.add_argument("--sane", default=None,
                        help="JSON dict of feature-extractor overrides")
    parser.add_argument("--cvae", default=None,
                        help="JSON dict of generative-model overrides")
    parser.add_argument("--svm", default=None,
                        help="JSON dict of classifier overrides")
    parser.add_argument("--pseudo-k", type=int, default=None,
                        help="pseudo samples per class")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zest",
        description="Zero-shot IoT device fingerprinting pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic packet CSV")
    p.add_argument("--preset", help="preset name (e.g. separable-12)")
    p.add_argument("--profiles", help="device profile JSON file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sessions", type=int, default=None)
    p.add_argument("--packets-per-session", type=int, default=200)

    p = sub.add_parser("ingest", help="build the segmented dataset")
    _add_outdir(p)
    _add_source_flags(p)
    _add_config_flags(p)

    for name, text in (
            ("train-sane", "train the feature extractor on seen devices"),
            ("extract-attrs", "extract latents and attribute vectors"),
            ("train-cvae", "train the conditional VAE on seen latents"),
            ("gen-pseudo", "generate balanced pseudo latents"),
            ("train-clf", "train the final classifiers on pseudo data"),
            ("eval", "evaluate ZSL and GZSL accuracy on test latents")):
        p = sub.add_parser(name, help=text)
        _add_outdir(p)
        _add_seed(p)
        _add_config_flags(p)

    p = sub.add_parser("baseline", help="run one comparison pipeline")
    p.add_argument("name", choices=sorted(pl.BASELINE_NAMES))
    _add_outdir(p)
    _add_seed(p)

    p = sub.add_parser("pipeline", help="run every stage over all seeds")
    _add_outdir(p)
    _add_source_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="sweep one parameter over values")
    p.add_argument("param", choices=sorted(pl.SWEEP_PARAMS))
    p.add_argument("values", nargs="+")
    _add_outdir(p)
    _add_source_flags(p)
    _add_config_flags(p)

    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    source: dict = {}
    if getattr(args, "preset", None):
        source["preset"] = args.preset
    if getattr(args, "profiles", None):
        source["profiles"] = args.profiles
    if getattr(args, "csv", None):
        source["csv"] = args.csv
    if getattr(args, "sessions", None) is not None:
        source["sessions"] = args.sessions
    if getattr(args, "synth_seed", None) is not None:
        source["seed"] = args.synth_seed
    if source:
        overrides["source"] = source
    if getattr(args, "n", None) is not None:
        overrides["n"] = args.n
    if getattr(args, "num_unseen", None) is not None:
        overrides["num_unseen"] = args.num_unseen
    if getattr(args, "seed_list", None):
        overrides["seeds"] = args.seed_list
    elif getattr(args, "seeds", None) is not None:
        overrides["seeds"] = list(range(args.seeds))
    if getattr(args, "pseudo_k", None) is not None:
        overrides["pseudo_k"] = args.pseudo_k
    for section in ("sane", "cvae", "svm"):
        raw = getattr(args, section, None)
        if raw:
            overrides[section] = json.loads(raw)
    return overrides


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    overrides = _overrides_from_args(args)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        file_cfg.pop("outdir", None)
        merged = file_cfg
        for key, value in overrides.items():
            if key in ("sane", "cvae", "svm") and key in merged:
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        overrides = merged
    return resolve_config(args.outdir, overrides)


def _run_seed_stage(args: argparse.Namespace, fn) -> None:
    config = _resolve(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    with RunLock(config.outdir):
        fn(config, seed)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        if args.command == "synth":
            if bool(args.preset) == bool(args.profiles):
                raise StageError("synth",
                                 "give exactly one of --preset/--profiles")
            if args.profiles:
                profiles = load_profiles(args.profiles)
            else:
                profiles = preset_profiles(
                    args.preset, sessions=args.sessions,
                    packets_per_session=args.packets_per_session)
            generate_csv(profiles, seed=args.seed, path=args.out)
            print(f"wrote {args.out}")
        elif args.command == "ingest":
            config = _resolve(args)
            with RunLock(config.outdir):
                dataset = pl.stage_ingest(config)
            print(f"dataset: {len(dataset.points)} sequences, "
                  f"{len(dataset.class_map)} devices")
        elif args.command == "train-sane":
            _run_seed_stage(args, pl.stage_train_sane)
        elif args.command == "extract-attrs":
            _run_seed_stage(args, pl.stage_extract_attrs)
        elif args.command == "train-cvae":
            _run_seed_stage(args, pl.stage_train_cvae)
        elif args.command == "gen-pseudo":
            _run_seed_stage(args, pl.stage_gen_pseudo)
        elif args.command == "train-clf":
            _run_seed_stage(args, pl.stage_train_clf)
        elif args.command == "eval":
            config = _resolve(args)
            seed = args.seed if args.seed is not None else config.seeds[0]
            with RunLock(config.outdir):
                reports = pl.stage_eval(config, seed)
            for setting, report in reports.items():
                print(f"{setting}: accuracy {report.accuracy:.4f} "
                      f"(n={report.num_test})")
        elif args.command == "baseline":
            config = _resolve(args)
            seed = args.seed if args.seed is not None else config.seeds[0]
            with RunLock(config.outdir):
                reports = pl.stage_baseline(config, seed, args.name)
            for setting, report in reports.items():
                print(f"{args.name} {setting}: accuracy "
                      f"{report.accuracy:.4f} (n={report.num_test})")
        elif args.command == "pipeline":
            config = _resolve(args)
            with RunLock(config.outdir):
                rows = pl.run_pipeline(config)
            print((Path(config.outdir) / "report.txt").read_text(), end="")
        elif args.command == "sweep":
            config = _resolve(args)
            with RunLock(config.outdir):
                rows = pl.run_sweep(config, args.param, args.values)
            print(f"sweep written to "
                  f"{Path(config.outdir) / f'sweep-{args.param}' / 'sweep.csv'}")
        else:  # pragma: no cover
            raise StageError("cli", f"unhandled command {args.command}")
    except StageError as exc:
        print(f"[{exc.stage}] error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        stage = getattr(args, "command", "cli")
        print(f"[{stage}] error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
