"""Command-line entry point.

Subcommands: gen-data (synthetic dataset to disk), train (checkpoint +
per-epoch log), match (match dump CSV for one pair), eval (per-pair
report CSV), grad-check (finite-difference verification of every
registered operation).

Exit codes: 0 success, 2 config/validation, 3 ingestion/format,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from . import autodiff as ad
from .autodiff import DimensionError, GraphError
from .categories import BASIC_CATEGORIES, EXPANDED_CATEGORIES
from .config import ConfigError, RunConfig, apply_overrides, load_config, require_valid
from .geometry import EstimationError, GeometryError
from .losses import ContractError
from .synth import IngestionError, SynthConfig, gen_dataset, load_pair_dir, read_pgm, write_dataset
from .text_library import FormatError, ValidationError, load_library, synth_embeddings
from .train import TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERICAL = 4

_CONFIG_ERRORS = (ConfigError, ValidationError, GeometryError)
_FORMAT_ERRORS = (FormatError, IngestionError)
_NUMERICAL_ERRORS = (TrainingError, GraphError, DimensionError, ContractError, EstimationError)


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _vocabulary(cfg: RunConfig):
    return BASIC_CATEGORIES if cfg.vocabulary == "basic" else EXPANDED_CATEGORIES


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    if args.size is not None:
        cfg.image_size = args.size
    if args.seed is not None:
        cfg.seed = args.seed
    require_valid(cfg)
    perturb = cfg.perturb()
    if args.no_perturb:
        from .geometry import PerturbConfig

        perturb = PerturbConfig(scale_min=1.0, scale_max=1.0, rot_deg=0.0, trans_frac=0.0)
    synth_cfg = SynthConfig(
        image_size=cfg.image_size,
        octaves=cfg.noise_octaves,
        speckle_looks=cfg.speckle_looks,
        gamma_min=cfg.gamma_min,
        gamma_max=cfg.gamma_max,
        perturb=perturb,
        seed=cfg.seed,
    )
    samples = gen_dataset(synth_cfg, args.count)
    ids = write_dataset(args.out, samples)
    print(f"wrote {len(ids)} pairs to {args.out}")
    return EXIT_OK


def _build_library(cfg: RunConfig, args):
    needs = cfg.text_stage != "none"
    if args.text and args.text_synth:
        raise ConfigError("--text and --text-synth are mutually exclusive")
    if not needs:
        return None
    if args.text:
        return load_library(args.text)
    if args.text_synth:
        return synth_embeddings(_vocabulary(cfg), d_text=cfg.d_text, seed=cfg.seed)
    raise ConfigError(
        f"text_stage={cfg.text_stage!r} needs a text library: pass --text FILE or --text-synth"
    )


def cmd_train(args) -> int:
    from .model import Matcher, save_checkpoint
    from .train import train_loop

    cfg = _load_run_config(args)
    require_valid(cfg)
    ad.set_default_dtype(cfg.precision)
    library = _build_library(cfg, args)
    samples = load_pair_dir(args.data)
    matcher = Matcher(cfg, library=library)
    log_path = args.log or (str(args.out) + ".log")
    train_loop(matcher, samples, cfg, log_path=log_path, progress=print if args.verbose else None)
    save_checkpoint(matcher, args.out)
    print(f"checkpoint written to {args.out}; log at {log_path}")
    return EXIT_OK


def cmd_match(args) -> int:
    from .matching import write_matches_csv
    from .model import load_checkpoint

    base = _load_run_config(args)
    matcher = load_checkpoint(args.ckpt, base_cfg=base)
    if getattr(args, "set", None):
        matcher.cfg = apply_overrides(matcher.cfg, args.set)
        matcher.match_cfg = matcher.cfg.matching()
    optical = read_pgm(args.opt)
    sar = read_pgm(args.sar)
    matches = matcher.match_pair(optical, sar)
    write_matches_csv(matches, args.out)
    print(f"{matches.fine_po.shape[0]} fine matches written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_pairs, write_report_csv
    from .model import load_checkpoint

    base = _load_run_config(args)
    matcher = load_checkpoint(args.ckpt, base_cfg=base)
    if getattr(args, "set", None):
        matcher.cfg = apply_overrides(matcher.cfg, args.set)
        matcher.match_cfg = matcher.cfg.matching()
    samples = load_pair_dir(args.data)
    report = evaluate_pairs(matcher, samples, matcher.cfg)
    write_report_csv(report, args.out)
    print(
        f"evaluated {len(samples)} pairs: rmse={report.mean_rmse:.4f} "
        + " ".join(f"cmr@{int(t)}={report.cmr_at[t]:.3f}" for t in sorted(report.cmr_at))
    )
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from . import gradcheck

    results = gradcheck.run(seed=args.seed, perturb_op=args.perturb_op)
    text, ok = gradcheck.report(results)
    print(text)
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic optical/SAR dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-perturb", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a matcher on a pair directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", default=None)
    p.add_argument("--text", default=None, help="TARTXT1 library file")
    p.add_argument("--text-synth", action="store_true", help="synthesize the library")
    p.add_argument("--log", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="match one optical/SAR pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--opt", required=True)
    p.add_argument("--sar", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb-op", default=None, help=argparse.SUPPRESS)  # negative-control hook
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _FORMAT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except _NUMERICAL_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
