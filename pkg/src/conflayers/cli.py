"""Command-line entry point.

Subcommands::

    conflayers run --config cfg.json [--seed N] [--out DIR]
    conflayers sweep --config cfg.json --lambdas 0.1,0.3,0.5
    conflayers freeze --config cfg.json --skip-set skip_set.json
    conflayers diagnose --config cfg.json
    conflayers gen-corpus --out prompts.jsonl --num-prompts 50 --prompt-len 16

Exit status is 0 on success, 2 for configuration problems and 1 for failures
during a run.  ``CONFLAYERS_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .backend import ToyModelConfig, ToyTransformer
from .errors import ConfigError, ConfLayersError
from .experiment import (
    ExperimentConfig,
    build_backend,
    generate_corpus,
    load_config,
    load_prompts,
    run_experiment,
    sweep,
    sweep_csv,
    write_diagnostics,
    write_run,
)

log = logging.getLogger("conflayers")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parse_lambdas(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda list {text!r}") from exc
    if len(values) < 2:
        raise argparse.ArgumentTypeError("give at least two lambda values")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conflayers", description="Confidence-guided layer skipping for self-speculative decoding.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="experiment JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="override the output directory")

    common(sub.add_parser("run", help="generate over a prompt corpus"))
    p = sub.add_parser("sweep", help="run the search once per lambda and write sweep.csv")
    common(p)
    p.add_argument("--lambdas", type=_parse_lambdas, required=True, help="comma separated, e.g. 0.1,0.3,0.5")
    p = sub.add_parser("freeze", help="generate with a fixed skip set")
    common(p)
    p.add_argument("--skip-set", type=Path, default=None, help="skip-set JSON (defaults to the config's)")
    common(sub.add_parser("diagnose", help="dump per-layer filter diagnostics and the set progression"))
    p = sub.add_parser("gen-corpus", help="sample a synthetic prompt corpus from the toy model")
    common(p, config_required=False)
    p.add_argument("--num-prompts", type=int, default=50)
    p.add_argument("--prompt-len", type=int, default=16)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run_experiment(cfg)
    write_run(result, cfg, cfg.out)
    print(json.dumps(result.metrics, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = sweep(cfg, args.lambdas)
    cfg.out.mkdir(parents=True, exist_ok=True)
    text = sweep_csv(rows)
    (cfg.out / "sweep.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_freeze(args) -> int:
    cfg = _config(args)
    skip_path = args.skip_set if args.skip_set is not None else cfg.skip_set
    if skip_path is None:
        raise ConfigError("freeze needs --skip-set or a skip_set entry in the config")
    cfg = replace(cfg, mode="frozen-set", skip_set=skip_path)
    result = run_experiment(cfg)
    write_run(result, cfg, cfg.out)
    print(json.dumps(result.metrics, sort_keys=True))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    if cfg.mode != "conflayers":
        log.info("diagnose always searches; ignoring mode %s", cfg.mode)
        cfg = replace(cfg, mode="conflayers")
    result = run_experiment(cfg)
    write_run(result, cfg, cfg.out)
    write_diagnostics(result, cfg.out)
    print(json.dumps(result.metrics, sort_keys=True))
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    if args.config is not None:
        cfg = _config(args)
        backend = build_backend(cfg)
        if not isinstance(backend, ToyTransformer):
            raise ConfigError("gen-corpus needs a toy backend")
        seed = cfg.seed
        target = args.out if args.out is not None else cfg.prompts
    else:
        seed = args.seed if args.seed is not None else 0
        backend = ToyTransformer(ToyModelConfig(seed=seed))
        target = args.out
    if target is None:
        raise ConfigError("gen-corpus needs --out (or a prompts path in the config)")
    corpus = generate_corpus(backend, args.num_prompts, args.prompt_len, seed)
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text("".join(json.dumps(p) + "\n" for p in corpus))
    # Read it back so a malformed corpus fails here rather than in a later run.
    load_prompts(target)
    print(f"wrote {len(corpus)} prompts to {target}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "freeze": cmd_freeze,
    "diagnose": cmd_diagnose,
    "gen-corpus": cmd_gen_corpus,
}


def _setup_logging():
    level_name = os.environ.get("CONFLAYERS_LOG", "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfLayersError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
