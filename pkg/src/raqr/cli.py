"""Command line: run named experiments, validate configs, list recipes.

Exit codes: 0 success, 1 recipe execution failure, 2 bad input
(unparseable or invalid config, bad thread count).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .config import (
    ParseError,
    ValidationError,
    default_config_path,
    fingerprint,
    load_config,
)
from .recipes import RecipeError, list_recipes, run_recipe


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raqr",
        description="Link-level simulation and design toolkit for "
                    "superheterodyne atomic receivers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a recipe and write its artifacts")
    run.add_argument("recipe", help="recipe name; see `raqr list-recipes`")
    run.add_argument("--config", default=None,
                     help="YAML config; defaults to the packaged config "
                          "for the recipe")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--out", default=None,
                     help="override the config output directory")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads; falls back to RAQR_THREADS, then 1")

    validate = sub.add_parser("validate", help="check a config and print its "
                                               "fingerprint")
    validate.add_argument("--config", required=True)

    sub.add_parser("list-recipes", help="print the recipe registry")
    return parser


def _resolve_threads(flag: int | None) -> int:
    if flag is not None:
        threads = flag
    else:
        env = os.environ.get("RAQR_THREADS", "")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValidationError("RAQR_THREADS",
                                      f"not an integer: {env!r}")
        else:
            threads = 1
    if threads < 1:
        raise ValidationError("threads", "must be >= 1")
    return threads


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "list-recipes":
        for name in list_recipes():
            print(name)
        return 0

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except (ParseError, ValidationError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"ok fingerprint={fingerprint(cfg)}")
        return 0

    try:
        threads = _resolve_threads(args.threads)
        path = args.config or default_config_path(args.recipe)
        cfg = load_config(path, recipe=args.recipe, seed=args.seed)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    try:
        paths = run_recipe(cfg, threads=threads)
    except RecipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"fingerprint={fingerprint(cfg)}")
    for kind in sorted(paths):
        print(f"{kind}: {paths[kind]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
