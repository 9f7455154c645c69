"""Command line: ``agile-hrl train | eval | sweep``.

Exit codes: 0 success, 1 configuration error, 2 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import parse_config
from .exceptions import ConfigError
from .harness import TrainingDiverged, evaluate, load_checkpoint, run_sweep, run_training

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agile-hrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("--config", help="JSON config file (defaults if omitted)")
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sweep", help="train over a grid of alpha_adv values and seeds")
    s.add_argument("--config")
    s.add_argument("--alphas", type=_csv_list(float), required=True)
    s.add_argument("--seeds", type=_csv_list(int), required=True)
    s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out", help="output directory (default: config out_dir)")
    s.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = parse_config(args.config, args.overrides)

            def progress(step, res):
                logging.getLogger("agile_hrl").info(
                    "step %d success %.2f return %.2f", step, res.success_rate, res.mean_return)

            out = run_training(cfg, progress=progress)
            print(json.dumps({"metrics": str(out.metrics), "traces": str(out.traces),
                              "checkpoint": None if out.checkpoint is None else str(out.checkpoint)}))
        elif args.command == "eval":
            if args.episodes < 1:
                raise ConfigError("episodes", "must be >= 1")
            learner = load_checkpoint(args.checkpoint)
            res = evaluate(learner.policy(), learner.spec, args.episodes, args.seed)
            print(json.dumps({"success_rate": res.success_rate, "mean_return": res.mean_return,
                              "mean_length": res.mean_length}))
        else:
            if not args.alphas or not args.seeds:
                raise ConfigError("sweep", "need at least one alpha and one seed")
            cfg = parse_config(args.config, args.overrides)
            print(run_sweep(cfg, args.alphas, args.seeds, args.out, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
