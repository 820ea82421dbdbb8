"""Command-line entry point: ``gazeil <subcommand> [flags]``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import List, Optional

from . import expconfig, experiments
from .errors import ConfigurationError, ShardError

log = logging.getLogger("gazeil")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int, help="master seed (non-negative)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazeil", description="Gaze-modulated imitation learning on a synthetic driving world.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="simulate expert drives and write dataset shards")
    _common(p)
    p = sub.add_parser("train-gaze", help="train the gaze predictor")
    _common(p)
    p = sub.add_parser("eval-gaze", help="KL and CC of estimated gaze and the central blob")
    _common(p)
    p = sub.add_parser("train-driver", help="train driver networks (all six methods unless --mode is given)")
    _common(p)
    p.add_argument("--mode", choices=expconfig.INTEGRATION_MODES)
    p.add_argument("--gaze", choices=expconfig.GAZE_SOURCES)
    p = sub.add_parser("eval-offline", help="mean absolute steering error for the six methods")
    _common(p)
    p.add_argument("--expert-check", action="store_true",
                   help="also replay the recorded episodes and score the expert against its own labels")
    p = sub.add_parser("eval-closedloop", help="closed-loop driving on unseen tracks")
    _common(p)
    p.add_argument("--mode", choices=expconfig.INTEGRATION_MODES)
    p.add_argument("--gaze", choices=expconfig.GAZE_SOURCES)
    p.add_argument("--episodes", type=int)
    p.add_argument("--cars", choices=("on", "off"))
    p = sub.add_parser("render", help="write PGM frames, gaze heatmaps and overlays")
    _common(p)
    p.add_argument("--episodes", type=int, help="number of frames to render (one per simulated second)")
    return parser


def resolve_config(args) -> expconfig.ExperimentConfig:
    cfg = expconfig.load(args.config) if args.config else expconfig.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "mode", None):
        cfg.integration_mode = args.mode
    if getattr(args, "gaze", None):
        cfg.gaze_source = args.gaze
    if getattr(args, "episodes", None) is not None and args.command == "eval-closedloop":
        cfg.closedloop.episodes = args.episodes
    if getattr(args, "cars", None):
        cfg.closedloop.cars = args.cars
    return expconfig.validate(cfg)


def emit(cfg, name, header, rows):
    csv_text, text = experiments.write_table(cfg, name, header, rows)
    sys.stdout.write(csv_text)
    sys.stdout.write("\n" + text + "\n")


def _selected_method(cfg):
    if cfg.integration_mode == "all":
        return None
    return experiments.method_for(cfg.integration_mode, cfg.gaze_source)


def run(args) -> None:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "gen-data":
        manifest = experiments.gen_data(cfg)
        counts = {}
        for e in manifest["shards"]:
            n, r = counts.get(e["split"], (0, 0))
            counts[e["split"]] = (n + 1, r + e["records"])
        emit(cfg, "dataset", ["split", "shards", "records"], [(k, *v) for k, v in sorted(counts.items())])
    elif cmd == "train-gaze":
        model = experiments.train_gaze(cfg)
        emit(cfg, "gaze_training", ["epoch", "loss"], list(enumerate(model.training_history)))
    elif cmd == "eval-gaze":
        emit(cfg, "gaze_eval", ["method", "split", "kl", "cc"], experiments.eval_gaze(cfg))
    elif cmd == "train-driver":
        method = _selected_method(cfg)
        methods = experiments.METHODS if method is None else (method,)
        paths = experiments.train_drivers(cfg, methods)
        emit(cfg, "drivers", ["checkpoint"], [(str(p),) for p in paths])
    elif cmd == "eval-offline":
        rows = experiments.eval_offline(cfg)
        emit(cfg, "offline", ["method", "seen_deg", "unseen_deg", "seen_std", "unseen_std", "seeds"], rows)
        if args.expert_check:
            err = experiments.expert_offline_error(cfg, "unseen")
            emit(cfg, "expert_check", ["predictor", "split", "mae_deg"], [("expert", "unseen", err)])
    elif cmd == "eval-closedloop":
        method = _selected_method(cfg)
        methods = experiments.CLOSED_LOOP_METHODS if method is None else ((method.label, method.key),)
        rows = experiments.eval_closedloop(cfg, methods)
        emit(cfg, "closedloop", ["method", "setting", "overtake_success", "km_between_infractions", "infractions",
                                 "km", "episodes"], rows)
    elif cmd == "render":
        paths = experiments.render_artifacts(cfg, n_frames=args.episodes or 4)
        emit(cfg, "render", ["file"], [(str(p),) for p in paths])


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    start = time.time()
    try:
        run(args)
    except (ConfigurationError, ShardError, ValueError, OSError, KeyError) as exc:
        print(f"gazeil {args.command}: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.1fs", args.command, time.time() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
