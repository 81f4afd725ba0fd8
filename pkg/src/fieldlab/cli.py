"""Command-line entry point.

    fieldlab run --config experiment.json [--strategy entropy|random]
                 [--seed N] [--out DIR]
    fieldlab replay RUN_DIR
    fieldlab eval RUN_DIR
    fieldlab render --checkpoint FILE --out DIR

Exit codes: 0 ok, 2 configuration error, 3 runtime abort.
FIELDLAB_NUMBA=0 selects the pure-numpy kernels; FIELDLAB_THREADS sets the
render thread pool (results are bit-identical either way).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import runner
from .runner import ConfigError, RunAbort


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fieldlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--strategy", choices=runner.STRATEGIES)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", default="run_out")

    p_replay = sub.add_parser("replay", help="re-execute a run and verify determinism")
    p_replay.add_argument("run_dir")
    p_replay.add_argument("--out")

    p_eval = sub.add_parser("eval", help="recompute metrics for a finished run")
    p_eval.add_argument("run_dir")

    p_render = sub.add_parser("render", help="render maps from a checkpoint")
    p_render.add_argument("--checkpoint", required=True)
    p_render.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = runner.ExperimentConfig.from_file(args.config)
            if args.strategy is not None:
                config.strategy = args.strategy
            if args.seed is not None:
                config.seed = args.seed
            report = runner.run_experiment(config, args.out)
            print(json.dumps(report, indent=2, sort_keys=True))
        elif args.command == "replay":
            report = runner.replay(args.run_dir, args.out)
            print(json.dumps({"replay_match": report["replay_match"],
                              "replay_mismatches": report["replay_mismatches"]},
                             indent=2))
            if not report["replay_match"]:
                return 3
        elif args.command == "eval":
            print(json.dumps(runner.eval_run(args.run_dir), indent=2, sort_keys=True))
        elif args.command == "render":
            runner.render_from_checkpoint(args.checkpoint, args.out)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RunAbort as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
