"""Command-line front end: run, sweep, inspect."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace as dc_replace

from .errors import ConfigError
from .harness import load_config, run_experiment, sweep
from .params import FormatError, load_params


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a JSON config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
    run_p.add_argument("--out", default=None, help="override the output directory")

    sweep_p = sub.add_parser("sweep", help="grid of runs over config overrides")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--grid", required=True,
                         help="JSON file mapping dotted config paths to value lists")
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.add_argument("--out", default=None)

    inspect_p = sub.add_parser("inspect", help="describe a checkpoint file")
    inspect_p.add_argument("--checkpoint", required=True)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dc_replace(cfg, master_seed=args.seed)
    result = run_experiment(cfg, out_dir=args.out)
    last = result.records[-1] if result.records else None
    print(f"wrote {result.metrics_path}")
    if last is not None:
        bd = ",".join(f"{b:.4f}" for b in last.backdoor_acc)
        print(f"final round {last.round}: main_acc={last.main_acc:.4f}"
              + (f" backdoor_acc={bd}" if bd else ""))
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dc_replace(cfg, master_seed=args.seed)
    try:
        with open(args.grid) as fh:
            grid = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{args.grid} is not valid JSON: {err}") from err
    if not isinstance(grid, dict):
        raise ConfigError("grid file must be a JSON object")
    result = sweep(cfg, grid, out_dir=args.out)
    print(f"wrote {result.summary_path} ({len(result.cells)} cells)")
    return 0


def _cmd_inspect(args) -> int:
    params = load_params(args.checkpoint)
    print(f"{args.checkpoint}: {len(params)} coordinates, "
          f"l2 norm {params.norm():.6g}")
    for name, dims in params.layout:
        shape = "x".join(str(d) for d in dims) if dims else "scalar"
        print(f"  {name}: {shape}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "inspect": _cmd_inspect}
    try:
        return handlers[args.command](args)
    except (ConfigError, FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
