"""Command line front end: w2bench generate | train | eval | scatter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import benchmark, harness, metrics, solvers
from .container import ContainerError


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise harness.ConfigError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _subparser_defaults(parser: argparse.ArgumentParser, command: str) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub = action.choices[command]
            return {a.dest: a.default for a in sub._actions if a.dest != "help"}
    return {}


def _apply_config_defaults(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Config file supplies values for flags left at their defaults."""
    if not getattr(args, "config", None):
        return
    file_vals = _read_config_file(args.config)
    defaults = _subparser_defaults(parser, args.command)
    for key, raw in file_vals.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest not in defaults:
            raise harness.ConfigError(f"unknown config key {key!r}")
        default = defaults[dest]
        if getattr(args, dest) != default:
            continue  # flags win
        if isinstance(default, bool):
            setattr(args, dest, raw.lower() in ("1", "true", "yes"))
        elif isinstance(default, int):
            setattr(args, dest, int(raw))
        elif isinstance(default, float):
            setattr(args, dest, float(raw))
        elif dest in ("dim", "seed", "solver", "pair", "artifact"):
            setattr(args, dest, raw.split(","))
        else:
            setattr(args, dest, raw)


def _scale(args) -> float:
    return 1.0 if args.paper_iters else args.iters_scale


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="w2bench")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; explicit flags win")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument(
        "--iters-scale",
        type=float,
        default=0.1,
        help="fraction of the standard iteration counts (desk default 0.1)",
    )
    common.add_argument(
        "--paper-iters",
        action="store_true",
        help="use the full standard iteration counts",
    )

    g = sub.add_parser("generate", parents=[common], help="build benchmark pairs")
    g.add_argument("--dim", action="append", default=None, help="dimension (repeatable)")
    g.add_argument("--seed", action="append", default=None, help="seed (repeatable)")
    g.add_argument("--threads", type=int, default=1)

    t = sub.add_parser("train", parents=[common], help="train solvers on pairs")
    t.add_argument("--pair", action="append", default=None, required=False)
    t.add_argument("--solver", action="append", default=None, required=False)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int, default=1)

    e = sub.add_parser("eval", parents=[common], help="score artifacts against pairs")
    e.add_argument("--pair", action="append", default=None)
    e.add_argument("--artifact", action="append", default=[])
    e.add_argument("--n-samples", type=int, default=2**14)
    e.add_argument("--eval-seed", type=int, default=metrics.DEFAULT_EVAL_SEED)

    s = sub.add_parser("scatter", parents=[common], help="2-component cloud files")
    s.add_argument("--pair", action="append", default=None)
    s.add_argument("--artifact", action="append", default=[])
    s.add_argument("--n", type=int, default=512)
    s.add_argument("--seed", type=int, default=777)

    return ap


def _require(value, name: str):
    if not value:
        raise harness.ConfigError(f"missing required option --{name}")
    return value


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_defaults(args, parser)
        if args.command == "generate":
            dims = [int(d) for d in _require(args.dim, "dim")]
            seeds = [int(s) for s in (args.seed or ["0"])]
            manifest, code = harness.cmd_generate(
                dims, seeds, args.out, iters_scale=_scale(args), threads=int(args.threads)
            )
            print(f"manifest: {manifest}")
            return code
        if args.command == "train":
            pairs = _require(args.pair, "pair")
            kinds = _require(args.solver, "solver")
            for pp in pairs:
                if not Path(pp).exists():
                    raise harness.HarnessIoError(f"pair file not found: {pp}")
            arts, code = harness.cmd_train(
                pairs,
                kinds,
                args.out,
                seed=int(args.seed),
                iters_scale=_scale(args),
                threads=int(args.threads),
            )
            for a in arts:
                print(f"artifact: {a}")
            return code
        if args.command == "eval":
            pairs = _require(args.pair, "pair")
            for pp in list(pairs) + list(args.artifact):
                if not Path(pp).exists():
                    raise harness.HarnessIoError(f"file not found: {pp}")
            csv_path, matrix_path = harness.cmd_eval(
                pairs,
                args.artifact,
                args.out,
                n_samples=int(args.n_samples),
                eval_seed=int(args.eval_seed),
            )
            print(matrix_path.read_text(encoding="utf-8"))
            print(f"report: {csv_path}")
            return harness.EXIT_OK
        if args.command == "scatter":
            pair_path = _require(args.pair, "pair")[0]
            if not Path(pair_path).exists():
                raise harness.HarnessIoError(f"pair file not found: {pair_path}")
            pair = benchmark.load_pair(pair_path)
            transport = None
            if args.artifact:
                out = harness.load_output(args.artifact[0])
                transport = solvers.extract_map(out)
            clouds = harness.pca_scatter(pair, transport, n=int(args.n), seed=int(args.seed))
            for path in harness.write_scatter(clouds, args.out):
                print(f"cloud: {path}")
            return harness.EXIT_OK
        raise harness.ConfigError(f"unknown command {args.command!r}")
    except harness.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except (harness.HarnessIoError, ContainerError, FileNotFoundError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return harness.EXIT_IO
    except SystemExit as e:
        # argparse errors surface as config errors, not exit(2)
        if e.code not in (0, None):
            return harness.EXIT_CONFIG
        return harness.EXIT_OK



if __name__ == "__main__":
    sys.exit(main())
