"""Command-line entry point: ``eoslab {train,sweep,hessian,orbit,verify}``."""
from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .acceptance import SUITES, run_suite
from .lab import CONFIG_FIELDS, ExperimentConfig, ExperimentKind, run_experiment
from .model import ValidationError
from .orbit import find_orbit_roots

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 is reserved for acceptance failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fields_epilog() -> str:
    width = max(len(k) for k in CONFIG_FIELDS)
    lines = ["config fields (JSON):"]
    lines += [f"  {k.ljust(width)}  {v}" for k, v in CONFIG_FIELDS.items()]
    return "\n".join(lines)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--eta", type=float, help="learning rate (overrides config)")
    p.add_argument("--depth", type=int, help="number of layers (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help="output directory for CSV and manifest")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="eoslab", description=__doc__, epilog=_fields_epilog(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one network and print its trajectory",
                       epilog=_fields_epilog(), formatter_class=fmt)
    _common(p)
    p.add_argument("--dim", type=int, help="layer width")
    p.add_argument("--sigma", type=float, nargs="+", help="target singular values")
    p.add_argument("--iters", type=int, help="iteration budget")
    p.add_argument("--alpha", type=float, help="init scale")

    p = sub.add_parser("sweep", help="run any configured experiment",
                       epilog=_fields_epilog(), formatter_class=fmt)
    _common(p)

    p = sub.add_parser("hessian", help="compare analytic and finite-difference Hessian spectra",
                       epilog=_fields_epilog(), formatter_class=fmt)
    _common(p)
    p.add_argument("--dim", type=int, help="layer width")
    p.add_argument("--sigma", type=float, nargs="+", help="target singular values")
    p.add_argument("--alpha", type=float, help="init scale of the interior tail")

    p = sub.add_parser("orbit", help="two-period orbit roots of the balanced map",
                       epilog=_fields_epilog(), formatter_class=fmt)
    _common(p)
    p.add_argument("--sigma", type=float, help="target singular value")

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--suite", default="all", choices=sorted(SUITES))
    return parser


def _config_from_args(args, kind: ExperimentKind) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"config: cannot read {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: {args.config} is not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValidationError("config: expected a JSON object")
    else:
        data = {"kind": kind.value}
    if args.command != "sweep":
        if data.get("kind", kind.value) != kind.value:
            raise ValidationError(f"kind: {args.command} runs {kind.value}, config has {data['kind']!r}")
        data["kind"] = kind.value
    net = data.setdefault("network", {})
    tgt = data.setdefault("target", {})
    if getattr(args, "sigma", None) is not None:
        tgt["singular_values"] = args.sigma
        net["rank"] = len(args.sigma)
    if getattr(args, "dim", None) is not None:
        net["dim"] = args.dim
    if getattr(args, "alpha", None) is not None:
        net["init_scale"] = args.alpha
    if getattr(args, "iters", None) is not None:
        data["max_iters"] = args.iters
    if args.depth is not None:
        net["depth"] = args.depth
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    if args.eta is not None:
        data["eta"] = args.eta
    return ExperimentConfig.from_dict(data)


def _print_table(table, limit: int = 20):
    print(",".join(table.names))
    lines = table.to_csv().splitlines()[1:]
    shown = lines if len(lines) <= 2 * limit else lines[:limit] + ["..."] + lines[-limit:]
    for line in shown:
        print(line)


def _orbit(args) -> int:
    if args.config:
        cfg = _config_from_args(args, ExperimentKind.ORBIT_ROOTS)
        depth, sigma = cfg.network.depth, cfg.target.singular_values[0]
        etas = [args.eta] if args.eta is not None else list(cfg.grid())
    else:
        missing = [f for f in ("depth", "sigma", "eta") if getattr(args, f) is None]
        if missing:
            raise ValidationError(f"{missing[0]}: required without --config")
        depth, sigma, etas = args.depth, args.sigma, [args.eta]
    for eta in etas:
        roots = find_orbit_roots(depth, sigma, eta)
        if roots is None:
            print(f"eta={eta:.17g}: no two-period orbit (below the stability threshold)")
            continue
        print(f"eta={eta:.17g} rho_low={roots.low:.17g} rho_high={roots.high:.17g} "
              f"residual_low={roots.residual_low:.3e} residual_high={roots.residual_high:.3e}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "verify":
            results = run_suite(args.suite)
            failed = [r for r in results if not r.passed]
            print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
            return EXIT_FAILED if failed else EXIT_OK
        if args.command == "orbit":
            return _orbit(args)
        kind = {"train": ExperimentKind.TRAIN, "hessian": ExperimentKind.HESSIAN_VERIFY,
                "sweep": ExperimentKind.TRAIN}[args.command]
        if args.command == "sweep" and not args.config:
            raise ValidationError("config: sweep needs --config")
        cfg = _config_from_args(args, kind)
        table = run_experiment(cfg)
        _print_table(table)
        if cfg.out:
            print(f"wrote {cfg.out}/{table.name}.csv and manifest.json", file=sys.stderr)
        return EXIT_OK
    except (UsageError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
