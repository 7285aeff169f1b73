"""Command line front end.

    entrofield run --config run.toml [--seed N] [--out path] [--format csv|json]
                   [--set section.key=value ...] [--dt ...] [--T ...]
    entrofield scenarios

Exit codes: 0 all tolerances met, 1 tolerance failure, 2 config error,
3 numeric failure.  Partial results are still written on codes 1 and 3.
"""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, apply_overrides, load_toml, normalize, parse_value
from .report import to_csv, to_json

# named flags -> config key paths
SHORTCUTS = {
    "dt": "numerics.dt", "T": "numerics.T", "points": "numerics.points", "L": "numerics.L",
    "n": "numerics.n", "steps": "numerics.steps", "m": "physics.m", "lambda3": "physics.lambda3",
    "lambda4": "physics.lambda4", "eta": "physics.eta", "xi": "physics.xi",
    "drift": "numerics.drift",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entrofield", description="Entropic field dynamics scenarios")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario from a TOML config")
    r.add_argument("--config", required=True, help="path to the TOML config")
    r.add_argument("--scenario", help="override the config's scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output path (default: stdout)")
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key; value is read as a TOML literal")
    for name, path in SHORTCUTS.items():
        r.add_argument(f"--{name}", dest=f"flag_{name}", metavar="VALUE", help=f"shortcut for --set {path}=VALUE")
    sub.add_parser("scenarios", help="list scenarios and the keys they need")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_value(value.strip())
    for name, path in SHORTCUTS.items():
        value = getattr(args, f"flag_{name}")
        if value is not None:
            out[path] = parse_value(value)
    if args.scenario is not None:
        out["scenario"] = args.scenario
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["output.path"] = args.out
    if args.format is not None:
        out["output.format"] = args.format
    return out


def _load(args) -> dict:
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    raw = load_toml(text)
    return normalize(apply_overrides(raw, _overrides(args)))


def _emit(report, cfg):
    text = to_json(report) if cfg["output"]["format"] == "json" else to_csv(report)
    path = cfg["output"]["path"]
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    from .scenarios import ScenarioRefused, describe, run

    args = build_parser().parse_args(argv)
    if args.command == "scenarios":
        print(describe())
        return 0
    try:
        cfg = _load(args)
        report = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ScenarioRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    _emit(report, cfg)
    for m in report.metrics:
        if not m.passed:
            print(f"FAIL {m.name} = {m.value} (bound {m.bound}) {m.error}".rstrip(), file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
