"""Command-line interface: ``imhflow run | presets | replay | check``."""
from __future__ import annotations

import argparse
import json
import sys

import yaml

from .exceptions import ConfigError, TraceCorruptError
from .runner import list_presets, load_config, preset_config, replay_diagnostics, run_experiment
from .runner.config import deep_merge, from_dict, set_path
from .runner.engine import RunError


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out = set_path(out, key.strip(), yaml.safe_load(raw))
    return out


def resolve_config(args) -> dict:
    """defaults < preset < config file < --set < dedicated flags."""
    raw = load_config(args.config) if args.config else {}
    preset = args.preset or raw.get("preset")
    cfg = deep_merge(preset_config(preset), raw) if preset else raw
    cfg = deep_merge(cfg, _parse_set(args.set))
    for flag in ("seed", "steps", "out"):
        value = getattr(args, flag)
        if value is not None:
            cfg[flag] = value
    if args.walkers is not None:
        cfg = set_path(cfg, "walkers.count", args.walkers)
    return cfg


def cmd_run(args) -> int:
    cfg = from_dict(resolve_config(args))
    art = run_experiment(cfg)
    rep = art.report.to_dict()
    summary = {k: v for k, v in rep["extra"].items() if not isinstance(v, list)}
    if rep.get("mode_weights") is not None:
        summary["mode_weights"] = rep["mode_weights"]
    print(f"wrote {art.out_dir}")
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_presets(args) -> int:
    if args.show:
        print(yaml.safe_dump(preset_config(args.show), sort_keys=True, default_flow_style=False), end="")
        return 0
    names = list_presets()
    width = max(len(n) for n, _ in names)
    for name, desc in names:
        print(f"{name:<{width}}  {desc}")
    return 0


def cmd_replay(args) -> int:
    rep = replay_diagnostics(args.dir, n_proj=args.n_proj)
    text = rep.to_json()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_check(args) -> int:
    from .acceptance import CRITERIA, run_all

    numbers = sorted(CRITERIA)
    if args.only:
        numbers = [int(x) for x in args.only.split(",")]
        unknown = set(numbers) - set(CRITERIA)
        if unknown:
            raise ConfigError(f"unknown criteria {sorted(unknown)}; known: 1-{max(CRITERIA)}")
    results = run_all(numbers)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imhflow", description="Adaptive independent Metropolis-Hastings with flows.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a preset and/or config file")
    run.add_argument("--config", help="YAML configuration file")
    run.add_argument("--preset", help="preset name (see 'imhflow presets')")
    run.add_argument("--seed", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--walkers", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key, e.g. --set kernel.step_size=0.01")
    run.set_defaults(func=cmd_run)

    pre = sub.add_parser("presets", help="list presets")
    pre.add_argument("--show", metavar="NAME", help="print the configuration of one preset")
    pre.set_defaults(func=cmd_presets)

    rep = sub.add_parser("replay", help="recompute the report of a run directory from its traces")
    rep.add_argument("dir")
    rep.add_argument("--n-proj", type=int, help="number of random projections for the KS statistics")
    rep.add_argument("--output", help="write the report here instead of stdout")
    rep.set_defaults(func=cmd_replay)

    chk = sub.add_parser("check", help="run the acceptance suite")
    chk.add_argument("--only", help="comma-separated criterion numbers")
    chk.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceCorruptError, RunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
