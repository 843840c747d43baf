"""Command line entry point.

    zdshield run <config.json> [--out DIR] [--seed N] [--dt S]
    zdshield preset <name> [--out DIR] [--seed N] [--dt S]
    zdshield sweep <config.json> --param PATH --values V1,V2,... [--out DIR]
    zdshield list-presets

Exit codes: 0 success, 2 configuration error, 3 simulation fault.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ScenarioConfig, load_preset, preset_names, preset_text
from .errors import ConfigError, DomainError, NoConvergence, NonFiniteState
from .harness import emit_outputs, run_scenario, sweep, sweep_csv

EXIT_OK, EXIT_CONFIG, EXIT_FAULT = 0, 2, 3


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    data = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        data["noise"]["seed"] = args.seed
    if getattr(args, "dt", None) is not None:
        data["grid"]["dt"] = args.dt
    return ScenarioConfig.from_dict(data)


def _parse_values(text: str) -> list:
    if not text.strip():
        return []
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    return out


def _summary(metrics: dict) -> str:
    keys = ("scenario", "detection_time", "gamma", "threshold", "false_alarm_before_onset")
    return " ".join(f"{k}={metrics[k]}" for k in keys)


def _run(cfg: ScenarioConfig, out: str) -> int:
    result = run_scenario(cfg)
    emit_outputs(result, out)
    print(_summary(result.metrics))
    print(f"outputs written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zdshield", description="Zero-dynamics attack detection and recovery benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="noise seed override")
        p.add_argument("--dt", type=float, default=None, help="integration step override [s]")

    p = sub.add_parser("run", help="run a scenario from a JSON config file")
    p.add_argument("config")
    common(p)
    p = sub.add_parser("preset", help="run a built-in scenario")
    p.add_argument("name")
    common(p)
    p = sub.add_parser("sweep", help="run a scenario for several values of one config field")
    p.add_argument("config", help="JSON config file or preset name")
    p.add_argument("--param", required=True, help="dotted config path, e.g. recovery.lam")
    p.add_argument("--values", required=True, help="comma separated values")
    common(p)
    p = sub.add_parser("list-presets", help="list built-in scenarios")
    p.add_argument("--show", action="store_true", help="print the preset files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-presets":
            for name in preset_names():
                print(name)
                if args.show:
                    print(preset_text(name))
            return EXIT_OK
        if args.command == "run":
            return _run(_apply_overrides(ScenarioConfig.load(args.config), args), args.out)
        if args.command == "preset":
            return _run(_apply_overrides(load_preset(args.name), args), args.out)
        if args.command == "sweep":
            base = load_preset(args.config) if args.config in preset_names() else ScenarioConfig.load(args.config)
            rows = sweep(_apply_overrides(base, args), args.param, _parse_values(args.values))
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, "sweep.csv")
            sys.stdout.write(sweep_csv(rows, path))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteState, DomainError, NoConvergence) as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
