"""Command-line front end.

Verbs::

    epsense run <config.toml> [--output DIR] [--workers N]
    epsense preset <name> [--output DIR] [--workers N]
    epsense list-presets
    epsense validate <config.toml>

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 degraded run (some sweep points failed).  The configuration schema is
documented in :mod:`epsense.config`.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from importlib import resources
from pathlib import Path

from .config import ScenarioConfig, load_config, parse_config
from .errors import ConfigError, EpsenseError, IoError, NumericalError, ParameterError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DEGRADED = 4


def preset_names() -> list[str]:
    root = resources.files("epsense") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    path = resources.files("epsense") / "presets" / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def load_preset(name: str) -> ScenarioConfig:
    return parse_config(preset_text(name))


def _override(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if getattr(args, "output", None):
        changes["output_dir"] = Path(args.output)
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _execute(cfg: ScenarioConfig) -> int:
    from .runner import run

    manifest = run(cfg)
    print(f"{cfg.id}: {manifest.status}, {len(manifest.outputs)} files in {manifest.path.parent}")
    target = manifest.content["records"].get("coefficient_target")
    if target:
        print(f"  coefficient / target = {target['ratio']:.4g} (within factor 2: {target['within_factor_2']})")
    if manifest.status != "ok":
        for f in manifest.content["failures"]:
            print(f"  failed point {f['axis']}={f['value']:g}: {f['error']}", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="epsense", description="Exceptional-point sensing scenarios.")
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("config")
    p_pre = sub.add_parser("preset", help="run a bundled scenario")
    p_pre.add_argument("name")
    for p in (p_run, p_pre):
        p.add_argument("--output", "-o", help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes for sweeps (0 = all cores)")
    sub.add_parser("list-presets", help="list bundled scenarios")
    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    try:
        if args.verb == "list-presets":
            for name in preset_names():
                desc = load_preset(name).get("scenario", "description", "")
                print(f"{name}\t{desc}")
            return EXIT_OK
        if args.verb == "validate":
            cfg = load_config(args.config)
            from .runner import build_params

            _, _, warns = build_params(cfg)
            for w in warns:
                print(f"warning: {w}")
            print(f"{cfg.id}: ok ({', '.join(cfg.operations)})")
            return EXIT_OK
        cfg = load_config(args.config) if args.verb == "run" else load_preset(args.name)
        return _execute(_override(cfg, args))
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, IoError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EpsenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
