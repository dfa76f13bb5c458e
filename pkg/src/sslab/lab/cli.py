"""Command line: ``lab run | validate | calibrate-potential | accept``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import SSLabError
from .config import check_config, load_config
from .runner import build_setup, calibrate_potential, describe, run


def _load(args):
    cfg = load_config(args.config)
    if args.override_windows:
        cfg = replace(cfg, override_windows=True)
    if args.out:
        cfg = replace(cfg, out_dir=str(Path(args.out).resolve()))
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    rep = check_config(cfg)
    if not rep.ok:
        for v in rep.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return 2
    setup = build_setup(cfg)
    t0 = cfg.t0 if cfg.t0 != "auto" else None
    print(json.dumps(describe(cfg, setup, t0), indent=2, sort_keys=True, default=str))
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    rep = check_config(cfg)
    if not rep.ok:
        for v in rep.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return 2
    if args.dry_run:
        plan = {"config": cfg.to_dict(), "windows": rep.notes, "outputs": ["series.csv", "summary.json", "*.rssl"]}
        print(json.dumps(plan, indent=2, sort_keys=True, default=str))
        return 0
    result = run(cfg)
    for name, verdict in result.summary["criteria"].items():
        print(f"{'PASS' if verdict['passed'] else 'FAIL'} {name}")
    print(f"wrote {cfg.out_dir}")
    return result.exit_code


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    if args.dry_run:
        print(json.dumps({"calibrate": cfg.to_dict()}, indent=2, sort_keys=True, default=str))
        return 0
    out = calibrate_potential(cfg)
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "calibration.json").write_text(text + "\n")
    return 0


def cmd_accept(args) -> int:
    suite = Path(args.config)
    configs = sorted(suite.glob("*.toml"))
    if not configs:
        print(f"no *.toml configs in {suite}", file=sys.stderr)
        return 2
    code = 0
    for path in configs:
        cfg = load_config(path)
        if args.out:
            cfg = replace(cfg, out_dir=str(Path(args.out).resolve() / path.stem))
        if args.override_windows:
            cfg = replace(cfg, override_windows=True)
        if args.dry_run:
            print(f"would run {path.name} -> {cfg.out_dir}")
            continue
        result = run(cfg)
        for name, verdict in result.summary["criteria"].items():
            print(f"{'PASS' if verdict['passed'] else 'FAIL'} {path.stem}:{name}")
        code = max(code, result.exit_code)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="Self-similar channel experiments on radial grids")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, what in (
        ("run", cmd_run, "config"),
        ("validate", cmd_validate, "config"),
        ("calibrate-potential", cmd_calibrate, "config"),
        ("accept", cmd_accept, "suite directory of *.toml configs"),
    ):
        p = sub.add_parser(name)
        p.add_argument("config", help=what)
        p.add_argument("--dry-run", action="store_true", help="print the resolved plan and write nothing")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--override-windows", action="store_true", help="allow alpha/beta outside their windows")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SSLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
