"""Command line: ``subdef <kind> --config run.json [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .data import ParseError
from .experiments import KINDS, run_experiment
from .io import json_text
from .matcore import ValidationError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subdef", description="Subspace-projection defense experiments.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="override output_dir from the config")
        p.add_argument("--seed", type=int, default=None, help="override the base seed from the config")
    p = sub.add_parser("validate-config", help="parse a config and print it with defaults filled in")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p = sub.add_parser("show-report", help="print the summary of a report.json")
    p.add_argument("report", type=Path, help="report.json or the run directory holding it")
    return ap


def _show_report(path: Path) -> str:
    if path.is_dir():
        path = path / "report.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    lines = [f"kind: {doc.get('kind')}", f"seeds: {doc.get('seeds')}", f"files: {', '.join(doc.get('files', []))}"]
    res = doc.get("results", {})
    if "summary" in res:
        lines += [f"{k}: {v}" for k, v in res["summary"].items()]
    for row in res.get("rows", []):
        lines.append("  " + "  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                      for k, v in row.items() if k != "per_seed"))
    for name, c in res.get("curves", {}).items():
        lines.append(f"  {name}: final robust {c['final_robust_acc']:.4f}, "
                     f"90% at epoch {c['epochs_to_90pct_robust']}")
    if "rank_for_energy" in res:
        lines.append(f"rank_for_energy: {res['rank_for_energy']}")
        lines.append(f"overlap mean sq cosine: {res['overlap_mean_sq_cosine']:.6f}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "show-report":
            print(_show_report(args.report))
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.command == "validate-config":
            sys.stdout.write(json_text(cfg.to_dict()))
            return 0
        out = run_experiment(args.command, cfg, args.out)
        print(out.directory)
        return 0
    except (ConfigError, ParseError, CheckpointError, ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"subdef: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
