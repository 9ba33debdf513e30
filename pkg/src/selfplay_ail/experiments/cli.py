"""Command line: ``selfplay-ail run|compare|verify``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime or numeric
failure, 3 at least one verified claim failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
import warnings
from pathlib import Path

from .. import __version__
from ..errors import ConfigValidationError, SelfPlayError
from .claims import run_claims
from .compare import compare_dynamics
from .config import load_config, parse_config
from .runner import run

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_CLAIM_FAILED = 3

# criterion 13: a small multi-method config run twice must produce identical bytes
DETERMINISM_CONFIGS = (
    {"kind": "spif", "seeds": [0, 1], "method": {"iterations": 5, "sampling": "monte_carlo", "n_samples": 200}},
    {"kind": "spin", "seeds": [0, 1], "method": {"iterations": 5}},
    {"kind": "game", "seeds": [0, 1], "method": {"iterations": 20}},
)


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfplay-ail", description="Tabular self-play imitation experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a TOML experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seeds", type=_int_list, help="comma separated seeds (overrides the config)")
    r.add_argument("--threads", type=int, help="concurrent runs (overrides the config)")

    c = sub.add_parser("compare", help="compare two run CSVs (a = SPIF, b = SPIN)")
    c.add_argument("artifact_a")
    c.add_argument("artifact_b")

    v = sub.add_parser("verify", help="check every numbered claim and the artifact determinism")
    v.add_argument("--claims", type=_int_list, help="subset of claim numbers (default: all)")
    v.add_argument("--out", help="keep the determinism artifacts here instead of a temporary directory")
    v.add_argument("--threads", type=int, default=2, help="threads for the determinism runs")
    return ap


def cmd_run(args) -> int:
    cfg = load_config(args.config, seeds=args.seeds, out=args.out, threads=args.threads)
    summary = run(cfg)
    out = Path(cfg.out or "runs")
    print(f"wrote {len(summary['runs'])} run(s) to {out}")
    for key in ("rate_exponents", "c_ablation", "regularizer_ablation"):
        if key in summary:
            print(f"{key}: {json.dumps(summary[key], sort_keys=True)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    res = compare_dynamics(args.artifact_a, args.artifact_b)
    print(json.dumps(res.as_dict(), indent=2))
    return EXIT_OK


def determinism_check(base: Path, threads: int = 2) -> tuple[bool, str]:
    """Run each determinism config twice (serial, then threaded) and compare every CSV byte for byte."""
    n_files, mismatched = 0, []
    for i, data in enumerate(DETERMINISM_CONFIGS):
        dirs = []
        for rep, n_threads in enumerate((1, threads)):
            d = base / f"det{i}_{rep}"
            run(parse_config(data, threads=n_threads), d)
            dirs.append(d)
        for f in sorted(dirs[0].glob("*.csv")):
            n_files += 1
            other = dirs[1] / f.name
            if not other.exists() or other.read_bytes() != f.read_bytes():
                mismatched.append(f.name)
    ok = n_files > 0 and not mismatched
    detail = f"{n_files} CSV files compared, {len(mismatched)} differ"
    if mismatched:
        detail += f" ({', '.join(mismatched[:5])})"
    return ok, detail


def cmd_verify(args) -> int:
    wanted = sorted(set(args.claims)) if args.claims else list(range(1, 14))
    unknown = [n for n in wanted if not 1 <= n <= 13]
    if unknown:
        raise ConfigValidationError([f"unknown claim number {n}; claims are 1..13" for n in unknown])
    numbered = [n for n in wanted if n != 13]
    results = run_claims(numbered, echo=print) if numbered else []
    if 13 in wanted:
        if args.out:
            base = Path(args.out)
            base.mkdir(parents=True, exist_ok=True)
            ok, detail = determinism_check(base, args.threads)
        else:
            with tempfile.TemporaryDirectory() as tmp:
                ok, detail = determinism_check(Path(tmp), args.threads)
        print(f"[{'PASS' if ok else 'FAIL'}] 13. identical seeds give byte-identical CSV artifacts: {detail}")
        results_ok = all(r.passed for r in results) and ok
    else:
        results_ok = all(r.passed for r in results)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} numbered claims passed" + ("" if results_ok else "; see FAIL lines"))
    return EXIT_OK if results_ok else EXIT_CLAIM_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "compare": cmd_compare, "verify": cmd_verify}[args.command]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return handler(args)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SelfPlayError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
