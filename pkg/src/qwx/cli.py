"""Command line interface: ``qwx run`` and ``qwx suite``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .qcore import QwxError
from .scenario import ScenarioError, evaluate, parse_scenario

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONTRACT = 2

CSV_COLUMNS = ("scenario_id", "d_I", "m", "l", "S_e", "F_e", "S_PZ", "I_ZE", "dI", "I_F", "S2", "dIF",
               "margin_T2", "margin_T3", "fano_rhs")
# entropy-valued fields rescaled by --bits; fidelities and dimensions are not
ENTROPY_KEYS = frozenset({"S_e", "S_PZ", "I_ZE", "dI", "I_F", "S2", "dIF", "margin_T2", "margin_T3",
                          "fano_rhs", "margin_entropy", "margin_fidelity", "I_ZW", "neg_log_Fe2",
                          "neg_log_closed", "bound", "entropy", "identity_spread"})


def _jsonable(x, bits: bool = False, key: str | None = None):
    """Convert numpy scalars, tuples and non-finite floats; optionally rescale entropies to bits."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v, bits, str(k)) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v, bits, key) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist(), bits, key)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if bits and key in ENTROPY_KEYS:
            v /= math.log(2)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v, bits: bool, key: str) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    f = float(v)
    if bits and key in ENTROPY_KEYS:
        f /= math.log(2)
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return format(f, ".17g")


def _csv(rows: list, bits: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c), bits, c) for c in CSV_COLUMNS])
    return buf.getvalue()


def _seed(arg: int | None, scenario_seed: int | None = None) -> int:
    if arg is not None:
        return arg
    if scenario_seed is not None:
        return scenario_seed
    env = os.environ.get("QWX_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ScenarioError(f"QWX_SEED: expected an integer, got {env!r}") from None
    return 0


def _parse_tol(items: list) -> dict:
    out = {}
    for s in items or []:
        k, sep, v = s.partition("=")
        if not sep:
            raise ScenarioError(f"--tol: expected key=value, got {s!r}")
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ScenarioError(f"--tol {k}: not a number: {v!r}") from None
    return out


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_run(args) -> int:
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        print(f"error: cannot read {args.scenario}: {e.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as e:
        print(f"error: {args.scenario}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}",
              file=sys.stderr)
        return EXIT_INPUT
    try:
        sc = parse_scenario(doc, _parse_tol(args.tol))
        seed = _seed(args.seed, sc.seed)
    except QwxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    try:
        ev = evaluate(sc)
    except QwxError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INPUT
    report = {
        "version": __version__,
        "seed": seed,
        "scenario_id": sc.id,
        "units": "bits" if args.bits else "nats",
        "tolerances": sc.tol.as_dict(),
        "d_I": sc.H.dim,
        "results": ev.results,
        "violations": ev.violations,
        "ok": not ev.violations,
    }
    text = _csv(ev.rows, args.bits) if args.csv else _dump(_jsonable(report, args.bits))
    _write(text, args.output)
    if ev.violations:
        for v in ev.violations:
            print(f"contract violation: {v.get('analysis')}: {v.get('contract')}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def _parse_dims(s: str) -> tuple:
    try:
        dims = tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise ScenarioError(f"--dims: expected comma-separated integers, got {s!r}") from None
    if not dims or min(dims) < 2:
        raise ScenarioError("--dims: every dimension must be at least 2")
    return dims


def cmd_suite(args) -> int:
    from .suite import run_suite

    try:
        dims = _parse_dims(args.dims)
        seed = _seed(args.seed)
        if args.count < 1:
            raise ScenarioError("--count: must be positive")
    except QwxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    rep = run_suite(seed=seed, dims=dims, count=args.count, inject_bug=args.inject_bug)
    sys.stdout.write(rep.table())
    if args.output:
        doc = {"version": __version__, **rep.as_dict()}
        _write(_dump(_jsonable(doc)), args.output)
    return EXIT_OK if rep.passed else EXIT_CONTRACT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwx", description="Quantum work extraction checks.")
    p.add_argument("--version", action="version", version=f"qwx {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evaluate a scenario file")
    r.add_argument("scenario", help="scenario JSON file")
    r.add_argument("-o", "--output", help="write the report here instead of stdout")
    r.add_argument("--csv", action="store_true", help="emit trade-off rows as CSV")
    r.add_argument("--tol", action="append", metavar="KEY=VALUE", help="override a tolerance (repeatable)")
    r.add_argument("--seed", type=int, help="random seed (default: scenario seed, then $QWX_SEED, then 0)")
    r.add_argument("--bits", action="store_true", help="report entropies in bits")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run the randomized property suite")
    s.add_argument("--seed", type=int, help="random seed (default: $QWX_SEED, then 0)")
    s.add_argument("--dims", default="2,3,4", help="comma-separated internal dimensions")
    s.add_argument("--count", type=int, default=100, help="cases per family")
    s.add_argument("--inject-bug", action="store_true", help="mutate the sector check to test detection")
    s.add_argument("-o", "--output", help="write a JSON report here")
    s.set_defaults(func=cmd_suite)
    return p


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
