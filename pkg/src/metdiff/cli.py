"""Command line front end.

Exit statuses: 0 success, 1 a property check failed, 2 malformed input
(JSON or schema), 3 metric-axiom violation.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from .differential import build_du
from .errors import MetricError, TriangleViolation
from .metricmap import MAP_SCHEMA, MetricValuedMap, map_from_json
from .mmspace import SPACE_SCHEMA, space_from_json

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_METRIC = 0, 1, 2, 3


class InputError(Exception):
    pass


def _clean(obj):
    """Make floats JSON-safe (inf and nan become strings)."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def load_document(path: str):
    """Read and schema-validate a space or map document."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("top-level JSON value must be an object")
    schema = MAP_SCHEMA if "source" in doc else SPACE_SCHEMA
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise InputError(f"schema error: {exc.message}") from None
    return doc


def _build(doc):
    try:
        return map_from_json(doc) if "source" in doc else space_from_json(doc)
    except MetricError:
        raise
    except (ValueError, KeyError) as exc:
        raise InputError(str(exc)) from None


def cmd_validate(args) -> int:
    try:
        obj = _build(load_document(args.path))
    except InputError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MetricError as exc:
        print(f"metric violation: {exc}", file=sys.stderr)
        if isinstance(exc, TriangleViolation):
            print("triple: " + " ".join(map(str, exc.triple)))
        return EXIT_METRIC
    kind = "map" if isinstance(obj, MetricValuedMap) else "space"
    n = obj.source.n if kind == "map" else obj.n
    print(f"ok: valid {kind} with {n} points")
    return EXIT_OK


def du_report(u: MetricValuedMap) -> dict:
    du = build_du(u)
    X, Y = u.source, u.target
    norm = du.op_norm()
    mu = u.pushforward
    blocks = {}
    for i in np.flatnonzero(u.slope > 0):
        blocks[str(X.point_ids[i])] = {
            "rows": list(du.codomain.fiber_index[i]),
            "cols": list(du.tangent.fiber_index[i]),
            "matrix": du.map.block(i).tolist(),
        }
    return {
        "points": list(X.point_ids),
        "slope": u.slope.tolist(),
        "du_norm": norm.tolist(),
        "residual": (u.slope - norm).tolist(),
        "max_residual": float(np.max(np.abs(u.slope - norm), initial=0.0)),
        "target_epsilon": u.eps_y,
        "pushforward": {str(Y.point_ids[q]): float(mu.mass[q]) for q in range(Y.n)},
        "mu_support": list(mu.support.ids),
        "compatibility": u.compatibility.to_dict(),
        "blocks": blocks,
    }


def cmd_du(args) -> int:
    try:
        doc = load_document(args.path)
        if "source" not in doc:
            raise InputError("expected a map document with source/target/map")
        if args.epsilon_y is not None:
            doc = dict(doc, target_epsilon=args.epsilon_y)
        u = _build(doc)
    except InputError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MetricError as exc:
        print(f"metric violation: {exc}", file=sys.stderr)
        return EXIT_METRIC
    text = dumps(du_report(u))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    from .suites import run_check

    with warnings.catch_warnings():
        # reported below as part of the summary
        warnings.simplefilter("ignore")
        summary = run_check(args.suite, args.seed, args.n)
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    csv_text = summary["suites"].get("kirchheim", {}).pop("csv", None)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if csv_text is not None:
            (out / "kirchheim.csv").write_text(csv_text)
        fdir = out / "failures"
        for name, block in summary["suites"].items():
            for k, f in enumerate(block["failures"]):
                if "seed" in f:
                    fdir.mkdir(exist_ok=True)
                    path = fdir / f"{name}_{f['index']}.json"
                    path.write_text(dumps(f))
                    f["artifact"] = str(path)
        (out / "summary.json").write_text(dumps(summary))
    elif csv_text is not None:
        summary["suites"]["kirchheim"]["csv_rows"] = csv_text.splitlines()
    sys.stdout.write(dumps(summary))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_replay(args) -> int:
    from .suites import replay

    try:
        doc = json.loads(Path(args.path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INPUT
    r = replay(doc)
    sys.stdout.write(dumps({"suite": doc["suite"], "index": r.index, "failed": r.failed,
                            "residuals": {k: list(v) for k, v in r.residuals.items()}}))
    return EXIT_FAIL if r.failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metdiff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="validate a space or map JSON file")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)
    d = sub.add_parser("du", help="compute du and its report for a map file")
    d.add_argument("path")
    d.add_argument("--out", help="write the JSON report here instead of stdout")
    d.add_argument("--epsilon-y", type=float, default=None,
                   help="override the target neighbourhood scale")
    d.set_defaults(func=cmd_du)
    c = sub.add_parser("check", help="run randomised property suites")
    c.add_argument("--suite", default="all",
                   choices=["maps", "scalar", "bd", "local", "kirchheim", "modules", "all"])
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n", type=int, default=50, help="instances per suite")
    c.add_argument("--out", help="directory for summary.json, CSV and failures")
    c.set_defaults(func=cmd_check)
    r = sub.add_parser("replay", help="rerun a failure artifact written by check")
    r.add_argument("path")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "n", 0) < 0:
        print("--n must be nonnegative", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
