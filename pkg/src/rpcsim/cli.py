"""Command-line entry point: ``rpcsim <subcommand> [--config PATH] [--seed N] ...``.

Exit status: 0 all non-vacuous tests pass, 1 a test failed, 2 invalid
configuration or arguments (nothing is written), 3 runtime error.

Output directory layout::

    manifest.json      config echo, seed, seed scheme, build identifier, timestamp
    summary.csv        test, parameters, statistic, p_value_or_bound, verdict
    records/NNN.json   one record per test (see ``rpcsim.experiments``)
    <artifacts>        kind-specific files (masses, overlaps, trajectories, tables)

Only the manifest carries a timestamp; every other byte is a function of
(config, seed, build).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import KINDS, ConfigError, load_document, validate
from .errors import InfeasibleError, ParameterError
from .experiments import run
from .parallel import SEED_SCHEME

OUT_ENV = "RPCSIM_OUT"
DEFAULT_OUT = "rpcsim-out"
SUMMARY_COLUMNS = ("test", "parameters", "statistic", "p_value_or_bound", "verdict")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _jsonable(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_jsonable) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for rec in records:
        w.writerow(
            [
                rec["test"],
                json.dumps(rec["parameters"], sort_keys=True, default=_jsonable),
                "" if rec["statistic"] is None else repr(float(rec["statistic"])),
                "" if rec["p_value_or_bound"] is None else repr(float(rec["p_value_or_bound"])),
                rec["verdict"],
            ]
        )
    return buf.getvalue()


def build_id() -> dict:
    return {
        "package": f"rpcsim {__version__}",
        "kernels": kernels.BACKEND,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def write_outputs(out: Path, kind: str, config: dict, result) -> None:
    files = []
    for name in sorted(result.artifacts):
        atomic_write(out / name, result.artifacts[name])
        files.append(name)
    for idx, rec in enumerate(result.records):
        name = f"records/{idx:03d}.json"
        atomic_write(out / name, dumps(rec))
        files.append(name)
    atomic_write(out / "summary.csv", summary_csv(result.records))
    files.append("summary.csv")
    manifest = {
        "schema_version": config["schema_version"],
        "subcommand": kind,
        "config": config,
        "seed": config["seed"],
        "seed_scheme": SEED_SCHEME,
        "build": build_id(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "verdict": "pass" if result.passed else "fail",
        "files": files,
    }
    atomic_write(out / "manifest.json", dumps(manifest))


def load_records(directory: Path) -> list[dict]:
    rec_dir = directory / "records"
    paths = sorted(rec_dir.glob("*.json")) if rec_dir.is_dir() else []
    if not paths:
        raise ConfigError(f"no records in {directory}")
    records = []
    for p in paths:
        try:
            records.append(json.loads(p.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable record {p}: {exc}") from exc
    return records


def _format_table(records) -> str:
    rows = [("test", "statistic", "p/bound", "verdict")]
    for r in records:
        fmt = lambda v: "" if v is None else f"{float(v):.6g}"  # noqa: E731
        rows.append((r["test"], fmt(r["statistic"]), fmt(r["p_value_or_bound"]), r["verdict"]))
    widths = [max(len(row[c]) for row in rows) for c in range(4)]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpcsim", description="Cascade, coalescent and quasi-stationarity experiments.")
    parser.add_argument("--version", action="version", version=f"rpcsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} suite")
        p.add_argument("--config", type=Path, help="JSON experiment config (defaults are used for missing keys)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--replicas", type=int, help="replica count (overrides config)")
        if kind == "counterexample":
            p.add_argument("--R", type=int, dest="R", help="number of matched velocity moments")
    p = sub.add_parser("report", help="re-render stored records as summary tables")
    p.add_argument("directory", type=Path, nargs="?", help="output directory of an earlier run")
    p.add_argument("--out", type=Path, help="same as the positional directory")
    return parser


def resolve_out(arg: Path | None, config_out: str | None) -> Path:
    if arg is not None:
        return arg
    if config_out:
        return Path(config_out)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def _report(args) -> int:
    directory = args.directory or args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    records = load_records(directory)
    atomic_write(directory / "summary.csv", summary_csv(records))
    print(_format_table(records))
    return EXIT_PASS if all(r["verdict"] != "fail" for r in records) else EXIT_FAIL


def _experiment(args) -> int:
    doc = load_document(args.config) if args.config else {}
    if "kind" in doc and doc["kind"] != args.command:
        raise ConfigError(f"config kind {doc['kind']!r} does not match subcommand {args.command!r}")
    doc = dict(doc, kind=args.command)
    for key in ("seed", "workers", "replicas", "R"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    cfg = validate(doc)
    out = resolve_out(args.out, cfg["out"])
    result = run(cfg)
    write_outputs(out, cfg.kind, cfg.to_dict(), result)
    print(_format_table(result.records))
    print(f"wrote {len(result.records)} records to {out}")
    return EXIT_PASS if result.passed else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        if args.command == "report":
            return _report(args)
        return _experiment(args)
    except (ConfigError, ParameterError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
