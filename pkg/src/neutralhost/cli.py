"""
Command line entry point.

    neutralhost sim run SCENARIO --out-dir DIR
    neutralhost coverage map|cdf|compare (--sites CSV ... | --synthetic M S F) --out-dir DIR
    neutralhost validate FILE ...

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Every artifact starts with a header carrying the seed, a digest of the
effective configuration and the tool version.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path

from . import __version__
from . import agents
from . import coverage as cv
from .errors import GeometryMismatch, ScenarioError, SiteFileError
from .ledger import canonical_json, sha256_hex

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neutralhost", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"neutralhost {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("sim", help="contract/ledger simulation")
    sim_sub = sim.add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = sim_sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--billing-mode", choices=["per-byte", "per-attachment-time"])
    run.add_argument("--out-dir", type=Path, required=True)
    run.add_argument("--format", choices=["csv", "jsonl"], default="csv")

    cov = sub.add_parser("coverage", help="RSS coverage experiments")
    cov_sub = cov.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name, text in (("map", "strongest-signal grid of one deployment"),
                       ("cdf", "restricted CDF of one deployment"),
                       ("compare", "baseline / subset / all comparison")):
        c = cov_sub.add_parser(name, help=text)
        src = c.add_mutually_exclusive_group(required=True)
        src.add_argument("--sites", type=Path, action="append",
                         help="site CSV; repeat to merge several files")
        src.add_argument("--synthetic", nargs=3, metavar=("MACROS", "SMALLS", "CHAIN_FRACTION"))
        c.add_argument("--area-m", nargs=2, type=float, metavar=("W", "H"))
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--resolution-m", type=float, default=5.0)
        c.add_argument("--threshold-dbm", type=float, default=cv.CLOSEST_POINT_RSS_DBM)
        c.add_argument("--subset-tag", default="chain")
        c.add_argument("--out-dir", type=Path, required=True)
        c.add_argument("--format", choices=["csv", "jsonl"], default="csv")

    val = sub.add_parser("validate", help="schema-check scenario and site files")
    val.add_argument("files", nargs="+", type=Path)
    return p


# -- output helpers --------------------------------------------------------------

def _header(seed, digest, fmt):
    if fmt == "jsonl":
        return canonical_json({"header": {"seed": seed, "config_digest": digest,
                                          "version": __version__}}) + "\n"
    return f"# seed={seed} config_digest={digest} version={__version__}\n"


def _config_digest(command, inputs: dict, flags: dict) -> str:
    return sha256_hex(canonical_json({"command": command, "inputs": inputs, "flags": flags}))[:16]


def _file_digest(path: Path) -> str:
    return sha256_hex(path.read_bytes().decode("utf-8", "replace"))


def _write_all(out_dir: Path, artifacts: dict[str, str]) -> None:
    """Write every artifact or none: stage in a temp dir, then move into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        for name, text in artifacts.items():
            (Path(tmp) / name).write_text(text)
        for name in artifacts:
            os.replace(Path(tmp) / name, out_dir / name)


def _rows_jsonl(header, columns, rows) -> str:
    return header + "".join(canonical_json(dict(zip(columns, r))) + "\n" for r in rows)


# -- sim ---------------------------------------------------------------------------

def cmd_sim_run(args) -> int:
    data = agents.read_scenario_file(args.scenario)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.billing_mode is not None:
        data["billing_mode"] = args.billing_mode
    scenario = agents.scenario_from_dict(data)
    digest = _config_digest("sim run", {"scenario": _file_digest(args.scenario)},
                            {"seed": args.seed, "billing_mode": args.billing_mode,
                             "format": args.format})
    trace = agents.run_scenario(scenario)

    jsonl_head = _header(scenario.seed, digest, "jsonl")
    trace_text = jsonl_head + "".join(line + "\n" for line in trace.jsonl_lines())
    chain = io.StringIO()
    chain.write(jsonl_head)
    trace.ledger.dump_chain(chain)
    artifacts = {"trace.jsonl": trace_text, "chain.jsonl": chain.getvalue()}
    if args.format == "csv":
        artifacts["accounting.csv"] = _header(scenario.seed, digest, "csv") + trace.accounting_csv()
    else:
        artifacts["accounting.jsonl"] = _rows_jsonl(
            jsonl_head, agents.ACCOUNTING_COLUMNS,
            [[r[c] for c in agents.ACCOUNTING_COLUMNS] for r in trace.accounting])
    artifacts["snapshot.json"] = json.dumps(
        {"header": {"seed": scenario.seed, "config_digest": digest, "version": __version__},
         "snapshot": trace.snapshot}, indent=2) + "\n"
    _write_all(args.out_dir, artifacts)
    return EXIT_OK


# -- coverage ------------------------------------------------------------------------

def _load_deployment(args) -> tuple[cv.Deployment, dict]:
    area = tuple(args.area_m) if args.area_m else None
    if args.synthetic:
        try:
            macros, smalls, frac = int(args.synthetic[0]), int(args.synthetic[1]), float(args.synthetic[2])
        except ValueError:
            raise UsageError("--synthetic expects MACROS SMALLS CHAIN_FRACTION") from None
        d = cv.generate_synthetic_deployment(macros, smalls, frac, area or (1000.0, 1000.0), args.seed)
        return d, {"synthetic": [macros, smalls, frac]}
    sites, areas, inputs = [], set(), {}
    for path in args.sites:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", cv.SiteOutOfBounds)
            d = cv.ingest_sites(path, area or (1000.0, 1000.0))
        for w in caught:
            print(f"warning: {path}: {w.message}", file=sys.stderr)
        sites.extend(d.sites)
        areas.add(d.area)
        inputs[path.name] = _file_digest(path)
    if len(areas) > 1:
        raise GeometryMismatch(f"site files disagree on area: {sorted(areas)}")
    try:
        merged = cv.Deployment(tuple(sites), areas.pop() if areas else (area or (1000.0, 1000.0)))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return merged, inputs


def _grid_text(grid, header, fmt):
    buf = io.StringIO()
    buf.write(header)
    if fmt == "csv":
        cv.write_grid_csv(grid, buf)
    else:
        buf.writelines(canonical_json({"x": x, "y": y, "rss_dbm": None if v == float("-inf") else round(v, 6),
                                       "serving_site": s or None}) + "\n"
                       for x, y, v, s in cv.grid_rows(grid))
    return buf.getvalue()


def _cdf_text(cdf, header, fmt):
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(header)
        cv.write_cdf_csv(cdf, buf)
        return buf.getvalue()
    return _rows_jsonl(header, ("rss_dbm", "cum_fraction"),
                       [(None if v == float("-inf") else round(v, 6), round(c, 6))
                        for v, c in cdf.rows()])


STATS_COLUMNS = ("scenario", "site_count", "mean_gain_db", "improved_point_count", "point_count",
                 "improved_fraction", "delta_median_db", "delta_p90_db", "delta_max_db",
                 "mean_relative_gain_pct", "fraction_below_baseline", "fraction_below_augmented")


def cmd_coverage(args) -> int:
    if args.resolution_m <= 0:
        raise UsageError("--resolution-m must be positive")
    deployment, inputs = _load_deployment(args)
    try:
        cv.grid_shape(deployment.area, args.resolution_m)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    flags = {"seed": args.seed, "resolution_m": args.resolution_m, "threshold_dbm": args.threshold_dbm,
             "subset_tag": args.subset_tag, "format": args.format,
             "area_m": list(args.area_m) if args.area_m else None}
    digest = _config_digest(f"coverage {args.action}", inputs, flags)
    header = _header(args.seed, digest, args.format)
    ext = args.format
    model = cv.ChannelModel(seed=args.seed)

    def grid_of(d):
        return cv.rss_map(d, model, args.resolution_m, args.seed)

    artifacts = {}
    if args.action == "map":
        artifacts[f"grid.{ext}"] = _grid_text(grid_of(deployment), header, args.format)
    elif args.action == "cdf":
        cdf = cv.restricted_cdf(grid_of(deployment), args.threshold_dbm)
        artifacts[f"cdf.{ext}"] = _cdf_text(cdf, header, args.format)
    else:
        scenarios = cv.scenario_deployments(deployment, args.subset_tag)
        has_small = any(s.tier == cv.SMALL for s in deployment.sites)
        names = ["baseline", "subset", "all"] if has_small else ["baseline"]
        grids = {n: grid_of(scenarios[n]) for n in names}
        for n in names:
            artifacts[f"grid_{n}.{ext}"] = _grid_text(grids[n], header, args.format)
            artifacts[f"cdf_{n}.{ext}"] = _cdf_text(
                cv.restricted_cdf(grids[n], args.threshold_dbm), header, args.format)
        if has_small:
            rows = []
            for n in ("subset", "all"):
                c = cv.compare_scenarios(grids["baseline"], grids[n], args.threshold_dbm).as_dict()
                rows.append([n, len(scenarios[n].sites)] + [c[k] for k in STATS_COLUMNS[2:]])
            if args.format == "csv":
                body = ",".join(STATS_COLUMNS) + "\n" + "".join(
                    ",".join(str(v) if isinstance(v, (str, int)) else cv.fmt(v) for v in r) + "\n"
                    for r in rows)
                artifacts["comparison.csv"] = header + body
            else:
                artifacts["comparison.jsonl"] = _rows_jsonl(
                    header, STATS_COLUMNS,
                    [[v if isinstance(v, (str, int)) else round(v, 6) for v in r] for r in rows])
    _write_all(args.out_dir, artifacts)
    return EXIT_OK


# -- validate --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    failed = False
    for path in args.files:
        if not path.exists():
            print(f"{path}: no such file", file=sys.stderr)
            failed = True
            continue
        if path.suffix.lower() == ".csv":
            errors, notes = cv.validate_sites(path)
        else:
            try:
                errors, notes = agents.validate_scenario(agents.read_scenario_file(path)), []
            except ScenarioError as exc:
                errors, notes = exc.problems, []
        for note in notes:
            print(f"{path}: warning: {note}", file=sys.stderr)
        for err in errors:
            print(f"{path}: {err}" if not err.startswith(str(path)) else err, file=sys.stderr)
        if errors:
            failed = True
        else:
            print(f"{path}: ok")
    return EXIT_CONFIG if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sim":
            return cmd_sim_run(args)
        if args.command == "coverage":
            return cmd_coverage(args)
        return cmd_validate(args)
    except UsageError as exc:
        print(f"neutralhost: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"neutralhost: config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (SiteFileError, GeometryMismatch, FileNotFoundError) as exc:
        print(f"neutralhost: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - stable exit code for anything unexpected
        print(f"neutralhost: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
