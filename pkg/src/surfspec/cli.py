"""Command line front end: JSON run configs in, JSON/CSV artifacts out.

A run config (``spec_version`` 1) names a metric family with its
parameters, a chart domain with its resolution, an optional distance
function expression, solver knobs, and a nonempty list of checks to
execute.  ``run`` executes every listed check in order and writes one
JSON report; the other subcommands expose individual checks and table
dumps for quick inspection.

Exit codes: 0 when every executed check passes, 1 when any check
fails, 2 for invalid input (unreadable file, schema violation,
unparseable expression, metric or domain construction failure).
Invalid-input messages name the offending config field.

Reports embed the fully resolved config, and every timestamp or wall
time lives under the ``metadata`` key, so two runs with the same
config and seed produce byte-identical files once that key is
dropped.  CSV floats are written with ``repr`` and therefore
round-trip through ``float`` exactly.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import jsonschema

from .assembly import (
    AssemblyError,
    apply_dirichlet,
    assemble_oneform,
    assemble_scalar,
)
from .eigen import (
    EigenError,
    SolverOptions,
    cluster_multiplicities,
    solve_oneform,
    solve_smallest,
)
from .expr import ExprError
from .geometry import (
    ChartMetric,
    DistanceFunction,
    GeometryError,
    builtin_metric,
)
from .mesh import DomainSpec, MeshError, triangulate
from .verify import (
    VerificationReport,
    VerifyError,
    convergence_study,
    curvature_check,
    cylinder_oracle,
    hodge_dimension_check,
    lemma_check,
    oracle_check,
    spectrum_union_check,
    verify_inequality,
)

__all__ = [
    "CONFIG_SCHEMA",
    "ConfigError",
    "load_config",
    "validate_config",
    "build_objects",
    "run",
    "write_report",
    "main",
]

SPEC_VERSION = 1
CHECK_NAMES = (
    "inequality",
    "lemma",
    "union",
    "hodge-dims",
    "curvature",
    "convergence",
    "oracle",
)
_NEEDS_DISTANCE = ("inequality", "lemma", "curvature")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["spec_version", "metric", "domain", "checks"],
    "additionalProperties": False,
    "properties": {
        "spec_version": {"const": SPEC_VERSION},
        "metric": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {
                    "enum": [
                        "euclidean",
                        "hyperbolic_half_plane",
                        "warped",
                        "twisted",
                        "general",
                    ]
                },
                "params": {"type": "object"},
            },
        },
        "distance_function": {
            "type": ["string", "null"], "minLength": 1
        },
        "domain": {
            "type": "object",
            "required": ["shape", "extents", "resolution"],
            "additionalProperties": False,
            "properties": {
                "shape": {
                    "enum": ["rectangle", "periodic_band", "disk", "annulus"]
                },
                "extents": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 4,
                },
                "resolution": {"type": "integer", "minimum": 2},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "dense_threshold": {"type": "integer", "minimum": 1},
                "quadrature": {"enum": ["midpoint", "degree5"]},
            },
        },
        "checks": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"enum": list(CHECK_NAMES)},
        },
        "check_params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "inequality": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "levels": {"type": "integer", "minimum": 2}
                    },
                },
                "lemma": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "level": {"type": "integer", "minimum": 0}
                    },
                },
                "hodge-dims": {
                    "type": "object",
                    "additionalProperties": False,
                },
                "union": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "level": {"type": "integer", "minimum": 0},
                        "count": {"type": "integer", "minimum": 1},
                    },
                },
                "curvature": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "samples": {"type": "integer", "minimum": 2}
                    },
                },
                "convergence": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "bc": {"enum": ["dirichlet", "neumann"]},
                        "levels": {"type": "integer", "minimum": 3},
                    },
                },
                "oracle": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "max_index": {"type": "integer", "minimum": 1}
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "report": {"type": "string", "minLength": 1},
                "csv_dir": {"type": ["string", "null"], "minLength": 1},
            },
        },
    },
}

_SOLVER_DEFAULTS = {
    "tolerance": 1e-9,
    "seed": 42,
    "dense_threshold": 2000,
    "quadrature": "midpoint",
}
_CHECK_PARAM_DEFAULTS = {
    "inequality": {"levels": 3},
    "lemma": {"level": 0},
    "union": {"level": 0, "count": 10},
    "hodge-dims": {},
    "curvature": {"samples": 64},
    "convergence": {"bc": "dirichlet", "levels": 3},
    "oracle": {"max_index": 10},
}

class ConfigError(ValueError):
    """Invalid run config; the message names the offending field."""


_INPUT_ERRORS = (
    ConfigError,
    ExprError,
    GeometryError,
    MeshError,
    AssemblyError,
    EigenError,
    VerifyError,
    OSError,
)


# ---------------------------------------------------------------------------
# config loading and resolution


def load_config(path) -> dict:
    """Read a JSON config file; raises :class:`ConfigError` on bad files."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return raw


def validate_config(raw: dict) -> dict:
    """Schema-validate a raw config and fill in every default.

    Returns the fully resolved config that reports embed.  Error
    messages name the offending field as a slash-joined path.
    """
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "config root"
        raise ConfigError(f"config field '{where}': {exc.message}") from None

    cfg = copy.deepcopy(raw)
    cfg["metric"].setdefault("params", {})
    cfg.setdefault("distance_function", None)
    solver = dict(_SOLVER_DEFAULTS)
    solver.update(cfg.get("solver", {}))
    cfg["solver"] = solver
    params = {
        name: {**_CHECK_PARAM_DEFAULTS[name],
               **cfg.get("check_params", {}).get(name, {})}
        for name in CHECK_NAMES
    }
    cfg["check_params"] = params
    cfg.setdefault("output", {})
    cfg["output"].setdefault("report", "report.json")
    cfg["output"].setdefault("csv_dir", None)

    missing = [
        name for name in cfg["checks"]
        if name in _NEEDS_DISTANCE and not cfg["distance_function"]
    ]
    if missing:
        raise ConfigError(
            "config field 'distance_function': required by checks "
            f"{missing}"
        )
    return cfg


_EXTENT_COUNT = {"rectangle": 4, "periodic_band": 2, "disk": 3, "annulus": 4}


def build_objects(
    cfg: dict,
) -> Tuple[ChartMetric, DomainSpec, Optional[DistanceFunction], SolverOptions]:
    """Construct the metric, domain, distance function, and options.

    Construction failures surface as :class:`ConfigError` naming the
    responsible config field; metric positivity errors keep the
    failing sample point in the message.
    """
    try:
        metric = builtin_metric(
            cfg["metric"]["family"], cfg["metric"]["params"]
        )
    except (GeometryError, ExprError) as exc:
        raise ConfigError(f"config field 'metric': {exc}") from None

    dom = cfg["domain"]
    shape, extents, n = dom["shape"], dom["extents"], dom["resolution"]
    want = _EXTENT_COUNT[shape]
    if len(extents) != want:
        raise ConfigError(
            f"config field 'domain/extents': shape '{shape}' takes "
            f"{want} numbers, got {len(extents)}"
        )
    try:
        if shape == "rectangle":
            domain = DomainSpec.rectangle(*extents, n)
        elif shape == "periodic_band":
            period = metric.theta_period
            if period is None:
                domain = DomainSpec.periodic_band(*extents, n)
            else:
                domain = DomainSpec.periodic_band(
                    *extents, n, theta_period=period
                )
        elif shape == "disk":
            domain = DomainSpec.disk(*extents, n)
        else:
            domain = DomainSpec.annulus(*extents, n)
    except MeshError as exc:
        raise ConfigError(f"config field 'domain': {exc}") from None

    distance = None
    if cfg["distance_function"]:
        try:
            distance = DistanceFunction.from_text(
                metric, cfg["distance_function"]
            )
        except ExprError as exc:
            raise ConfigError(
                f"config field 'distance_function': {exc}"
            ) from None
        allowed = {metric.u, metric.v} | set(metric.constants)
        extra = distance.expr.variables() - allowed
        if extra:
            raise ConfigError(
                "config field 'distance_function': unknown variables "
                f"{sorted(extra)}"
            )

    solver = cfg["solver"]
    options = SolverOptions(
        dense_cutoff=solver["dense_threshold"],
        seed=solver["seed"],
        tol=solver["tolerance"],
        quad_rule=solver["quadrature"],
    )
    return metric, domain, distance, options


# ---------------------------------------------------------------------------
# check execution


def _run_check(name, cfg, metric, domain, distance, options):
    p = cfg["check_params"][name]
    if name == "inequality":
        return verify_inequality(
            domain, metric, distance, levels=p["levels"], options=options
        )
    if name == "lemma":
        return lemma_check(
            domain, metric, distance, level=p["level"], options=options
        )
    if name == "union":
        return spectrum_union_check(
            domain, metric, level=p["level"], count=p["count"],
            options=options,
        )
    if name == "hodge-dims":
        return hodge_dimension_check(triangulate(domain))
    if name == "curvature":
        return curvature_check(domain, metric, distance, samples=p["samples"])
    if name == "convergence":
        return convergence_study(
            domain, metric, bc=p["bc"], levels=p["levels"], options=options
        )
    if name == "oracle":
        return oracle_check(p["max_index"])
    raise ConfigError(f"config field 'checks': unknown check '{name}'")


def _envelope(cfg: dict, reports: List[VerificationReport], total: float) -> dict:
    return {
        "spec_version": SPEC_VERSION,
        "config": cfg,
        "checks": [r.to_dict() for r in reports],
        "metadata": {
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "wall_time_seconds": total,
            "check_seconds": [
                {"check": r.check, "seconds": r.wall_time_seconds}
                for r in reports
            ],
        },
    }


def run(config: dict, parallel: bool = False) -> Tuple[dict, int]:
    """Execute every check named in the config.

    Returns the report dictionary and the exit code (0 all passed,
    1 otherwise).  With ``parallel`` the checks run on a thread pool;
    results are collected in config order, so the report is identical
    either way.
    """
    cfg = validate_config(config)
    metric, domain, distance, options = build_objects(cfg)
    names = list(cfg["checks"])
    start = time.perf_counter()
    if parallel and len(names) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(names))) as pool:
            futures = [
                pool.submit(
                    _run_check, nm, cfg, metric, domain, distance, options
                )
                for nm in names
            ]
            reports = [f.result() for f in futures]
    else:
        reports = [
            _run_check(nm, cfg, metric, domain, distance, options)
            for nm in names
        ]
    total = time.perf_counter() - start
    report = _envelope(cfg, reports, total)
    code = 0 if all(r.passed for r in reports) else 1
    return report, code


# ---------------------------------------------------------------------------
# serialization helpers


def write_report(report: dict, path) -> None:
    """Write a report deterministically: sorted keys, trailing newline."""
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows) -> None:
    """Plain comma-joined CSV; floats via ``repr`` for exact round-trip."""
    lines = [",".join(header)]
    lines.extend(",".join(_fmt_cell(c) for c in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _check_csv(name: str, quantities: dict, directory: Path) -> None:
    if name == "inequality" and not quantities.get("refused"):
        rows = [
            (
                lv["level"], lv["n_faces"], float(lv["h"]),
                float(lv["lambda1"]), float(lv["mu_target"]),
                float(lv["margin"]), float(lv["tol_h"]),
            )
            for lv in quantities["levels"]
        ]
        write_csv(
            directory / "inequality_levels.csv",
            ("level", "n_faces", "h", "lambda1", "mu_target", "margin",
             "tol_h"),
            rows,
        )
    elif name == "spectrum-union":
        pairs = zip(quantities["oneform_positive"], quantities["scalar_union"])
        rows = [
            (i + 1, float(a), float(b)) for i, (a, b) in enumerate(pairs)
        ]
        write_csv(
            directory / "spectrum_union.csv",
            ("index", "oneform", "scalar_union"),
            rows,
        )
    elif name == "convergence":
        rows = [
            (lv["level"], float(lv["h"]), float(lv["value"]))
            for lv in quantities["table"]
        ]
        write_csv(
            directory / f"convergence_{quantities['bc']}.csv",
            ("level", "h", "value"),
            rows,
        )
    elif name == "oracle":
        rows = [
            (i + 1, kind, v)
            for kind in ("dirichlet", "neumann")
            for i, v in enumerate(quantities[kind])
        ]
        write_csv(directory / "oracle.csv", ("index", "kind", "value"), rows)


def _emit_csv_tables(report: dict, csv_dir) -> None:
    directory = Path(csv_dir)
    directory.mkdir(parents=True, exist_ok=True)
    for check in report["checks"]:
        _check_csv(check["check"], check["quantities"], directory)


def _summary_line(check: dict) -> str:
    name, q = check["check"], check["quantities"]
    status = "PASS" if check["passed"] else "FAIL"
    if q.get("refused"):
        detail = f"refused: {q['reason']}"
    elif name == "inequality":
        detail = (
            f"extrapolated margin {q['extrapolated_margin']:.6g}"
        )
    elif name == "lemma":
        c = q["coarse"]
        detail = (
            f"excess {c['excess_nu']:.3g}/{c['excess_star_nu']:.3g}, "
            f"cross ratio {c['cross_ratio']:.3g}"
        )
    elif name == "spectrum-union":
        detail = (
            f"max rel diff {q['max_rel_difference']:.3g}, "
            f"zero modes {q['zero_modes']}/{q['betti1']}"
        )
    elif name == "hodge-dimension":
        detail = (
            f"rank d0 {q['rank_d0']} + rank d1 {q['rank_d1']} + "
            f"b1 {q['betti1']} == E {q['n_edges']}"
        )
    elif name == "curvature":
        c = q["curvature"]
        detail = (
            f"min margin {c['min_margin']:.6g} at "
            f"({c['min_point'][0]:.6g}, {c['min_point'][1]:.6g})"
        )
    elif name == "convergence":
        order = q["fitted_order"]
        detail = (
            "non-monotone sequence" if order is None
            else f"order {order:.3f}, limit {q['extrapolated']:.8g}"
        )
    elif name == "oracle":
        detail = f"{q['compared_pairs']} interlacing pairs checked"
    else:
        detail = ""
    return f"{name:<12} {status}  {detail}"


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_run(args) -> int:
    cfg = validate_config(load_config(args.config))
    report, code = run(cfg, parallel=args.parallel)
    for check in report["checks"]:
        print(_summary_line(check))
    report_path = args.report or cfg["output"]["report"]
    write_report(report, report_path)
    print(f"report written to {report_path}")
    csv_dir = args.csv_dir or cfg["output"]["csv_dir"]
    if csv_dir:
        _emit_csv_tables(report, csv_dir)
        print(f"csv tables written to {csv_dir}")
    return code


def _single_check_report(cfg, report: VerificationReport, path) -> None:
    if path:
        write_report(
            _envelope(cfg, [report], report.wall_time_seconds), path
        )
        print(f"report written to {path}")


def _cmd_verify(args) -> int:
    cfg = validate_config(load_config(args.config))
    if args.levels is not None:
        cfg["check_params"]["inequality"]["levels"] = args.levels
    if "inequality" not in cfg["checks"]:
        cfg["checks"] = ["inequality"]
        cfg = validate_config(cfg)
    metric, domain, distance, options = build_objects(cfg)
    report = _run_check(
        "inequality", cfg, metric, domain, distance, options
    )
    q = report.quantities
    if q.get("refused"):
        print(f"refused: {q['reason']}")
    else:
        for lv in q["levels"]:
            print(
                f"level {lv['level']}: lambda1 {lv['lambda1']:.8g}, "
                f"mu_{q['mu_order']} {lv['mu_target']:.8g}, "
                f"margin {lv['margin']:.6g} (tol {lv['tol_h']:.3g})"
            )
        print(f"extrapolated margin {q['extrapolated_margin']:.8g}")
        if q.get("strictness_note"):
            print(q["strictness_note"])
    print(_summary_line(report.to_dict()))
    _single_check_report(cfg, report, args.report)
    return 0 if report.passed else 1


def _spectrum_result(cfg, metric, domain, options, bc: str, count: int):
    mesh = triangulate(domain)
    rule = options.quad_rule
    if bc == "oneform":
        ops = assemble_oneform(mesh, metric, quad_rule=rule)
        return solve_oneform(ops, count, tol=options.tol, options=options)
    ops = assemble_scalar(mesh, metric, quad_rule=rule)
    if bc == "dirichlet":
        red = apply_dirichlet(ops)
        return solve_smallest(
            red.stiffness, red.mass, count, tol=options.tol,
            bc="dirichlet", options=options,
        )
    return solve_smallest(
        ops.stiffness, ops.mass, count, tol=options.tol,
        bc="neumann", options=options,
    )


def _spectrum_rows(result, rel_gap: float = 1e-3):
    rows = []
    index = 0
    for _, count in cluster_multiplicities(result.values, rel_gap=rel_gap):
        for _ in range(count):
            rows.append(
                (
                    index + 1,
                    float(result.values[index]),
                    count,
                    float(result.residuals[index]),
                )
            )
            index += 1
    return rows


def _cmd_spectrum(args) -> int:
    cfg = validate_config(load_config(args.config))
    metric, domain, _, options = build_objects(cfg)
    result = _spectrum_result(cfg, metric, domain, options, args.bc, args.count)
    rows = _spectrum_rows(result)
    for index, value, mult, residual in rows:
        print(f"{index:4d}  {value!r}  mult {mult}  residual {residual:.3g}")
    if args.csv:
        write_csv(
            args.csv, ("index", "value", "multiplicity", "residual"), rows
        )
        print(f"csv written to {args.csv}")
    return 0 if result.converged else 1


def _cmd_curvature(args) -> int:
    cfg = validate_config(load_config(args.config))
    if not cfg["distance_function"]:
        raise ConfigError(
            "config field 'distance_function': required by the "
            "curvature check"
        )
    metric, domain, distance, _ = build_objects(cfg)
    report = curvature_check(domain, metric, distance, samples=args.samples)
    print(_summary_line(report.to_dict()))
    _single_check_report(cfg, report, args.report)
    return 0 if report.passed else 1


def _cmd_convergence(args) -> int:
    cfg = validate_config(load_config(args.config))
    p = cfg["check_params"]["convergence"]
    bc = args.bc or p["bc"]
    levels = args.levels or p["levels"]
    metric, domain, _, options = build_objects(cfg)
    report = convergence_study(
        domain, metric, bc=bc, levels=levels, options=options
    )
    for lv in report.quantities["table"]:
        print(
            f"level {lv['level']}: h {lv['h']:.6g}, value {lv['value']!r}"
        )
    print(_summary_line(report.to_dict()))
    if args.csv:
        rows = [
            (lv["level"], float(lv["h"]), float(lv["value"]))
            for lv in report.quantities["table"]
        ]
        write_csv(args.csv, ("level", "h", "value"), rows)
        print(f"csv written to {args.csv}")
    _single_check_report(cfg, report, args.report)
    return 0 if report.passed else 1


def _cmd_oracle(args) -> int:
    dirichlet, neumann = cylinder_oracle(args.max_index)
    print(",".join(str(v) for v in dirichlet))
    print(",".join(str(v) for v in neumann))
    if args.csv:
        rows = [
            (i + 1, kind, v)
            for kind, values in (("dirichlet", dirichlet), ("neumann", neumann))
            for i, v in enumerate(values)
        ]
        write_csv(args.csv, ("index", "kind", "value"), rows)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfspec",
        description=(
            "Spectral comparison checks for surfaces described by "
            "chart metrics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute every check listed in a config")
    p.add_argument("config", help="path to a JSON run config")
    p.add_argument("--report", help="report path (overrides the config)")
    p.add_argument("--csv-dir", help="table directory (overrides the config)")
    p.add_argument(
        "--parallel", action="store_true",
        help="run checks concurrently (report is identical either way)",
    )
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run the eigenvalue comparison only")
    p.add_argument("config")
    p.add_argument("--levels", type=int, help="refinement levels to use")
    p.add_argument("--report", help="write a single-check JSON report")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("spectrum", help="dump an eigenvalue table")
    p.add_argument("config")
    p.add_argument(
        "--bc", choices=("dirichlet", "neumann", "oneform"),
        default="dirichlet",
    )
    p.add_argument("-k", "--count", type=int, default=8)
    p.add_argument("--csv", help="CSV output path")
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser(
        "curvature-check",
        help="sample the unit-gradient and curvature conditions",
    )
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--report", help="write a single-check JSON report")
    p.set_defaults(func=_cmd_curvature)

    p = sub.add_parser(
        "convergence", help="eigenvalue refinement study with a rate fit"
    )
    p.add_argument("config")
    p.add_argument("--bc", choices=("dirichlet", "neumann"))
    p.add_argument("--levels", type=int)
    p.add_argument("--csv", help="CSV output path")
    p.add_argument("--report", help="write a single-check JSON report")
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser(
        "oracle",
        help=(
            "closed-form cylinder band spectra; prints the Dirichlet "
            "list then the Neumann list"
        ),
    )
    p.add_argument("--max-index", type=int, default=10)
    p.add_argument("--csv", help="CSV output path")
    p.set_defaults(func=_cmd_oracle)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
