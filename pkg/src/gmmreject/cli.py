"""Command-line harness: single runs, the benchmark matrix and the constant ablation.

Exit codes: 0 success, 2 usage error, 3 initialization failure, 4 run
aborted, 5 audit violations (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import importlib.util
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bench import BenchSpec, UnsupportedOracle, oracle_sample
from .initialization import InitializationError
from .sampler import SamplerAborted, SamplerConfig, run
from .stats import two_sample_test
from .target import Domain, LogTarget

logger = logging.getLogger("gmmreject")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INIT_FAILED = 3
EXIT_ABORTED = 4
EXIT_AUDIT = 5

CSV_FIELDS = ["family", "params", "T", "seed", "runs", "acceptance_rate", "acceptance_std",
              "f_evals", "audit_pass", "test_p", "tests_passed", "error"]
ABLATE_CONSTANTS = ("n_base", "c_low_inflate", "accept_weight", "gmm_growth", "gmm_k_cap_divisor")
# constants whose meaningful part is the excess over one (a factor of 0.5 on
# 1.05 would make C_low shrink every round)
MARGIN_SCALED = ("c_low_inflate", "gmm_growth")
TEST_ALPHA = 0.01


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _jsonable(obj):
    """Recursively replace non-finite floats with strings and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_samples(path_stem: Path, X: np.ndarray, fmt: str) -> Path:
    if fmt == "csv":
        path = path_stem.with_suffix(".csv")
        np.savetxt(path, X, delimiter=",", fmt="%.17g")
    else:
        path = path_stem.with_suffix(".f64le")
        np.ascontiguousarray(X, dtype="<f8").tofile(path)
    return path


def load_constants(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read constants file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("constants file must hold a JSON object")
    return data


def make_config(T, seed, constants: dict) -> SamplerConfig:
    allowed = {f for f in SamplerConfig.__dataclass_fields__} - {"T", "seed"}
    unknown = set(constants) - allowed
    if unknown:
        raise UsageError(f"unknown constants: {sorted(unknown)}")
    try:
        return SamplerConfig(T=T, seed=seed, **constants)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def load_plugin(path) -> LogTarget:
    """Load a target from a Python file.

    The file must define ``DIMS`` (int) and ``log_density(x)`` taking one
    point as a length-``DIMS`` array. Optional: ``DOMAIN`` as a list of
    ``(lower, upper)`` pairs (use ``float('inf')`` for open sides),
    ``VECTORIZED = True`` when ``log_density`` accepts an (n, DIMS) array,
    and ``grad_log_density(x)``. Without a gradient, forward-mode dual
    numbers differentiate ``log_density``, so it should stick to
    arithmetic and numpy ufuncs.
    """
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"plugin file not found: {path}")
    spec = importlib.util.spec_from_file_location(f"gmmreject_plugin_{path.stem}", path)
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as exc:  # noqa: BLE001 - any plugin failure is a usage problem
        raise UsageError(f"plugin {path} failed to load: {exc}") from exc
    if not hasattr(module, "DIMS") or not callable(getattr(module, "log_density", None)):
        raise UsageError("plugin must define DIMS and log_density(x)")
    d = int(module.DIMS)
    bounds = getattr(module, "DOMAIN", None)
    if bounds is None:
        domain = Domain.unbounded(d)
    else:
        bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if bounds.shape[0] != d:
            raise UsageError("DOMAIN needs one (lower, upper) pair per dimension")
        domain = Domain(bounds[:, 0], bounds[:, 1])
    return LogTarget(module.log_density, domain, grad=getattr(module, "grad_log_density", None),
                     vectorized=bool(getattr(module, "VECTORIZED", False)), name=path.stem)


def distribution_test(spec: BenchSpec, X: np.ndarray, seed) -> dict:
    """Compare ``X`` with an oracle sample of the same size (KS in 1-D, Cramer otherwise)."""
    ss = np.random.SeedSequence([0 if seed is None else int(seed), 7919])
    oracle_rng, perm_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    try:
        Y = oracle_sample(spec, X.shape[0], oracle_rng)
    except UnsupportedOracle as exc:
        return {"skipped": str(exc)}
    return two_sample_test(X, Y, rng=perm_rng).to_dict()


def execute(spec_or_target, T, seed, constants) -> tuple:
    """One run; returns ``(samples, report dict)``."""
    cfg = make_config(T, seed, constants)
    target = spec_or_target.target() if isinstance(spec_or_target, BenchSpec) else spec_or_target
    X, report = run(target, cfg)
    out = report.to_dict()
    out["target"] = (spec_or_target.to_dict() if isinstance(spec_or_target, BenchSpec)
                     else {"plugin": target.name, "domain": target.domain.to_dict()})
    return X, out


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def bench_spec_from_args(args) -> BenchSpec:
    try:
        if args.family == "peakiness":
            return BenchSpec("peakiness", a=args.a, d=1, r=args.r)
        return BenchSpec(args.family, a=args.a, d=args.d, r=args.r)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_run(args) -> int:
    constants = load_constants(args.constants_file)
    target = load_plugin(args.plugin) if args.plugin else bench_spec_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        X, report = execute(target, args.T, args.seed, constants)
    except InitializationError as exc:
        logger.error("initialization failed: %s", exc)
        return EXIT_INIT_FAILED
    except SamplerAborted as exc:
        logger.error("run aborted: %s", exc)
        if exc.report is not None:
            write_json(out_dir / "report.json", exc.report.to_dict())
        return EXIT_ABORTED
    if args.test and isinstance(target, BenchSpec):
        report["tests"] = distribution_test(target, X, args.seed)
    write_json(out_dir / "report.json", report)
    write_samples(out_dir / "samples", X, args.samples_format)
    print(f"acceptance_rate={report['acceptance_rate']:.4f} f_evals={report['f_evals']} "
          f"audit={'pass' if report['audit']['passed'] else 'FAIL'}")
    return EXIT_OK if report["audit"]["passed"] else EXIT_AUDIT


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

SUITES = {
    "peakiness": lambda dims: [BenchSpec("peakiness", a=a) for a in (1, 5, 10, 15, 20)],
    "scaling": lambda dims: [BenchSpec("sinusoid", d=d) for d in dims],
    "clutter": lambda dims: [BenchSpec("clutter", d=d) for d in (1, 2)],
}


def _params_label(spec: BenchSpec) -> str:
    if spec.family == "peakiness":
        return f"a={spec.a:g}"
    if spec.family == "sinusoid":
        return f"d={spec.d}"
    return f"d={spec.d};r={spec.r:g}"


def _one_run(job):
    spec, T, seed, constants, test = job
    try:
        X, report = execute(spec, T, seed, constants)
    except (InitializationError, SamplerAborted) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}
    result = {"acceptance_rate": report["acceptance_rate"], "f_evals": report["f_evals"],
              "audit_pass": report["audit"]["passed"], "report": report}
    if test:
        result["test"] = report["tests"] = distribution_test(spec, X, seed)
    return result


def _map(fn, jobs, n_workers):
    if n_workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, jobs))


def aggregate_cell(spec: BenchSpec, T, seed, results) -> dict:
    ok = [r for r in results if "error" not in r]
    errors = [r["error"] for r in results if "error" in r]
    rates = np.array([r["acceptance_rate"] for r in ok])
    ps = [r["test"]["p_value"] for r in ok if "p_value" in r.get("test", {})]
    return {
        "family": spec.family, "params": _params_label(spec), "T": T, "seed": seed,
        "runs": len(results),
        "acceptance_rate": float(rates.mean()) if ok else float("nan"),
        "acceptance_std": float(rates.std(ddof=1)) if len(ok) > 1 else 0.0,
        "f_evals": float(np.mean([r["f_evals"] for r in ok])) if ok else float("nan"),
        "audit_pass": bool(ok) and all(r["audit_pass"] for r in ok),
        "test_p": float(np.median(ps)) if ps else float("nan"),
        "tests_passed": f"{sum(p > TEST_ALPHA for p in ps)}/{len(ps)}",
        "error": "; ".join(errors),
    }


def write_csv(path: Path, rows, fields) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def cmd_bench(args) -> int:
    constants = load_constants(args.constants_file)
    make_config(args.T, args.seed, constants)          # validate before the long part
    names = list(SUITES) if args.suite == "all" else [args.suite]
    specs = [s for name in names for s in SUITES[name](args.dims)]
    seeds = [args.seed + i for i in range(args.runs)]
    jobs = [(spec, args.T, s, constants, args.test) for spec in specs for s in seeds]
    results = _map(_one_run, jobs, args.jobs)
    rows = [aggregate_cell(spec, args.T, args.seed, results[i * args.runs:(i + 1) * args.runs])
            for i, spec in enumerate(specs)]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "bench.csv", rows, CSV_FIELDS)
    for row in rows:
        print(f"{row['family']:10s} {row['params']:12s} acceptance {row['acceptance_rate']:.4f}"
              f" +- {row['acceptance_std']:.4f}  audit {'pass' if row['audit_pass'] else 'FAIL'}"
              f"  tests {row['tests_passed']}")
    return EXIT_OK if all(r["audit_pass"] for r in rows) else EXIT_AUDIT


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def scaled_constant(name: str, factor: float):
    """Apply ``factor`` to a sampler constant's default value."""
    base = SamplerConfig.__dataclass_fields__[name].default
    if name in MARGIN_SCALED:
        return 1.0 + (base - 1.0) * factor
    value = base * factor
    return max(1, int(round(value))) if isinstance(base, int) else value


def ablation_grid(constants, factors, design: str):
    """Cells as dicts of constant overrides.

    ``full`` is the factorial grid over ``factors``; ``oat`` varies one
    constant at a time around the defaults.
    """
    if design == "full":
        cells = []
        for combo in itertools.product(factors, repeat=len(constants)):
            cells.append({c: scaled_constant(c, f) for c, f in zip(constants, combo)})
        return cells
    cells = [{}]
    for c in constants:
        for f in factors:
            cells.append({c: scaled_constant(c, f)})
    return cells


def cmd_ablate(args) -> int:
    constants = [c.strip() for c in args.constants.split(",") if c.strip()]
    bad = [c for c in constants if c not in ABLATE_CONSTANTS]
    if bad:
        raise UsageError(f"cannot ablate {bad}; choose from {ABLATE_CONSTANTS}")
    try:
        factors = [float(f) for f in args.factors.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --factors: {exc}") from exc
    if not factors or any(f <= 0 for f in factors):
        raise UsageError("factors must be positive")
    spec = BenchSpec("peakiness", a=args.a)
    cells = ablation_grid(constants, factors, args.design)
    for cell in cells:
        make_config(args.T, args.seed, cell)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, args.T, args.seed, cell, args.test) for cell in cells]
    results = _map(_one_run, jobs, args.jobs)
    rows = []
    for i, (cell, res) in enumerate(zip(cells, results)):
        if "report" in res:
            cell_dir = out_dir / "cells" / f"{i:03d}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            write_json(cell_dir / "report.json", res["report"])
        label = ";".join(f"{k}={v:g}" for k, v in sorted(cell.items())) or "defaults"
        ps = res.get("test", {}).get("p_value", float("nan"))
        rows.append({"family": spec.family, "params": f"a={spec.a:g};{label}", "T": args.T,
                     "seed": args.seed, "runs": 1,
                     "acceptance_rate": res.get("acceptance_rate", float("nan")),
                     "acceptance_std": 0.0, "f_evals": res.get("f_evals", float("nan")),
                     "audit_pass": res.get("audit_pass", False), "test_p": ps,
                     "tests_passed": "" if math.isnan(ps) else f"{int(ps > TEST_ALPHA)}/1",
                     "error": res.get("error", "")})
    write_csv(out_dir / "ablate.csv", rows, CSV_FIELDS)
    rates = [r["acceptance_rate"] for r in rows if not r["error"]]
    summary = {"cells": len(rows), "min_acceptance": min(rates) if rates else None,
               "max_acceptance": max(rates) if rates else None,
               "spread": (max(rates) - min(rates)) if rates else None,
               "constants": constants, "factors": factors, "design": args.design}
    write_json(out_dir / "ablate_summary.json", summary)
    if rates:
        print(f"{len(rows)} cells  acceptance min {summary['min_acceptance']:.4f} "
              f"max {summary['max_acceptance']:.4f} spread {summary['spread']:.4f}")
    return EXIT_OK if all(r["audit_pass"] for r in rows) else EXIT_AUDIT


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _dims_list(text):
    try:
        dims = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dimension list {text!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError("dimensions must be >= 1")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmmreject", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--T", type=_positive_int, default=10_000, help="accepted samples per run")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--constants-file", help="JSON object overriding sampler constants")
    common.add_argument("--no-test", dest="test", action="store_false",
                        help="skip the oracle distribution test")

    p = sub.add_parser("run", parents=[common], help="one sampler run")
    p.add_argument("--family", choices=("peakiness", "sinusoid", "clutter"), default="peakiness")
    p.add_argument("--a", type=float, default=1.0, help="peakiness exponent")
    p.add_argument("--d", type=_positive_int, default=1, help="dimension (sinusoid, clutter)")
    p.add_argument("--r", type=float, default=0.5, help="clutter signal share")
    p.add_argument("--plugin", help="Python file defining DIMS and log_density (overrides --family)")
    p.add_argument("--samples-format", choices=("csv", "f64le"), default="csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="benchmark matrix")
    p.add_argument("--suite", choices=("peakiness", "scaling", "clutter", "all"), default="all")
    p.add_argument("--runs", type=_positive_int, default=5)
    p.add_argument("--dims", type=_dims_list, default=list(range(1, 8)),
                   help="comma-separated dimensions for the scaling suite")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", parents=[common], help="sampler-constant ablation on peakiness")
    p.add_argument("--a", type=float, default=20.0)
    p.add_argument("--constants", default=",".join(ABLATE_CONSTANTS))
    p.add_argument("--factors", default="0.5,2.0",
                   help="scalings; margins over 1 for c_low_inflate and gmm_growth")
    p.add_argument("--design", choices=("full", "oat"), default="full")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))     # exits with status 2
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
