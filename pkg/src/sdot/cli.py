"""Command-line front-end.

Subcommands
-----------
solve        solve the transport from a density on a polygon to weighted sites
generate     draw samples from a solved model (CSV, one point per row)
wasserstein  print the transport values of a solved model, or solve and print
validate     re-run oracle checks on a result file
render       draw a result as SVG

Every output file ``OUT`` gets a sidecar ``OUT.manifest.json`` recording the
command, its parameters, the seed, input digests, tool version and wall time.
The output itself carries no timing data, so reruns are byte-identical.

Exit status: 0 success, 1 check failure, 2 input error, 3 solver
non-convergence.  Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import json
import sys
import time
from importlib import metadata
from typing import Optional

import numpy as np

from . import checks as _checks
from .errors import InvalidInputError, SdotError
from .genmodel import GenerativeModel, LatentEmbedding, generate
from .io import (InputFileError, dumps, file_digest, load_result, parse_density, parse_domain,
                 parse_sites, read_json, result_to_json, source_path, write_atomic)
from .potential import solve_transport
from .render import render_diagram, render_potential
from .solver import SolverConfig

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3

CHECKS = ("gradient", "hessian", "dualgap", "montecarlo", "lp")


class SolverFailure(Exception):
    """Solve finished without meeting the tolerance; the result is still written."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _digest(source: Optional[str]) -> Optional[str]:
    if source is None:
        return None
    if source.lstrip().startswith("{"):
        return hashlib.sha256(source.encode()).hexdigest()
    try:
        return file_digest(source)
    except OSError:
        return None


def _manifest(args, inputs: dict, wall_time: float) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    return {
        "command": args.command,
        "parameters": params,
        "seed": getattr(args, "seed", None),
        "inputs": {k: _digest(v) for k, v in inputs.items() if v is not None},
        "version": tool_version(),
        "wall_time": wall_time,
    }


def _emit(args, text: str, inputs: dict, t0: float) -> None:
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
        return
    write_atomic(args.out, text)
    write_atomic(args.out + ".manifest.json",
                 dumps(_manifest(args, inputs, time.perf_counter() - t0)))


def _config(args) -> SolverConfig:
    kw = {}
    if args.tol is not None:
        kw["tol_gradient_inf"] = args.tol
    if args.max_iter is not None:
        kw["max_iterations"] = args.max_iter
    try:
        return SolverConfig(**kw)
    except InvalidInputError as exc:
        raise InputFileError(str(exc), field="--tol/--max-iter") from None


def _solve_from_args(args):
    if args.sites is None or args.domain is None:
        raise InputFileError("--sites and --domain are required", field="--sites/--domain")
    pts, masses, decoder = parse_sites(read_json(args.sites, "sites"), source_path(args.sites))
    domain, request = parse_domain(read_json(args.domain, "domain"), args.segments,
                                   source_path(args.domain))
    dens_obj = read_json(args.density, "density") if args.density not in (None, "uniform") else None
    density = parse_density(dens_obj, domain, source_path(args.density))
    if masses is None:
        masses = np.full(len(pts), density.total_mass / len(pts))
    model = solve_transport(pts, masses, density, _config(args))
    return model, decoder, request


def _load_model(args):
    if args.model is None:
        raise InputFileError("--model is required", field="--model")
    return load_result(read_json(args.model, "result"), source_path(args.model))


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    model, decoder, request = _solve_from_args(args)
    cfg = _config(args)
    text = dumps(result_to_json(model, cfg, decoder, request))
    _emit(args, text, {"sites": args.sites, "domain": args.domain, "density": args.density}, t0)
    if not model.converged:
        raise SolverFailure(model.report.message if model.report else "not converged")
    return EXIT_OK


def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    model, _, decoder = _load_model(args)
    n = 0 if args.n is None else args.n
    if n < 0:
        raise InputFileError("--n must be nonnegative", field="--n")
    gm = GenerativeModel(LatentEmbedding(model.points, decoder), model.density, model)
    samples = generate(gm, n, args.seed)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(gm.decode([0]).shape[1])])
    for row in samples:
        w.writerow([repr(float(v)) for v in row])
    _emit(args, buf.getvalue(), {"model": args.model}, t0)
    return EXIT_OK


def cmd_wasserstein(args) -> int:
    t0 = time.perf_counter()
    if args.model is not None:
        model, _, _ = _load_model(args)
        inputs = {"model": args.model}
    else:
        model, _, _ = _solve_from_args(args)
        inputs = {"sites": args.sites, "domain": args.domain, "density": args.density}
    if not model.converged:
        raise SolverFailure("model is not converged; no Wasserstein value")
    out = {"wasserstein": model.wasserstein, "transport_cost": model.transport_cost,
           "sites": len(model.points)}
    _emit(args, dumps(out), inputs, t0)
    return EXIT_OK


def parse_checks(requested: Optional[str]):
    if requested is None or requested == "all":
        return list(CHECKS)
    names = [s.strip() for s in requested.split(",") if s.strip()]
    bad = [s for s in names if s not in CHECKS]
    if bad or not names:
        raise InputFileError(f"unknown checks {bad}; choose from {', '.join(CHECKS)}",
                             field="--checks")
    return names


def run_checks(model, config, names, n=None, seed=0):
    """Run the named checks and return their results in request order."""
    out = []
    for name in names:
        if name == "gradient":
            out.append(_checks.check_gradient(model, config))
        elif name == "hessian":
            out.append(_checks.check_hessian(model))
        elif name == "dualgap":
            out.append(_checks.check_dualgap(model))
        elif name == "montecarlo":
            out.append(_checks.check_montecarlo(model, 100_000 if n is None else n, seed))
        elif name == "lp":
            out.append(_checks.check_lp(model))
    return out


def cmd_validate(args) -> int:
    t0 = time.perf_counter()
    names = parse_checks(args.checks)
    model, config, _ = _load_model(args)
    if args.tol is not None:
        config = _config(args)
    results = run_checks(model, config, names, args.n, args.seed)
    passed = all(r.passed for r in results)
    report = {"passed": passed, "checks": [r.to_json() for r in results]}
    _emit(args, dumps(report), {"model": args.model}, t0)
    return EXIT_OK if passed else EXIT_CHECK


def cmd_render(args) -> int:
    t0 = time.perf_counter()
    model, _, _ = _load_model(args)
    if model.points.shape[1] != 2:
        raise InputFileError("only planar results can be drawn", field="sites")
    svg = render_diagram(model) if args.mode == "diagram" else render_potential(model)
    _emit(args, svg, {"model": args.model}, t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdot", description="Semi-discrete optimal transport.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, solve=False, model=False):
        sp.add_argument("--out", help="output file (stdout when omitted or '-')")
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        if solve:
            sp.add_argument("--sites", help="sites JSON file or inline object")
            sp.add_argument("--domain", help="domain JSON file or inline object")
            sp.add_argument("--density", default="uniform",
                            help="'uniform' (default) or a density JSON file/object")
            sp.add_argument("--segments", type=int, default=None,
                            help="polygon vertex count for disk domains (default 256)")
            sp.add_argument("--tol", type=float, default=None,
                            help="gradient infinity-norm tolerance (default 1e-7)")
            sp.add_argument("--max-iter", type=int, default=None,
                            help="Newton iteration cap (default 100)")
        if model:
            sp.add_argument("--model", help="result file written by 'solve'")

    s = sub.add_parser("solve", help="solve a transport problem")
    common(s, solve=True)
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("generate", help="sample from a solved model as CSV")
    common(g, model=True)
    g.add_argument("--n", type=int, default=0, help="number of samples")
    g.set_defaults(func=cmd_generate)

    w = sub.add_parser("wasserstein", help="report transport values")
    common(w, solve=True, model=True)
    w.set_defaults(func=cmd_wasserstein)

    v = sub.add_parser("validate", help="run oracle checks on a result")
    common(v, model=True)
    v.add_argument("--checks", default="all",
                   help="comma list of " + ",".join(CHECKS) + " or 'all'")
    v.add_argument("--n", type=int, default=None, help="Monte Carlo sample count (default 1e5)")
    v.add_argument("--tol", type=float, default=None, help="override the stored gradient tolerance")
    v.add_argument("--max-iter", type=int, default=None, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("render", help="draw a result as SVG")
    common(r, model=True)
    r.add_argument("--mode", choices=("diagram", "potential"), default="diagram")
    r.set_defaults(func=cmd_render)
    return p


def _error(kind: str, message: str, **extra) -> None:
    obj = {"error": {"type": kind, "message": message, **extra}}
    sys.stderr.write(json.dumps(obj) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputFileError as exc:
        sys.stderr.write(json.dumps({"error": exc.to_dict()}) + "\n")
        return EXIT_INPUT
    except InvalidInputError as exc:
        _error("input", str(exc))
        return EXIT_INPUT
    except SolverFailure as exc:
        _error("solver", str(exc))
        return EXIT_SOLVER
    except SdotError as exc:
        _error("solver", str(exc))
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
