"""JSON file formats for sites, domains, densities and solve results.

Reals are written with Python's shortest round-trip representation, so every
double reads back bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import ConvexPolygon
from .measure import SourceDensity
from .potential import TransportModel, make_model
from .solver import SolverConfig, SolverReport

RESULT_FORMAT = "sdot-result/1"
DEFAULT_SEGMENTS = 256


class InputFileError(InvalidInputError):
    """Malformed input file, with the location of the problem when known."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None,
                 field: Optional[str] = None):
        super().__init__(message)
        self.path = path
        self.line = line
        self.field = field

    def to_dict(self) -> dict:
        out = {"type": "input", "message": str(self)}
        for key in ("path", "line", "field"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def read_json(source: str, what: str) -> Any:
    """Parse a JSON file, or an inline JSON object when ``source`` starts with ``{``."""
    text = source
    path = None
    if not source.lstrip().startswith("{"):
        path = source
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputFileError(f"cannot read {what} file: {exc.strerror}", path=source) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputFileError(f"{what}: {exc.msg}", path=path, line=exc.lineno) from None


def source_path(source: Optional[str]) -> Optional[str]:
    """File path of a ``read_json`` source, or None for inline JSON."""
    if source is None or source.lstrip().startswith("{"):
        return None
    return source


def file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _array(obj, key, what, shape_tail=None, path=None):
    if key not in obj:
        raise InputFileError(f"{what} is missing '{key}'", path=path, field=key)
    try:
        arr = np.array(obj[key], dtype=float)
    except (TypeError, ValueError):
        raise InputFileError(f"{what} field '{key}' must hold numbers", path=path, field=key) from None
    if shape_tail is not None and (arr.ndim != 1 + len(shape_tail)
                                   or (shape_tail and arr.shape[1:] != shape_tail)):
        raise InputFileError(f"{what} field '{key}' has the wrong shape", path=path, field=key)
    if not np.all(np.isfinite(arr)):
        raise InputFileError(f"{what} field '{key}' must be finite", path=path, field=key)
    return arr


def parse_sites(obj, path=None):
    """``{"points": [[x, y], ...], "masses": [...], "decoder": [[...], ...]}``.

    ``masses`` and ``decoder`` are optional; missing masses mean equal masses.
    """
    if not isinstance(obj, dict):
        raise InputFileError("sites file must hold an object", path=path)
    pts = _array(obj, "points", "sites", None, path)
    if pts.ndim != 2 or len(pts) == 0:
        raise InputFileError("sites field 'points' must be a nonempty list of points",
                             path=path, field="points")
    masses = None
    if obj.get("masses") is not None:
        masses = _array(obj, "masses", "sites", (), path)
        if masses.shape != (len(pts),):
            raise InputFileError("need one mass per point", path=path, field="masses")
        if np.any(masses <= 0):
            raise InputFileError("masses must be positive", path=path, field="masses")
    decoder = None
    if obj.get("decoder") is not None:
        decoder = _array(obj, "decoder", "sites", None, path)
        if decoder.ndim != 2 or len(decoder) != len(pts):
            raise InputFileError("decoder needs one row per point", path=path, field="decoder")
    return pts, masses, decoder


def parse_domain(obj, segments: Optional[int] = None, path=None):
    """Domain polygon and a normalized description of what was asked for.

    Accepts ``{"polygon": [...]}``, ``{"square": [xmin, ymin, xmax, ymax]}`` or
    ``{"disk": {"center": [x, y], "radius": r, "segments": 256}}``.
    """
    if not isinstance(obj, dict):
        raise InputFileError("domain must be an object", path=path)
    try:
        if "polygon" in obj:
            v = _array(obj, "polygon", "domain", (2,), path)
            if len(v) >= 3 and _shoelace(v) < 0:
                v = v[::-1]
            return ConvexPolygon(v), {"polygon": v.tolist()}
        if "square" in obj:
            box = _array(obj, "square", "domain", (), path)
            if box.shape != (4,) or not (box[2] > box[0] and box[3] > box[1]):
                raise InputFileError("square must be [xmin, ymin, xmax, ymax]", path=path,
                                     field="square")
            return ConvexPolygon.square(*box), {"square": box.tolist()}
        if "disk" in obj:
            d = obj["disk"]
            if not isinstance(d, dict):
                raise InputFileError("disk must be an object", path=path, field="disk")
            center = _array(d, "center", "disk", (), path)
            if center.shape != (2,):
                raise InputFileError("disk center must be a point", path=path, field="disk.center")
            if not isinstance(d.get("radius"), (int, float)):
                raise InputFileError("disk radius must be a number", path=path, field="disk.radius")
            seg = int(segments if segments is not None else d.get("segments", DEFAULT_SEGMENTS))
            desc = {"disk": {"center": center.tolist(), "radius": float(d["radius"]),
                             "segments": seg}}
            return ConvexPolygon.disk(center, float(d["radius"]), seg), desc
    except InputFileError:
        raise
    except InvalidInputError as exc:
        raise InputFileError(f"invalid domain: {exc}", path=path) from None
    raise InputFileError("domain needs one of 'polygon', 'square', 'disk'", path=path)


def _shoelace(v):
    x, y = v[:, 0], v[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def parse_density(obj, domain: ConvexPolygon, path=None) -> SourceDensity:
    """``"uniform"``, ``{"uniform": {"total_mass": m}}`` or
    ``{"piecewise": {"triangles": [[[x, y], [x, y], [x, y]], ...], "values": [...]}}``."""
    try:
        if obj is None or obj == "uniform":
            return SourceDensity.uniform(domain)
        if isinstance(obj, dict) and "uniform" in obj:
            spec = obj["uniform"] or {}
            return SourceDensity.uniform(domain, float(spec.get("total_mass", 1.0)))
        if isinstance(obj, dict) and "piecewise" in obj:
            spec = obj["piecewise"]
            tris = _array(spec, "triangles", "density", (3, 2), path)
            vals = _array(spec, "values", "density", (), path)
            return SourceDensity.piecewise(domain, tris, vals)
    except InputFileError:
        raise
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise InputFileError(f"invalid density: {exc}", path=path) from None
    raise InputFileError("density needs 'uniform' or 'piecewise'", path=path)


def density_to_json(density: SourceDensity):
    if density.is_uniform:
        return {"uniform": {"total_mass": density.total_mass}}
    return {"piecewise": {"triangles": density.triangles.tolist(),
                          "values": density.values.tolist()}}


def _report_to_json(report: SolverReport) -> dict:
    return {
        "iterations": report.iterations,
        "converged": report.converged,
        "message": report.message,
        "gradient_norms": list(report.gradient_norms),
        "energies": list(report.energies),
        "step_sizes": list(report.step_sizes),
        "heights_trace": [list(map(float, h)) for h in report.heights_trace],
    }


def _report_from_json(obj) -> SolverReport:
    return SolverReport(
        iterations=int(obj["iterations"]),
        gradient_norms=[float(x) for x in obj["gradient_norms"]],
        energies=[float(x) for x in obj["energies"]],
        step_sizes=[float(x) for x in obj["step_sizes"]],
        heights_trace=[np.array(h, dtype=float) for h in obj["heights_trace"]],
        converged=bool(obj["converged"]),
        message=str(obj.get("message", "")),
    )


def result_to_json(model: TransportModel, config: SolverConfig,
                   decoder: Optional[np.ndarray] = None,
                   domain_request: Optional[dict] = None) -> dict:
    """Everything needed to rebuild ``model`` plus the derived diagram data."""
    D = model.diagram
    cells = []
    for c in D.cells:
        verts = [] if c.polygon is None else c.polygon.vertices.tolist()
        cells.append({"index": c.site_index, "vertices": verts, "measure": c.measure})
    sites = {"points": model.points.tolist(), "masses": model.masses.tolist()}
    if decoder is not None:
        sites["decoder"] = np.asarray(decoder, float).tolist()
    out = {
        "format": RESULT_FORMAT,
        "sites": sites,
        "domain": {"polygon": model.density.domain.vertices.tolist()},
        "density": density_to_json(model.density),
        "heights": model.heights.tolist(),
        "weights": model.weights.tolist(),
        "cells": cells,
        "dual_edges": [{"i": e.i, "j": e.j, "face_measure": e.face_measure,
                        "site_distance": e.site_distance} for e in D.dual_edges],
        "solver_config": {
            "tol_gradient_inf": config.tol_gradient_inf,
            "max_iterations": config.max_iterations,
            "line_search_shrink": config.line_search_shrink,
            "min_cell_fraction": config.min_cell_fraction,
            "regularization_eps": config.regularization_eps,
        },
        "report": _report_to_json(model.report) if model.report is not None else None,
        "transport_cost": model.transport_cost,
        "wasserstein": model.wasserstein,
    }
    if domain_request is not None:
        out["domain_request"] = domain_request
    return out


def load_result(obj, path=None):
    """Rebuild ``(model, config, decoder)`` from a result object."""
    if not isinstance(obj, dict) or obj.get("format") != RESULT_FORMAT:
        raise InputFileError(f"not a {RESULT_FORMAT} file", path=path, field="format")
    try:
        pts, masses, decoder = parse_sites(obj["sites"], path)
        domain, _ = parse_domain(obj["domain"], path=path)
        density = parse_density(obj["density"], domain, path)
        heights = _array(obj, "heights", "result", (), path)
        config = SolverConfig(**obj["solver_config"])
        report = _report_from_json(obj["report"]) if obj.get("report") else None
    except KeyError as exc:
        raise InputFileError(f"result is missing {exc}", path=path, field=str(exc.args[0])) from None
    if masses is None:
        masses = np.full(len(pts), density.total_mass / len(pts))
    converged = bool(report.converged) if report is not None else False
    model = make_model(pts, masses, heights, density, converged, report)
    return model, config, decoder


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the target directory and rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
