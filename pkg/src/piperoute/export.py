"""Path serialisation: full NURBS JSON, sampled CSV polyline, OBJ-style line file."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import NurbsPath, sample_by_arclength

PATH_SCHEMA = "piperoute-path/1"
FORMATS = ("json", "csv", "obj")


def _num(x: float) -> str:
    return repr(float(x))


def path_to_dict(path: NurbsPath, meta: dict | None = None, dl: float = 5.0) -> dict:
    lo, hi = path.domain
    doc = {
        "schema": PATH_SCHEMA,
        "degree": path.degree,
        "end_mode": path.end_mode,
        "knots": [float(k) for k in path.knots],
        "control_points": [[float(v) for v in p] for p in path.control_points],
        "weights": [float(w) for w in path.weights],
        "dl": float(dl),
        "polyline": [[float(v) for v in p] for p in sample_by_arclength(path, lo, hi, dl)],
    }
    if meta:
        doc["meta"] = meta
    return doc


def path_from_dict(doc: dict) -> NurbsPath:
    if doc.get("schema") != PATH_SCHEMA:
        raise ValueError(f"unsupported path schema {doc.get('schema')!r}")
    P = np.array(doc["control_points"], dtype=float)
    w = np.array(doc["weights"], dtype=float)
    path = NurbsPath.build(P, w, int(doc["degree"]), doc["end_mode"])
    if not np.array_equal(path.knots, np.array(doc["knots"], dtype=float)):
        raise ValueError("stored knot vector does not match degree and end mode")
    return path


def path_to_json(path: NurbsPath, meta: dict | None = None, dl: float = 5.0) -> str:
    return json.dumps(path_to_dict(path, meta, dl), indent=1, sort_keys=True) + "\n"


def load_path(file) -> tuple[NurbsPath, dict]:
    file = Path(file)
    if not file.is_file():
        raise FileNotFoundError(f"path file not found: {file}")
    doc = json.loads(file.read_text())
    return path_from_dict(doc), doc.get("meta", {})


def path_to_csv(path: NurbsPath, dl: float = 5.0, header: str | None = None) -> str:
    lo, hi = path.domain
    pts = sample_by_arclength(path, lo, hi, dl)
    lines = [f"# {header}"] if header else []
    lines.append("x,y,z")
    lines += [",".join(_num(v) for v in p) for p in pts]
    return "\n".join(lines) + "\n"


def path_to_obj(path: NurbsPath, dl: float = 5.0, header: str | None = None) -> str:
    """Vertices ``v x y z`` followed by a single ``l`` polyline element (1-based)."""
    lo, hi = path.domain
    pts = sample_by_arclength(path, lo, hi, dl)
    lines = [f"# {header}"] if header else []
    lines += ["v " + " ".join(_num(v) for v in p) for p in pts]
    lines.append("l " + " ".join(str(i + 1) for i in range(len(pts))))
    return "\n".join(lines) + "\n"


def render_path(path: NurbsPath, fmt: str, dl: float = 5.0, meta: dict | None = None) -> str:
    header = None
    if meta:
        header = " ".join(f"{k}={meta[k]}" for k in sorted(meta))
    if fmt == "json":
        return path_to_json(path, meta, dl)
    if fmt == "csv":
        return path_to_csv(path, dl, header)
    if fmt == "obj":
        return path_to_obj(path, dl, header)
    raise ValueError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")


def export_path(path: NurbsPath, fmt: str, out, dl: float = 5.0, meta: dict | None = None) -> Path:
    text = render_path(path, fmt, dl, meta)
    out = Path(out)
    out.write_text(text)
    return out
