"""Instance files, influence tables, reports and plot data.

Instance JSON layout::

    {"kind": "line" | "homography" | "triangulation",
     "eps": 0.3,
     "points": [...],
     "cameras": [[[...4], [...4], [...4]], ...],   # triangulation only
     "truth": {"x": [...], "labels": [true, false, ...]},
     "seed": 7,
     "provenance": {...}}

Points are ``[a, b]`` for lines, ``{"u": [x, y], "v": [x, y]}`` for
homographies and ``{"camera": j, "uv": [u, v]}`` for triangulation, where
``j`` indexes ``cameras``.  Floats are written with ``repr`` precision so a
round trip reproduces every value exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import IngestionError, SchemaError
from .geometry import HomogCorr, LinePoint, ModelKind, TriangObs
from .influence import normalize
from .pipeline import FitReport, Instance

_NUM = {"type": "number"}
_VEC2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_ROW4 = {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}
_CAMERA = {"type": "array", "items": _ROW4, "minItems": 3, "maxItems": 3}

_LINE_POINT = _VEC2
_HOMOG_POINT = {
    "type": "object",
    "properties": {"u": _VEC2, "v": _VEC2},
    "required": ["u", "v"],
    "additionalProperties": False,
}
_TRIANG_POINT = {
    "type": "object",
    "properties": {"camera": {"type": "integer", "minimum": 0}, "uv": _VEC2},
    "required": ["camera", "uv"],
    "additionalProperties": False,
}

INSTANCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "kind": {"enum": [k.value for k in ModelKind]},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "points": {"type": "array", "minItems": 1},
        "cameras": {"type": "array", "items": _CAMERA, "minItems": 1},
        "truth": {
            "type": "object",
            "properties": {
                "x": {"type": "array", "items": _NUM},
                "labels": {"type": "array", "items": {"type": "boolean"}},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer"},
        "provenance": {"type": "object"},
    },
    "required": ["kind", "eps", "points"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "line"}}},
         "then": {"properties": {"points": {"items": _LINE_POINT}}}},
        {"if": {"properties": {"kind": {"const": "homography"}}},
         "then": {"properties": {"points": {"items": _HOMOG_POINT}}}},
        {"if": {"properties": {"kind": {"const": "triangulation"}}},
         "then": {"properties": {"points": {"items": _TRIANG_POINT}}, "required": ["cameras"]}},
    ],
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "kind": {"enum": [k.value for k in ModelKind]},
        "eps": {"type": "number"},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "influences": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "normalized": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "inlier_mask": {"type": "array", "items": {"enum": [0, 1]}},
        "truth_labels": {"type": "array", "items": {"enum": [0, 1]}},
        "refit": {"type": "array", "items": _NUM},
        "consensus": {"type": "integer", "minimum": 0},
        "estimator": {
            "type": "object",
            "properties": {"method": {"enum": ["exact", "classical", "quantum"]}},
            "required": ["method"],
        },
        "timing": {"type": "object"},
    },
    "required": ["kind", "eps", "gamma", "influences", "normalized", "inlier_mask", "refit",
                 "consensus", "estimator"],
}


# ---------------------------------------------------------------------------
# error location


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos] in " \t\r\n":
        pos += 1
    return pos


def _locate(text: str, path) -> Optional[int]:
    """Character offset of the value at a JSON path, or None if not found."""
    dec = json.JSONDecoder()
    pos = _skip_ws(text, 0)
    for key in path:
        if pos >= len(text) or text[pos] not in "[{":
            return None
        is_obj = text[pos] == "{"
        pos = _skip_ws(text, pos + 1)
        i = 0
        while pos < len(text) and text[pos] not in "]}":
            if is_obj:
                name, pos = dec.raw_decode(text, pos)
                pos = _skip_ws(text, pos)
                pos = _skip_ws(text, pos + 1)  # the colon
                hit = name == key
            else:
                hit = i == key
            if hit:
                break
            _, pos = dec.raw_decode(text, pos)
            pos = _skip_ws(text, pos)
            if pos < len(text) and text[pos] == ",":
                pos = _skip_ws(text, pos + 1)
            i += 1
        else:
            return None
    return pos


def _line_of(text: str, path) -> Optional[int]:
    try:
        pos = _locate(text, list(path))
    except (json.JSONDecodeError, IndexError):
        return None
    return None if pos is None else text.count("\n", 0, pos) + 1


def _field_name(path) -> str:
    out = ""
    for key in path:
        out += f"[{key}]" if isinstance(key, int) else (f".{key}" if out else str(key))
    return out or "<root>"


def _missing_field(err) -> Optional[str]:
    if err.validator == "required":
        for name in err.validator_value:
            if isinstance(err.instance, dict) and name not in err.instance:
                return name
    return None


# ---------------------------------------------------------------------------
# instances


def _float_list(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def instance_to_dict(inst: Instance) -> dict:
    out = {"kind": inst.kind.value, "eps": float(inst.eps)}
    if inst.kind is ModelKind.LINE2D:
        out["points"] = [[p.a, p.b] for p in inst.points]
    elif inst.kind is ModelKind.HOMOGRAPHY:
        out["points"] = [{"u": list(p.u), "v": list(p.v)} for p in inst.points]
    else:
        cams, index, pts = [], {}, []
        for p in inst.points:
            key = p.P.tobytes()
            if key not in index:
                index[key] = len(cams)
                cams.append([_float_list(row) for row in p.P])
            pts.append({"camera": index[key], "uv": [p.u, p.v]})
        out["points"] = pts
        out["cameras"] = cams
    truth = {}
    if inst.truth_x is not None:
        truth["x"] = _float_list(inst.truth_x)
    if inst.truth_labels is not None:
        truth["labels"] = [bool(v) for v in inst.truth_labels]
    if truth:
        out["truth"] = truth
    if "seed" in inst.provenance:
        out["seed"] = int(inst.provenance["seed"])
    if inst.provenance:
        out["provenance"] = dict(inst.provenance)
    return out


def instance_from_dict(doc: dict, text: Optional[str] = None, source: Optional[str] = None) -> Instance:
    """Validate and convert a parsed instance document."""
    validator = jsonschema.Draft202012Validator(INSTANCE_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        missing = _missing_field(err)
        name = _field_name(path + [missing] if missing else path)
        line = _line_of(text, path) if text is not None else None
        msg = f"missing required field '{missing}'" if missing else err.message
        raise SchemaError(msg, field=name, line=line)

    kind = ModelKind(doc["kind"])
    pts = []
    for i, raw in enumerate(doc["points"]):
        try:
            if kind is ModelKind.LINE2D:
                pts.append(LinePoint(float(raw[0]), float(raw[1])))
            elif kind is ModelKind.HOMOGRAPHY:
                pts.append(HomogCorr(tuple(raw["u"]), tuple(raw["v"])))
            else:
                j = raw["camera"]
                if j >= len(doc["cameras"]):
                    raise SchemaError(f"camera index {j} out of range", field=f"points[{i}].camera",
                                      line=_line_of(text, ["points", i]) if text else None)
                pts.append(TriangObs(np.array(doc["cameras"][j], dtype=float), raw["uv"][0], raw["uv"][1]))
        except SchemaError:
            raise
        except IngestionError as exc:
            raise SchemaError(str(exc), field=f"points[{i}]",
                              line=_line_of(text, ["points", i]) if text else None) from None

    truth = doc.get("truth", {})
    labels = truth.get("labels")
    if labels is not None and len(labels) != len(pts):
        raise SchemaError(f"{len(labels)} labels for {len(pts)} points", field="truth.labels",
                          line=_line_of(text, ["truth", "labels"]) if text else None)
    x = truth.get("x")
    if x is not None and len(x) != kind.dim:
        raise SchemaError(f"model parameters need {kind.dim} entries, got {len(x)}", field="truth.x",
                          line=_line_of(text, ["truth", "x"]) if text else None)
    if "provenance" in doc:
        prov = dict(doc["provenance"])
    else:
        prov = {"source": "ingested", "path": source} if source else {"source": "ingested"}
        if "seed" in doc:
            prov["seed"] = doc["seed"]
    return Instance(kind, pts, float(doc["eps"]), truth_x=x, truth_labels=labels, provenance=prov)


def ingest(path) -> Instance:
    """Read an instance JSON file; schema problems raise SchemaError with field and line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return instance_from_dict(doc, text=text, source=str(path))


def dumps_instance(inst: Instance) -> str:
    doc = instance_to_dict(inst)
    # one point per line keeps files diff-friendly and error lines meaningful
    head = {k: v for k, v in doc.items() if k not in ("points", "cameras")}
    lines = ["{"]
    items = [f'  "{k}": {json.dumps(v, sort_keys=True)}' for k, v in head.items()]
    for key in ("cameras", "points"):
        if key in doc:
            body = ",\n".join(f"    {json.dumps(v, sort_keys=True)}" for v in doc[key])
            items.append(f'  "{key}": [\n{body}\n  ]')
    lines.append(",\n".join(items))
    lines.append("}")
    return "\n".join(lines) + "\n"


def emit_instance(inst: Instance, path) -> None:
    Path(path).write_text(dumps_instance(inst))


# ---------------------------------------------------------------------------
# influence tables, reports, plots


def write_influence_csv(path, alphas, gamma: float, truth_labels=None) -> None:
    """Columns index, alpha, alpha_norm, label_pred[, label_true]; labels are 1 for inliers."""
    alphas = np.asarray(alphas, dtype=float)
    norm = normalize(alphas)
    pred = norm <= gamma
    header = ["index", "alpha", "alpha_norm", "label_pred"]
    if truth_labels is not None:
        header.append("label_true")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(alphas.size):
            row = [i, repr(float(alphas[i])), repr(float(norm[i])), int(pred[i])]
            if truth_labels is not None:
                row.append(int(truth_labels[i]))
            w.writerow(row)


def read_influence_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {"index": np.array([int(r["index"]) for r in rows]),
           "alpha": np.array([float(r["alpha"]) for r in rows]),
           "alpha_norm": np.array([float(r["alpha_norm"]) for r in rows]),
           "label_pred": np.array([int(r["label_pred"]) for r in rows])}
    if rows and "label_true" in rows[0]:
        out["label_true"] = np.array([int(r["label_true"]) for r in rows])
    return out


def dumps_report(report, include_timing: bool = False) -> str:
    doc = report.to_dict(include_timing) if isinstance(report, FitReport) else dict(report)
    validate_report(doc)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, REPORT_SCHEMA, cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as exc:
        raise SchemaError(exc.message, field=_field_name(list(exc.absolute_path))) from None


def emit_report(report, path, include_timing: bool = False) -> None:
    Path(path).write_text(dumps_report(report, include_timing))


def load_report(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    validate_report(doc)
    return doc


_GNUPLOT = """\
# normalised influences in ascending order; threshold drawn at gamma
set datafile separator ","
set key off
set xlabel "rank"
set ylabel "normalised influence"
set yrange [0:1.05]
plot "{csv}" using 1:2 every ::1 with points pt 7, {gamma} with lines dt 2
"""


def write_plot_data(directory, normalized, gamma: float, stem: str = "influence") -> tuple:
    """Sorted (rank, normalised influence, point index) CSV plus a gnuplot stub.

    Returns the two paths written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    norm = np.asarray(normalized, dtype=float)
    order = np.argsort(norm, kind="stable")
    csv_path = directory / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "alpha_norm", "index"])
        for rank, i in enumerate(order):
            w.writerow([rank, repr(float(norm[i])), int(i)])
    gp_path = directory / f"{stem}.gp"
    gp_path.write_text(_GNUPLOT.format(csv=csv_path.name, gamma=repr(float(gamma))))
    return csv_path, gp_path
