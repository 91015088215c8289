"""Custom manifolds from JSON manifests.

Field entries are expression strings over the chart's coordinate names
using ``+ - * / ^``, parentheses, numeric literals, ``pi``, ``e`` and the
functions ``sin cos exp log``. Derivatives of manifest fields are taken by
central differences.

Manifest layout::

    {
      "name": "my_torus",
      "compact": true,
      "charts": [{"id": "U", "lower": [0, 0], "upper": [6.28, 6.28],
                  "periodic": [true, true], "coordinate_kind": "affine",
                  "coordinates": ["x", "y"]}],
      "transitions": [{"name": "t", "from": "U", "to": "U",
                       "matrix": [[1, 0], [0, 1]], "offset": [0, 0]}],
      "metric": {"U": [["1", "0"], ["0", "1"]]},
      "christoffel": {"U": [[["0", "0"], ["0", "0"]], [["0", "0"], ["0", "0"]]]},
      "cover": [{"chart": "U", "resolution": [200, 200], "orientation": 1}]
    }

``christoffel`` entries are indexed ``[k][i][j]`` for Gamma^k_ij.
"""

from __future__ import annotations

import ast
import json
import math
from pathlib import Path

import numpy as np

from affgeom.atlas.catalog import ChartedManifold
from affgeom.atlas.charts import Atlas, AtlasError, Chart, TransitionMap
from affgeom.atlas.cover import QuadraturePiece, QuadratureCover
from affgeom.connection import ChristoffelEval, ChristoffelField, MetricEval, MetricField

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log}
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExpressionError(ValueError):
    pass


def compile_expression(text: str, names):
    """Compile ``text`` into a function of x (..., n) with coordinate ``names``."""
    if not isinstance(text, str):
        text = repr(float(text))
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    index = {name: k for k, name in enumerate(names)}

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            value = float(node.value)
            return lambda x: np.full(x.shape[:-1], value)
        if isinstance(node, ast.Name):
            if node.id in index:
                k = index[node.id]
                return lambda x: x[..., k]
            if node.id in CONSTANTS:
                value = CONSTANTS[node.id]
                return lambda x: np.full(x.shape[:-1], value)
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            inner = build(node.operand)
            return inner if isinstance(node.op, ast.UAdd) else (lambda x: -inner(x))
        if isinstance(node, ast.BinOp):
            a, b = build(node.left), build(node.right)
            ops = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
                   ast.Div: np.divide, ast.Pow: np.power}
            op = ops.get(type(node.op))
            if op is None:
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {text!r}")
            return lambda x: op(a(x), b(x))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            fn = FUNCTIONS.get(node.func.id)
            if fn is None or len(node.args) != 1:
                raise ExpressionError(f"function {node.func.id!r} not allowed in {text!r}")
            arg = build(node.args[0])
            return lambda x: fn(arg(x))
        raise ExpressionError(f"unsupported syntax {type(node).__name__} in {text!r}")

    fn = build(tree)
    return lambda x: fn(np.asarray(x, dtype=float))


def _tensor_eval(entries, names, shape):
    arr = np.asarray(entries, dtype=object)
    if arr.shape != shape:
        raise AtlasError(f"expected a {shape} array of expressions, got shape {arr.shape}")
    fns = [compile_expression(str(e), names) for e in arr.ravel()]

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        return np.stack([f(x) for f in fns], axis=-1).reshape(x.shape[:-1] + shape)

    return evaluate, tuple(map(str, arr.ravel()))


def _nest(flat, shape):
    return np.array(flat, dtype=object).reshape(shape).tolist()


def manifold_from_dict(data: dict) -> ChartedManifold:
    charts = {}
    for c in data.get("charts", []):
        charts[c["id"]] = Chart(
            c["id"], tuple(c["lower"]), tuple(c["upper"]), tuple(c.get("periodic", ())),
            c.get("coordinate_kind", "general"), names=tuple(c.get("coordinates", ())),
        )
    if not charts:
        raise AtlasError("manifest defines no charts")
    transitions = {}
    for k, t in enumerate(data.get("transitions", [])):
        name = t.get("name", f"t{k}")
        overlap = None
        if "overlap" in t:
            lo, hi = np.asarray(t["overlap"]["lower"], float), np.asarray(t["overlap"]["upper"], float)
            overlap = lambda x, lo=lo, hi=hi: np.all((np.asarray(x) > lo) & (np.asarray(x) < hi), axis=-1)  # noqa: E731
        transitions[name] = TransitionMap.affine_map(name, t["from"], t["to"], t["matrix"], t["offset"], overlap)
    atlas = Atlas(data.get("name", "custom"), charts, transitions)
    n = atlas.dim

    metric = None
    if "metric" in data:
        evals = {}
        for cid, entries in data["metric"].items():
            g, exprs = _tensor_eval(entries, atlas.chart(cid).names, (n, n))
            evals[cid] = MetricEval(g=g, expressions=exprs)
        metric = MetricField(atlas, evals, label=data.get("metric_label", "g"))

    conn = None
    if "christoffel" in data:
        evals = {}
        for cid, entries in data["christoffel"].items():
            gam, exprs = _tensor_eval(entries, atlas.chart(cid).names, (n, n, n))
            zero = all(float(e) == 0.0 if _is_number(e) else False for e in exprs)
            evals[cid] = ChristoffelEval(gamma=gam, zero=zero, expressions=exprs)
        symmetric = data.get("symmetric", True)
        provenance = ("flat_affine",) if all(e.zero for e in evals.values()) and atlas.is_affine else ("custom",)
        conn = ChristoffelField(atlas, evals, symmetric, provenance)

    cover = None
    if data.get("cover"):
        pieces = []
        for p in data["cover"]:
            ch = atlas.chart(p["chart"])
            res = tuple(p.get("resolution", (200,) * n))
            pieces.append(QuadraturePiece(ch.id, ch.lower, ch.upper, res, orientation=int(p.get("orientation", 1))))
        cover = QuadratureCover(tuple(pieces))

    return ChartedManifold(
        key=atlas.name, atlas=atlas, cover=cover, affine=conn if conn is not None and conn.kind == "flat_affine" else None,
        metric=metric, local_metric=metric if conn is not None and conn.kind == "flat_affine" else None,
        compact=bool(data.get("compact", cover is not None)),
        euler_characteristic=data.get("euler_characteristic"),
        params={"manifest": True, "christoffel": conn},
    )


def _is_number(text) -> bool:
    try:
        float(text)
    except (TypeError, ValueError):
        return False
    return True


def load_manifest(path) -> ChartedManifold:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AtlasError(f"{path}: invalid JSON ({exc})") from None
    return manifold_from_dict(data)


def manifold_to_dict(manifold: ChartedManifold) -> dict:
    """Serialize charts, affine transitions and expression-backed fields.

    Raises ValueError when a field has no expression form (analytic
    callables cannot be written back).
    """
    atlas = manifold.atlas
    n = atlas.dim
    out = {
        "name": atlas.name,
        "compact": manifold.compact,
        "charts": [
            {"id": c.id, "lower": list(c.lower), "upper": list(c.upper), "periodic": list(c.periodic),
             "coordinate_kind": c.coordinate_kind, "coordinates": list(c.names)}
            for c in atlas.charts.values()
        ],
        "transitions": [],
    }
    for t in atlas.transitions.values():
        if t.matrix is None or t.offset is None:
            continue  # periodic wraps are implied by the periodic flags
        out["transitions"].append({"name": t.name, "from": t.source, "to": t.target,
                                   "matrix": t.matrix.tolist(), "offset": t.offset.tolist()})
    if manifold.metric is not None:
        out["metric"] = {}
        for cid, ev in manifold.metric.charts.items():
            if ev.expressions is None:
                raise ValueError(f"metric on chart {cid!r} has no expression form")
            out["metric"][cid] = _nest(np.ravel(np.array(ev.expressions, dtype=object)).tolist(), (n, n))
    conn = manifold.affine or manifold.params.get("christoffel")
    if conn is not None:
        out["christoffel"] = {}
        for cid, ev in conn.charts.items():
            if ev.expressions is None:
                raise ValueError(f"connection on chart {cid!r} has no expression form")
            out["christoffel"][cid] = _nest(np.ravel(np.array(ev.expressions, dtype=object)).tolist(), (n, n, n))
    if manifold.cover is not None:
        if any(p.to_chart is not None or p.weight is not None for p in manifold.cover.pieces):
            raise ValueError("only box-shaped, unweighted cover pieces can be serialized")
        out["cover"] = [{"chart": p.chart, "resolution": list(p.resolution), "orientation": p.orientation}
                        for p in manifold.cover.pieces]
    if manifold.euler_characteristic is not None:
        out["euler_characteristic"] = manifold.euler_characteristic
    return out


def dump_manifest(manifold: ChartedManifold, path) -> None:
    Path(path).write_text(json.dumps(manifold_to_dict(manifold), indent=2, sort_keys=True))
