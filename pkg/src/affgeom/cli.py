"""Command-line experiment runner.

    affgeom list [FILTER]
    affgeom run EXPERIMENT --manifold KEY|PATH --out REPORT.json [options]

Exit status: 0 when every assertion of the experiment passes, 2 when one
fails, 1 on any execution error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from affgeom import euler, transport
from affgeom.atlas import AtlasError, builtin_manifold, list_catalog, load_manifest
from affgeom.connection import levi_civita

SCHEMA_VERSION = 1
EXPERIMENTS = ("gauss_bonnet", "deformation", "holonomy", "geodesic_probe", "frame_build", "holonomy_map")

DEFAULTS = {
    "gauss_bonnet": {"tol": 1e-3},
    "deformation": {"tol": 2e-3, "t_grid": list(euler.DEFAULT_T_GRID)},
    "holonomy": {"tol": 1e-6, "theta": math.pi / 3, "loops": 10},
    "geodesic_probe": {"tol": 1e-5},
    "frame_build": {"tol": 1e-6, "loops": 100},
    "holonomy_map": {"tol": 1e-6, "t": 0.5, "loops": 8},
}
COMMON = {"seed": 0, "integration_tol": transport.DEFAULT_RTOL, "grid": None, "expected": None,
          "horizon": None, "start": None, "velocity": None}


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def load_manifold(ref: str):
    if ref.endswith(".json") or os.path.sep in ref:
        if not os.path.exists(ref):
            raise AtlasError(f"manifest {ref!r} does not exist")
        return load_manifest(ref)
    return builtin_manifold(ref)


def _cover(manifold, cfg):
    if cfg["grid"] is None or manifold.cover is None:
        return manifold.cover
    grid = [int(g) for g in cfg["grid"]]
    if any(g < 2 for g in grid):
        raise ValueError("grid needs at least 2 cells per axis")
    return manifold.cover.with_resolution(grid)


def _connection(manifold):
    """Flat structure with its local metric if present, else Levi-Civita of the metric."""
    if manifold.affine is not None:
        return manifold.affine, manifold.local_metric or manifold.metric
    if manifold.metric is None:
        raise ValueError(f"{manifold.key!r} carries neither an affine structure nor a metric")
    return levi_civita(manifold.metric), manifold.metric


def _base_point(manifold):
    if manifold.deck is not None:
        p = np.zeros(manifold.dim)
        p[0] = 1.0
        return manifold.base_chart, p
    chart = manifold.chart(manifold.base_chart)
    return chart.id, 0.5 * (np.array(chart.lower) + np.array(chart.upper))


# --------------------------------------------------------------------------
# experiments; each returns (results dict, passed)


def run_gauss_bonnet(m, cfg, csv_path):
    expected = cfg["expected"] if cfg["expected"] is not None else m.euler_characteristic
    if m.dim % 2:
        res = {"integral": 0.0, "expected": expected,
               "note": "odd dimension: the Euler characteristic of a closed odd-dimensional manifold is 0"}
        return res, expected is None or abs(expected) <= cfg["tol"]
    cover = _cover(m, cfg)
    conn, metric = _connection(m)
    value = euler.integrate_form(m, euler.euler_density(conn, metric), cover)
    res = {"integral": value, "expected": expected, "connection": conn.kind,
           "grid": cover.resolution}
    if csv_path:
        _write_euler_samples(m, conn, metric, cover, csv_path)
    if expected is None:
        return res, True
    res["error"] = abs(value - expected)
    return res, res["error"] <= cfg["tol"]


def _write_euler_samples(m, conn, metric, cover, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chart"] + list(m.chart(cover.pieces[0].chart).names) + ["euler_density"])
        for piece in cover.pieces:
            u, _ = piece.nodes()
            x = piece.chart_points(u)
            vals = euler.euler_form_at(conn, metric, piece.chart, x).value
            for xi, vi in zip(x, vals):
                w.writerow([piece.chart] + [repr(float(a)) for a in xi] + [repr(float(vi))])


def run_deformation(m, cfg, csv_path):
    if m.dim % 2:
        return {"integrals": [], "note": "odd dimension: Euler class is 0"}, True
    g = m.metric or m.local_metric
    h = m.alternate_metric
    if g is None or h is None:
        raise ValueError(f"{m.key!r} needs two global metrics for the deformation experiment")
    rep = euler.euler_characteristic_experiment(m, g, h, cfg["t_grid"], _cover(m, cfg))
    expected = cfg["expected"] if cfg["expected"] is not None else m.euler_characteristic
    res = rep.summary()
    res["expected"] = expected
    res["tolerances"] = {"max_deviation": cfg["tol"], "entry": cfg["tol"]}
    ok = rep.max_deviation <= cfg["tol"]
    if expected is not None:
        res["max_error"] = max(abs(v - expected) for v in rep.integrals)
        ok = ok and res["max_error"] <= cfg["tol"]
    return res, ok


def run_holonomy(m, cfg, csv_path):
    conn, metric = _connection(m)
    tol_int = cfg["integration_tol"]
    if m.deck is not None:
        H = transport.holonomy(conn, transport.hopf_core_loop(m), tol_int)
        expected = np.eye(m.dim) / m.deck.scale
        err = float(np.max(np.abs(H.matrix - expected)))
        return {"loop": "hopf_core", "matrix": H.matrix, "expected": expected, "error": err}, err <= cfg["tol"]
    if m.embedding is not None and m.dim == 2 and conn.kind == "levi_civita":
        theta = float(cfg["theta"])
        H = transport.holonomy(conn, transport.latitude_loop(theta, m.base_chart), tol_int)
        angle = 2 * math.pi * (1 - math.cos(theta))
        L = np.linalg.cholesky(metric.g(H.base[0], H.base[1]))
        R = L.T @ H.matrix @ np.linalg.inv(L.T)
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        err = float(np.max(np.abs(R - rot)))
        return {"loop": "latitude", "theta": theta, "matrix": H.matrix, "expected_angle": angle,
                "measured_angle": H.rotation_angle(metric), "error": err}, err <= cfg["tol"]
    cid, p = _base_point(m)
    loops = transport.random_loops(cid, p, int(cfg["loops"]), cfg["seed"], max_size=_loop_size(m, cid, p))
    defects = [transport.holonomy(conn, lp, tol_int).distance_to_identity() for lp in loops]
    res = {"loop": "random", "count": len(loops), "max_distance_to_identity": max(defects)}
    if conn.kind != "flat_affine":
        return res, True
    return res, max(defects) <= cfg["tol"]


def _loop_size(m, cid, p):
    chart = m.chart(cid)
    room = [min(p[k] - chart.lower[k], chart.upper[k] - p[k]) for k in range(chart.dim) if not chart.periodic[k]]
    periods = [chart.upper[k] - chart.lower[k] for k in range(chart.dim) if chart.periodic[k]]
    return 0.9 * min(room + [0.25 * q for q in periods] + [1.0])


def run_geodesic_probe(m, cfg, csv_path):
    conn, _ = _connection(m)
    rng = np.random.default_rng(cfg["seed"])
    cid = m.base_chart
    chart = m.chart(cid)
    if cfg["start"] is not None:
        x0 = np.array(cfg["start"], dtype=float)
    elif m.deck is not None:
        x0 = np.zeros(m.dim)
        x0[0] = 1.0
    elif m.embedding is not None:
        x0 = np.array([math.pi / 2, 0.0])
    else:
        x0 = chart.sample(rng, 1)[0]
    if cfg["velocity"] is not None:
        v0 = np.array(cfg["velocity"], dtype=float)
    elif m.deck is not None:
        v0 = -x0 / np.linalg.norm(x0)
    elif m.embedding is not None:
        v0 = np.array([0.0, 1.0])
    else:
        v0 = rng.normal(size=m.dim)
        v0 /= np.linalg.norm(v0)
    horizon = cfg["horizon"]
    if horizon is None:
        horizon = 2 * math.pi if m.embedding is not None else (10.0 if m.deck is not None else 1e4)
    rec = transport.geodesic_integrate(conn, (cid, x0), v0, float(horizon), tol=cfg["integration_tol"])
    if csv_path:
        rec.to_csv(csv_path)
    res = rec.summary()
    res.update({"start": x0, "initial_velocity": v0})
    residual_ok = rec.residual_max <= 10 * cfg["integration_tol"]
    res["residual_ok"] = residual_ok
    default_hopf = m.deck is not None and cfg["velocity"] is None and cfg["start"] is None
    if default_hopf or cfg["expected"] is not None:
        expected = cfg["expected"] if cfg["expected"] is not None else float(np.linalg.norm(x0) / np.linalg.norm(v0))
        res["expected_escape"] = expected
        if rec.status != transport.ESCAPED:
            return res, False
        res["relative_error"] = abs(rec.escape_parameter - expected) / abs(expected)
        return res, res["relative_error"] <= cfg["tol"] and residual_ok
    if m.embedding is not None and cfg["start"] is None and cfg["velocity"] is None:
        gap = float(np.max(np.abs(chart.displacement(rec.coords[-1], x0))))
        res["return_gap"] = gap
        return res, rec.status == transport.COMPLETED and gap <= cfg["tol"] and residual_ok
    return res, rec.status == transport.COMPLETED and residual_ok


def run_frame_build(m, cfg, csv_path):
    if m.affine is None:
        raise ValueError(f"{m.key!r} has no flat affine structure")
    cid, p = _base_point(m)
    loops = transport.random_loops(cid, p, int(cfg["loops"]), cfg["seed"], max_size=_loop_size(m, cid, p))
    if m.deck is not None:
        loops = [transport.hopf_core_loop(m, p)] + loops
    rep = transport.build_parallel_frame(m.affine, (cid, p), np.eye(m.dim), loops, seed=cfg["seed"],
                                         tol=cfg["integration_tol"], certify=cfg["tol"])
    res = rep.summary()
    expect = m.deck is None
    res["expected_certified"] = expect
    ok = rep.certified == expect
    if rep.certified:
        ok = ok and rep.coefficient_drift is not None and rep.coefficient_drift <= 1e-8
    return res, ok


def run_holonomy_map(m, cfg, csv_path):
    if m.affine is None or m.alternate_metric is None:
        raise ValueError(f"{m.key!r} needs a flat structure and a second metric")
    d = levi_civita(m.alternate_metric)
    cid, p = _base_point(m)
    loops = transport.random_loops(cid, p, int(cfg["loops"]), cfg["seed"], max_size=_loop_size(m, cid, p))
    loops.append(loops[0].reparametrized(lambda u: u * u, lambda u: 2 * u))
    rep = transport.holonomy_map_experiment(m.affine, d, cfg["t"], loops, cfg["integration_tol"])
    res = rep.summary()
    worst = max(rep.well_defined_defect, rep.injectivity_defect, rep.homomorphism_defect_dt,
                rep.homomorphism_defect_d)
    return res, worst <= cfg["tol"]


RUNNERS = {
    "gauss_bonnet": run_gauss_bonnet,
    "deformation": run_deformation,
    "holonomy": run_holonomy,
    "geodesic_probe": run_geodesic_probe,
    "frame_build": run_frame_build,
    "holonomy_map": run_holonomy_map,
}


def effective_config(args) -> dict:
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[args.experiment])
    if args.config:
        with open(args.config) as fh:
            extra = json.load(fh)
        unknown = set(extra) - set(cfg)
        if unknown:
            raise ValueError(f"unknown configuration keys {sorted(unknown)}")
        cfg.update(extra)
    for key in ("tol", "seed", "horizon", "expected", "theta", "loops", "t"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.grid is not None:
        cfg["grid"] = args.grid
    if args.t_grid is not None:
        cfg["t_grid"] = _floats(args.t_grid)
    if args.integration_tol is not None:
        cfg["integration_tol"] = args.integration_tol
    if args.start is not None:
        cfg["start"] = _floats(args.start)
    if args.velocity is not None:
        cfg["velocity"] = _floats(args.velocity)
    for key in ("tol", "integration_tol"):
        if not cfg[key] > 0:
            raise ValueError(f"{key} must be positive")
    if cfg["horizon"] is not None and not cfg["horizon"] > 0:
        raise ValueError("horizon must be positive")
    return cfg


def run(args) -> int:
    cfg = effective_config(args)
    m = load_manifold(args.manifold)
    results, passed = RUNNERS[args.experiment](m, cfg, args.csv)
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": args.experiment,
        "manifold": args.manifold,
        "dimension": m.dim,
        "config": cfg,
        "results": results,
        "passed": bool(passed),
    }
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    with open(args.out, "w") as fh:
        fh.write(text)
    print(f"{args.experiment} on {args.manifold}: {'passed' if passed else 'FAILED'} -> {args.out}")
    return 0 if passed else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affgeom", description="Affine-geometry experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    ls = sub.add_parser("list", help="show the built-in manifold catalog")
    ls.add_argument("filter", nargs="?", default="")
    r = sub.add_parser("run", help="run one experiment and write a JSON report")
    r.add_argument("experiment", choices=EXPERIMENTS)
    r.add_argument("--manifold", required=True, help="catalog key or path to a JSON manifest")
    r.add_argument("--out", required=True, help="JSON report path")
    r.add_argument("--csv", help="optional CSV output (trajectory or Euler-form samples)")
    r.add_argument("--config", help="JSON file with parameter overrides")
    r.add_argument("--grid", type=int, nargs="+", help="quadrature cells per axis")
    r.add_argument("--tol", type=float, help="assertion tolerance")
    r.add_argument("--integration-tol", type=float, help="ODE relative tolerance")
    r.add_argument("--t-grid", help="comma-separated deformation parameters")
    r.add_argument("--seed", type=int)
    r.add_argument("--horizon", type=float)
    r.add_argument("--expected", type=float, help="expected integral or escape parameter")
    r.add_argument("--theta", type=float, help="latitude of the sphere holonomy loop")
    r.add_argument("--loops", type=int, help="number of seeded loops")
    r.add_argument("--t", type=float, help="deformation parameter for holonomy_map")
    r.add_argument("--start", help="comma-separated start coordinates")
    r.add_argument("--velocity", help="comma-separated initial velocity")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        rows = list_catalog(args.filter)
        print(f"{'key':<20} {'dim':>3}  {'affine':<6} {'metric':<6} {'compact':<7} note")
        for e in rows:
            print(f"{e.key:<20} {e.dim:>3}  {str(e.affine):<6} {str(e.metric):<6} {str(e.compact):<7} {e.note}")
        return 0
    try:
        return run(args)
    except (ValueError, OSError, json.JSONDecodeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
