"""Command-line interface: a config-driven experiment runner and thin subcommands.

Exit status is 0 on success, 1 when a declared tolerance fails and 2 for
usage, parse or validation errors.  The number of worker threads used by
``run`` is read from ``FRACPERIM_THREADS`` (default: the number of logical
cores); results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis, fields, fracops, geometry, oracles
from .kernel import make_context
from .quadrature import MeasureEstimate, QuadratureConfig, ray_integral

THREADS_ENV = "FRACPERIM_THREADS"
MAX_DIM = 3
CSV_HEADER = (["experiment", "index"] + [f"x{i + 1}" for i in range(MAX_DIM)]
              + [f"v{i + 1}" for i in range(MAX_DIM + 1)] + ["error", "evaluations", "pass"])
IDENTITIES = ("ibp", "leibniz", "gauss-green", "nl-zero", "total-zero", "smoothing", "nl-self")


class ConfigError(Exception):
    """Invalid configuration; maps to exit status 2."""


# ---------------------------------------------------------------------------
# object builders


def _floats(v, what):
    try:
        return [float(t) for t in (v if isinstance(v, (list, tuple)) else [v])]
    except (TypeError, ValueError):
        raise ConfigError(f"{what}: expected numbers, got {v!r}") from None


def _need(spec: dict, key: str, where: str):
    if key not in spec:
        raise ConfigError(f"{where}: missing key {key!r}")
    return spec[key]


def build_set(spec: dict, named: dict, where: str = "set") -> geometry.SetSpec:
    """Build a :class:`SetSpec` from a tagged table; ``of`` entries refer to names or inline tables."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    kind = _need(spec, "type", where)

    def ref(v):
        if isinstance(v, str):
            if v not in named:
                raise ConfigError(f"{where}: undefined set {v!r}")
            return named[v]
        return build_set(v, named, where)

    try:
        if kind == "halfspace":
            return geometry.HalfSpace(_floats(_need(spec, "point", where), where),
                                      _floats(_need(spec, "normal", where), where))
        if kind == "ball":
            return geometry.Ball(_floats(_need(spec, "center", where), where), float(_need(spec, "radius", where)))
        if kind == "intervals":
            return geometry.IntervalUnion(tuple(tuple(_floats(p, where)) for p in _need(spec, "intervals", where)))
        if kind in ("polygon", "convex_polygon"):
            cls = geometry.Polygon if kind == "polygon" else geometry.ConvexPolygon
            return cls(np.array([_floats(p, where) for p in _need(spec, "vertices", where)]))
        if kind == "square":
            return geometry.square(_floats(spec.get("lower", [0.0, 0.0]), where), float(spec.get("side", 1.0)))
        if kind == "quarter_plane":
            return geometry.quarter_plane(_floats(spec.get("vertex", [0.0, 0.0]), where))
        if kind == "koch":
            return geometry.koch_prefractal(int(_need(spec, "level", where)))
        if kind == "vertex_cone":
            P = ref(_need(spec, "of", where))
            if not isinstance(P, geometry.Polygon):
                raise ConfigError(f"{where}: vertex_cone needs a polygon")
            return geometry.vertex_cone(P, int(_need(spec, "vertex", where)))
        if kind == "complement":
            return geometry.Complement(ref(_need(spec, "of", where)))
        if kind in ("intersection", "union"):
            parts = [ref(v) for v in _need(spec, "of", where)]
            if len(parts) < 2:
                raise ConfigError(f"{where}: {kind} needs at least two operands")
            cls = geometry.Intersection if kind == "intersection" else geometry.Union
            out = parts[0]
            for p in parts[1:]:
                out = cls(out, p)
            return out
        if kind == "whole":
            return geometry.WholeSpace(int(_need(spec, "n", where)))
        if kind == "empty":
            return geometry.EmptySet(int(_need(spec, "n", where)))
        if kind == "translate":
            return ref(_need(spec, "of", where)).translated(_floats(_need(spec, "shift", where), where))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown set type {kind!r}")


def build_field(spec: dict, named: dict, where: str = "field") -> fields.FieldSpec:
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    kind = _need(spec, "type", where)
    try:
        if kind == "radial_bump":
            return fields.radial_bump(_floats(_need(spec, "center", where), where), float(_need(spec, "width", where)),
                                      float(spec.get("amplitude", 1.0)))
        if kind == "tent":
            return fields.tent(float(_need(spec, "center", where)), float(_need(spec, "width", where)),
                               float(spec.get("amplitude", 1.0)))
        if kind == "modulated_bump":
            return fields.modulated_bump(_floats(_need(spec, "center", where), where),
                                         float(_need(spec, "width", where)), float(spec.get("amplitude", 1.0)),
                                         int(spec.get("axis", 0)))
        if kind == "vector":
            base = _need(spec, "of", where)
            if base not in named:
                raise ConfigError(f"{where}: undefined field {base!r}")
            return fields.vector_field(named[base], _floats(_need(spec, "direction", where), where))
        if kind == "constant":
            v = _need(spec, "value", where)
            return fields.constant_field(int(_need(spec, "n", where)), v)
        if kind == "product":
            a, b = _need(spec, "of", where)
            for v in (a, b):
                if v not in named:
                    raise ConfigError(f"{where}: undefined field {v!r}")
            return fields.product_field(named[a], named[b])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown field type {kind!r}")


def _quadrature(spec: dict, where="quadrature") -> QuadratureConfig:
    allowed = {"tail_radius", "base_cell", "max_depth", "tol", "mc_samples", "seed", "max_evaluations"}
    extra = set(spec) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    try:
        return QuadratureConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


# ---------------------------------------------------------------------------
# experiments


@dataclass
class Row:
    point: tuple
    value: tuple
    error: float
    evaluations: int
    passed: bool | None = None


@dataclass
class Outcome:
    id: str
    op: str
    passed: bool
    rows: list = field(default_factory=list)
    message: str = ""
    seed: int = 0
    wall_time: float = 0.0
    details: dict = field(default_factory=dict)


def _vals(v) -> tuple:
    return tuple(float(t) for t in np.atleast_1d(np.asarray(v, dtype=float)))


def _row(point, est: MeasureEstimate, passed=None) -> Row:
    return Row(tuple(float(t) for t in np.atleast_1d(point)) if point is not None else (), _vals(est.value),
               float(est.abs_error_estimate), int(est.evaluations), passed)


def _points(exp, key="points"):
    pts = exp.get(key)
    if pts is None:
        raise ConfigError(f"experiment {exp.get('id')!r}: missing {key!r}")
    arr = [_floats(p, f"experiment {exp.get('id')!r}") for p in pts]
    return np.array(arr, dtype=float)


def _lookup(name, objects, kinds, exp_id):
    if not isinstance(name, str) or name not in objects:
        raise ConfigError(f"experiment {exp_id!r}: undefined name {name!r}")
    obj = objects[name]
    if not isinstance(obj, kinds):
        raise ConfigError(f"experiment {exp_id!r}: {name!r} has the wrong kind")
    return obj


def _oracle_value(obj, x, ctx):
    if isinstance(obj, geometry.HalfSpace):
        return oracles.halfspace_gradient(obj.x0, obj.nu, x, ctx)
    if isinstance(obj, geometry.Ball):
        return oracles.ball_gradient(obj.x0, obj.r, x, ctx)
    if isinstance(obj, geometry.IntervalUnion):
        return np.array([oracles.interval_union_gradient(obj.endpoints, float(x[0]), ctx.alpha)])
    return None


def _close(value, expect, rtol, atol):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    e = np.atleast_1d(np.asarray(expect, dtype=float))
    return bool(np.linalg.norm(v - e) <= atol + rtol * np.linalg.norm(e))


def _op_oracle(exp, ctx, cfg, objects):
    kind = exp.get("kind")
    rows = []
    if kind == "mu":
        rows.append(Row((), (ctx.mu,), 0.0, 1))
    elif kind == "gamma_beta":
        lhs, rhs = oracles.gamma_beta_identity(float(exp.get("u", 1.0)), float(exp.get("s", ctx.n + ctx.alpha)))
        rows.append(Row((), (lhs, rhs), abs(lhs - rhs), 1, abs(lhs - rhs) <= 1e-8 * abs(rhs)))
    elif kind in ("halfspace", "ball", "interval"):
        obj = objects.get(exp.get("set"))
        for x in _points(exp):
            if kind == "halfspace":
                nu = np.array(_floats(exp.get("normal", [0.0] * (ctx.n - 1) + [1.0]), "normal"))
                v = oracles.halfspace_gradient(np.array(_floats(exp.get("origin", [0.0] * ctx.n), "origin")), nu, x,
                                               ctx) if obj is None else _oracle_value(obj, x, ctx)
            elif kind == "ball":
                v = oracles.ball_gradient(np.zeros(ctx.n), 1.0, x, ctx) if obj is None else _oracle_value(obj, x, ctx)
            else:
                if obj is None:
                    raise ConfigError(f"experiment {exp['id']!r}: interval oracle needs 'set'")
                v = _oracle_value(obj, x, ctx)
            rows.append(Row(tuple(x), _vals(v), 0.0, 1))
    else:
        raise ConfigError(f"experiment {exp['id']!r}: unknown oracle kind {kind!r}")
    return rows, all(r.passed is not False for r in rows), {}


def _op_gradient(exp, ctx, cfg, objects):
    target = _lookup(exp.get("set", exp.get("field")), objects, (geometry.SetSpec, fields.FieldSpec), exp["id"])
    X = _points(exp)
    rtol, atol = float(exp.get("rtol", 1e-2)), float(exp.get("atol", 0.0))
    compare = exp.get("compare")
    expect = exp.get("expect")
    b = fracops.gradient_of(target, X, ctx, cfg)
    rows, ok = [], True
    for i, x in enumerate(X):
        est = b.item(i)
        ref = None
        if compare == "oracle":
            ref = _oracle_value(target, x, ctx)
            if ref is None:
                raise ConfigError(f"experiment {exp['id']!r}: no oracle for this set")
        elif expect is not None:
            ref = np.asarray(expect[i] if isinstance(expect[0], list) else expect, dtype=float)
        passed = None if ref is None else _close(est.value, ref, rtol, atol + est.abs_error_estimate)
        ok &= passed is not False and est.converged
        rows.append(_row(x, est, passed))
    return rows, ok, {}


def _op_divergence(exp, ctx, cfg, objects):
    phi = _lookup(exp.get("field"), objects, fields.FieldSpec, exp["id"])
    rows = [_row(x, fracops.frac_divergence(phi, x, ctx, cfg)) for x in _points(exp)]
    return rows, True, {}


def _op_nl_gradient(exp, ctx, cfg, objects):
    f = _lookup(exp.get("f"), objects, (geometry.SetSpec, fields.FieldSpec), exp["id"])
    g = _lookup(exp.get("g"), objects, (geometry.SetSpec, fields.FieldSpec), exp["id"])
    rows = [_row(x, fracops.frac_nl_gradient(f, g, x, ctx, cfg)) for x in _points(exp)]
    return rows, True, {}


def _expect_scalar(exp, est, default_rtol=1e-2):
    if "expect" not in exp:
        return None
    e = float(exp["expect"])
    rtol = float(exp.get("rtol", default_rtol))
    return abs(float(np.atleast_1d(est.value)[0]) - e) <= rtol * abs(e) + 3.0 * est.abs_error_estimate


def _op_perimeter(exp, ctx, cfg, objects):
    E = _lookup(exp.get("set"), objects, geometry.SetSpec, exp["id"])
    omega = exp.get("omega")
    Om = None if omega is None else _lookup(omega, objects, geometry.SetSpec, exp["id"])
    est = fracops.frac_perimeter(E, Om, ctx, cfg, method=exp.get("method", "quadrature"),
                                 seed=cfg.seed)
    passed = _expect_scalar(exp, est)
    return [_row(None, est, passed)], passed is not False and est.converged, {}


def _op_perimeter_local(exp, ctx, cfg, objects):
    E = _lookup(exp.get("set"), objects, geometry.SetSpec, exp["id"])
    A = _lookup(exp.get("region"), objects, geometry.SetSpec, exp["id"])
    est = fracops.frac_perimeter_local(E, A, ctx, cfg, method=exp.get("method", "quadrature"), seed=cfg.seed)
    passed = _expect_scalar(exp, est)
    return [_row(None, est, passed)], passed is not False and est.converged, {}


def _op_variation(exp, ctx, cfg, objects):
    E = _lookup(exp.get("set"), objects, geometry.SetSpec, exp["id"])
    c = np.array(_floats(exp.get("center", [0.0] * ctx.n), "center"))
    vec, tot = analysis.variation_on_ball(E, c, float(exp.get("radius", 1.0)), ctx, cfg)
    row = Row(tuple(c), _vals(vec.value) + (float(tot.value),), vec.abs_error_estimate, vec.evaluations)
    return [row], vec.converged, {}


def _radii(exp):
    r = exp.get("radii")
    if r is None:
        raise ConfigError(f"experiment {exp['id']!r}: missing 'radii'")
    return _floats(r, "radii")


def _op_normal(exp, ctx, cfg, objects):
    E = _lookup(exp.get("set"), objects, geometry.SetSpec, exp["id"])
    x = np.array(_floats(_need(exp, "point", exp["id"]), "point"))
    rep = analysis.frac_normal(E, x, _radii(exp), ctx, cfg, threshold=float(exp.get("threshold", 0.02)))
    rows = [Row((r,), _vals(q), b, 1) for r, q, b in zip(rep.radii, rep.ratios, rep.bars)]
    ok = True
    if "expect" in exp:
        e = np.asarray(_floats(exp["expect"], "expect"))
        ok = rep.limit_estimate is not None and float(np.linalg.norm(rep.limit_estimate - e)) <= float(
            exp.get("atol", 0.05))
    return rows, ok, {"converged": rep.converged, "magnitudes": rep.magnitudes}


def _op_blowup(exp, ctx, cfg, objects):
    E = _lookup(exp.get("set"), objects, geometry.SetSpec, exp["id"])
    x = np.array(_floats(_need(exp, "point", exp["id"]), "point"))
    rep = analysis.blowup_experiment(E, x, _radii(exp), float(exp.get("R", 1.0)), ctx, cfg)
    rows = [Row((r,), (t, d), b, 1) for r, t, d, b in zip(rep.radii, rep.totals, rep.deviations, rep.bars)]
    limit = float(exp.get("max_deviation", 0.05))
    ok = rep.decreasing and rep.deviations[-1] <= limit
    return rows, ok, {"target": rep.target_total, "deviations": rep.deviations, "decreasing": rep.decreasing}


def _op_probe(exp, ctx, cfg, objects):
    E = _lookup(exp.get("set"), objects, geometry.SetSpec, exp["id"])
    x = np.array(_floats(_need(exp, "point", exp["id"]), "point"))
    cone = exp.get("cone")
    C = None if cone is None else _lookup(cone, objects, geometry.SetSpec, exp["id"])
    rep = analysis.corner_probe(E, x, _radii(exp), ctx, cfg, cone=C, threshold=float(exp.get("threshold", 0.02)))
    rows = [Row((r,), (m,), b, 1) for r, m, b in zip(rep.radii, rep.magnitudes, rep.bars)]
    ok = rep.plateau
    if "max_magnitude" in exp:
        ok &= rep.magnitudes[-1] <= float(exp["max_magnitude"])
    if "min_magnitude" in exp:
        ok &= rep.magnitudes[-1] >= float(exp["min_magnitude"])
    return rows, ok, {"cone_value": rep.cone_value, "plateau": rep.plateau}


def _op_mollify(exp, ctx, cfg, objects):
    u = _lookup(exp.get("set", exp.get("field")), objects, (geometry.SetSpec, fields.FieldSpec), exp["id"])
    eps = float(_need(exp, "eps", exp["id"]))
    rows, ok = [], True
    for x in _points(exp):
        est = analysis.mollify_value(u, eps, x, cfg)
        passed = None if "expect" not in exp else abs(float(est.value) - float(exp["expect"])) <= float(
            exp.get("atol", 0.02))
        ok &= passed is not False
        rows.append(_row(x, est, passed))
    return rows, ok, {}


def _op_precise(exp, ctx, cfg, objects):
    u = _lookup(exp.get("set", exp.get("field")), objects, (geometry.SetSpec, fields.FieldSpec), exp["id"])
    x = np.array(_floats(_need(exp, "point", exp["id"]), "point"))
    rep = analysis.precise_representative(u, x, _radii(exp), cfg, tolerance=float(exp.get("atol", 0.02)))
    rows = [Row((r,), (a,), 0.0, 1) for r, a in zip(rep.radii, rep.averages)]
    ok = rep.agrees
    if "expect" in exp:
        ok &= rep.limit is not None and abs(rep.limit - float(exp["expect"])) <= float(exp.get("atol", 0.02))
    return rows, ok, {"limit": rep.limit, "mollified": rep.mollified}


def _op_verify(exp, ctx, cfg, objects):
    ident = exp.get("identity")
    eid = exp["id"]
    kinds = (geometry.SetSpec, fields.FieldSpec)
    factor = float(exp.get("bar_factor", 1.0))
    if ident == "ibp":
        f = _lookup(exp.get("f"), objects, fields.FieldSpec, eid)
        phi = _lookup(exp.get("phi"), objects, fields.FieldSpec, eid)
        rep = analysis.verify_ibp(f, phi, ctx, cfg)
        ok = abs(float(rep.residual.value)) <= float(exp.get("rtol", 1e-3)) * rep.scale
        return [_row(None, rep.residual, ok)], ok, {"scale": rep.scale}
    if ident in ("leibniz", "nl-self"):
        X = _points(exp)
        if ident == "leibniz":
            b = analysis.leibniz_residuals(_lookup(exp.get("f"), objects, kinds, eid),
                                           _lookup(exp.get("g"), objects, kinds, eid), X, ctx, cfg)
        else:
            b = analysis.nl_self_residuals(_lookup(exp.get("set"), objects, geometry.SetSpec, eid), X, ctx, cfg)
        rows = []
        for i, x in enumerate(X):
            est = b.item(i)
            rows.append(_row(x, est, est.magnitude <= factor * est.abs_error_estimate))
        return rows, all(r.passed for r in rows), {}
    if ident == "gauss-green":
        E = _lookup(exp.get("set"), objects, geometry.SetSpec, eid)
        F = _lookup(exp.get("bounded"), objects, geometry.SetSpec, eid)
        rep = analysis.verify_gauss_green(E, F, ctx, cfg)
        scale = max(rep.lhs.magnitude, rep.rhs.magnitude, float(exp.get("floor", 1e-3)))
        ok = rep.difference <= float(exp.get("rtol", 2e-2)) * scale
        return [_row(None, rep.lhs), _row(None, rep.rhs, ok)], ok, {"difference": rep.difference}
    if ident in ("nl-zero", "total-zero"):
        E = _lookup(exp.get("set"), objects, geometry.SetSpec, eid)
        if ident == "nl-zero":
            est = analysis.verify_zero_average_nl(E, _lookup(exp.get("bounded"), objects, geometry.SetSpec, eid), ctx,
                                                  cfg)
        else:
            est = analysis.verify_total_zero(E, ctx, cfg)
        ok = est.magnitude <= factor * est.abs_error_estimate
        return [_row(None, est, ok)], ok, {}
    if ident == "smoothing":
        E = _lookup(exp.get("set"), objects, geometry.SetSpec, eid)
        X = _points(exp)
        b = analysis.verify_smoothing(E, float(_need(exp, "eps", eid)), X, ctx, cfg)
        rows = []
        for i, x in enumerate(X):
            est = b.item(i)
            rows.append(_row(x, est, est.magnitude <= factor * est.abs_error_estimate))
        return rows, all(r.passed for r in rows), {}
    raise ConfigError(f"experiment {eid!r}: unknown identity {ident!r} (expected one of {', '.join(IDENTITIES)})")


OPERATIONS = {
    "oracle": _op_oracle,
    "gradient": _op_gradient,
    "divergence": _op_divergence,
    "nl_gradient": _op_nl_gradient,
    "perimeter": _op_perimeter,
    "perimeter_local": _op_perimeter_local,
    "variation": _op_variation,
    "normal": _op_normal,
    "blowup": _op_blowup,
    "probe": _op_probe,
    "mollify": _op_mollify,
    "precise": _op_precise,
    "verify": _op_verify,
}
_REFERENCE_KEYS = ("set", "field", "f", "g", "phi", "omega", "region", "bounded", "cone")


# ---------------------------------------------------------------------------
# config loading and the runner


@dataclass
class Experiment:
    spec: dict
    ctx: object
    cfg: QuadratureConfig


@dataclass
class LoadedConfig:
    experiments: list
    objects: dict
    csv_path: Path | None
    summary_path: Path | None
    seed: int


def experiment_seed(master: int, exp_id: str) -> int:
    """Per-experiment seed derived from the master seed and the experiment id."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, int(master) >> 32, zlib.crc32(exp_id.encode())])
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64))


def load_config(path: str | Path) -> LoadedConfig:
    p = Path(path)
    try:
        raw = tomllib.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"{p}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: parse error: {exc}") from None
    return validate_config(raw, p.parent)


def validate_config(raw: dict, base: Path = Path(".")) -> LoadedConfig:
    allowed = {"context", "quadrature", "sets", "fields", "experiment", "output"}
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"unknown top-level tables {sorted(extra)}")
    c = raw.get("context", {})
    try:
        base_ctx = make_context(int(c.get("n", 2)), float(c.get("alpha", 0.5)))
    except ValueError as exc:
        raise ConfigError(f"context: {exc}") from None
    qspec = dict(raw.get("quadrature", {}))
    base_cfg = _quadrature(qspec)
    objects: dict = {}
    for name, spec in raw.get("sets", {}).items():
        objects[name] = build_set(spec, objects, f"sets.{name}")
    for name, spec in raw.get("fields", {}).items():
        if name in objects:
            raise ConfigError(f"fields.{name}: name already used by a set")
        objects[name] = build_field(spec, objects, f"fields.{name}")
    exps = raw.get("experiment", [])
    if not isinstance(exps, list):
        raise ConfigError("'experiment' must be an array of tables")
    seen = set()
    out = []
    for k, e in enumerate(exps):
        if not isinstance(e, dict):
            raise ConfigError(f"experiment #{k + 1}: expected a table")
        eid = str(e.get("id", f"exp{k + 1}"))
        if eid in seen:
            raise ConfigError(f"experiment {eid!r}: duplicate id")
        seen.add(eid)
        e = dict(e, id=eid)
        op = e.get("op")
        if op not in OPERATIONS:
            raise ConfigError(f"experiment {eid!r}: unknown op {op!r}")
        for key in _REFERENCE_KEYS:
            v = e.get(key)
            if isinstance(v, str) and v not in objects:
                raise ConfigError(f"experiment {eid!r}: undefined name {v!r}")
        if op == "verify" and e.get("identity") not in IDENTITIES:
            raise ConfigError(f"experiment {eid!r}: unknown identity {e.get('identity')!r}")
        try:
            ctx = make_context(int(e.get("n", base_ctx.n)), float(e.get("alpha", base_ctx.alpha)))
        except ValueError as exc:
            raise ConfigError(f"experiment {eid!r}: {exc}") from None
        q = dict(qspec)
        q.update(e.get("quadrature", {}))
        q["seed"] = experiment_seed(base_cfg.seed, eid)
        out.append(Experiment(e, ctx, _quadrature(q, f"experiment {eid!r}.quadrature")))
    o = raw.get("output", {})
    csv_path = base / o["csv"] if "csv" in o else None
    summary_path = base / o["summary"] if "summary" in o else None
    return LoadedConfig(out, objects, csv_path, summary_path, base_cfg.seed)


def run_experiment(exp: Experiment, objects: dict) -> Outcome:
    t0 = time.perf_counter()
    spec = exp.spec
    try:
        rows, ok, details = OPERATIONS[spec["op"]](spec, exp.ctx, exp.cfg, objects)
        msg = ""
    except ConfigError:
        raise
    except (ValueError, NotImplementedError) as exc:
        rows, ok, details, msg = [], False, {}, f"error: {exc}"
    return Outcome(spec["id"], spec["op"], bool(ok), rows, msg, exp.cfg.seed, time.perf_counter() - t0, details)


def thread_count() -> int:
    v = os.environ.get(THREADS_ENV)
    if v:
        try:
            return max(1, int(v))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {v!r}") from None
    return os.cpu_count() or 1


def _fmt(v) -> str:
    return repr(float(v))


def csv_text(outcomes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for o in outcomes:
        for i, r in enumerate(o.rows):
            pt = [_fmt(v) for v in r.point] + [""] * (MAX_DIM - len(r.point))
            val = [_fmt(v) for v in r.value][: MAX_DIM + 1]
            val += [""] * (MAX_DIM + 1 - len(val))
            passed = "" if r.passed is None else ("1" if r.passed else "0")
            w.writerow([o.id, i] + pt + val + [_fmt(r.error), r.evaluations, passed])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(t) for t in v]
    if isinstance(v, dict):
        return {k: _jsonable(t) for k, t in v.items()}
    return v


def summary(outcomes, seed) -> dict:
    return {
        "seed": seed,
        "passed": all(o.passed for o in outcomes),
        "experiments": [
            {"id": o.id, "op": o.op, "passed": o.passed, "seed": o.seed, "wall_time": round(o.wall_time, 3),
             "message": o.message, "details": _jsonable(o.details)}
            for o in outcomes
        ],
    }


def run_config(path, *, csv_out=None, summary_out=None, threads=None, log=sys.stderr) -> int:
    try:
        conf = load_config(path)
        threads = thread_count() if threads is None else threads
    except ConfigError as exc:
        print(f"error: {exc}", file=log)
        return 2
    try:
        if threads > 1 and len(conf.experiments) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(lambda e: run_experiment(e, conf.objects), conf.experiments))
        else:
            outcomes = [run_experiment(e, conf.objects) for e in conf.experiments]
    except ConfigError as exc:
        print(f"error: {exc}", file=log)
        return 2
    csv_path = Path(csv_out) if csv_out else conf.csv_path
    sum_path = Path(summary_out) if summary_out else conf.summary_path
    text = csv_text(outcomes)
    if csv_path is not None:
        csv_path.write_text(text)
    else:
        sys.stdout.write(text)
    doc = summary(outcomes, conf.seed)
    if sum_path is not None:
        sum_path.write_text(json.dumps(doc, indent=2) + "\n")
    for o in outcomes:
        print(f"{'PASS' if o.passed else 'FAIL'} {o.id} ({o.op}, {o.wall_time:.1f} s){' ' + o.message if o.message else ''}",
              file=log)
    return 0 if doc["passed"] else 1


# ---------------------------------------------------------------------------
# subcommands

_SHORTCUTS = {
    "ball": lambda n: geometry.Ball(np.zeros(n), 1.0),
    "halfspace": lambda n: geometry.HalfSpace(np.zeros(n), np.eye(n)[-1]),
    "square": lambda n: geometry.square(),
    "quarter-plane": lambda n: geometry.quarter_plane(),
    "interval": lambda n: geometry.IntervalUnion(((0.0, 1.0),)),
}


def _parse_vec(s: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in s.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse vector {s!r}") from None


def _parse_set(s: str, n: int) -> geometry.SetSpec:
    if s in _SHORTCUTS:
        return _SHORTCUTS[s](n)
    if s.startswith("koch"):
        return geometry.koch_prefractal(int(s[4:] or 3))
    try:
        spec = json.loads(s)
    except json.JSONDecodeError:
        raise ConfigError(f"unknown set {s!r}: use a shortcut ({', '.join(_SHORTCUTS)}, kochN) or a JSON table")
    return build_set(spec, {}, "--set")


def _parse_field(s: str) -> fields.FieldSpec:
    try:
        spec = json.loads(s)
    except json.JSONDecodeError:
        raise ConfigError(f"cannot parse field {s!r}: expected a JSON table") from None
    if spec.get("type") == "vector":
        base = build_field(spec["of"], {}, "--field") if isinstance(spec.get("of"), dict) else None
        if base is None:
            raise ConfigError("--field: a vector field needs an inline 'of' table")
        return fields.vector_field(base, _floats(spec["direction"], "direction"))
    return build_field(spec, {}, "--field")


def _print_estimate(label, est, out):
    v = np.atleast_1d(np.asarray(est.value, dtype=float))
    out.write(f"{label} = [{', '.join(f'{t:.12g}' for t in v)}] +- {est.abs_error_estimate:.3g} "
              f"({est.evaluations} evaluations{'' if est.converged else ', NOT converged'})\n")


def _ctx_cfg(a):
    return make_context(a.n, a.alpha), QuadratureConfig(tol=a.tol, seed=a.seed)


def _cmd_oracle(a, out):
    ctx = make_context(a.n, a.alpha)
    x = _parse_vec(a.x) if a.x else None
    if a.kind == "mu":
        out.write(f"{ctx.mu!r}\n")
    elif a.kind == "halfspace":
        v = oracles.halfspace_gradient(np.zeros(ctx.n), np.eye(ctx.n)[-1], x, ctx)
        out.write(" ".join(repr(float(t)) for t in v) + "\n")
    elif a.kind == "ball":
        v = oracles.ball_gradient(np.zeros(ctx.n), 1.0, x, ctx)
        out.write(" ".join(repr(float(t)) for t in v) + "\n")
    elif a.kind == "interval":
        iv = json.loads(a.intervals) if a.intervals else [[0, 1]]
        out.write(f"{oracles.interval_union_gradient(iv, float(x[0]), ctx.alpha)!r}\n")
    elif a.kind == "gamma-beta":
        lhs, rhs = oracles.gamma_beta_identity(a.u, a.s)
        out.write(f"{lhs!r} {rhs!r}\n")
    return 0


def _cmd_gradient(a, out):
    ctx, cfg = _ctx_cfg(a)
    x = _parse_vec(a.x)
    if a.field:
        est = fracops.frac_gradient(_parse_field(a.field), x, ctx, cfg)
    else:
        est = fracops.frac_gradient_set(_parse_set(a.set, ctx.n), x, ctx, cfg)
    _print_estimate("gradient", est, out)
    return 0


def _cmd_perimeter(a, out):
    ctx, cfg = _ctx_cfg(a)
    E = _parse_set(a.set, ctx.n)
    Om = _parse_set(a.omega, ctx.n) if a.omega else None
    if a.local:
        est = fracops.frac_perimeter_local(E, Om, ctx, cfg, method=a.method)
    else:
        est = fracops.frac_perimeter(E, Om, ctx, cfg, method=a.method)
    _print_estimate("perimeter", est, out)
    return 0


def _cmd_verify(a, out):
    ctx, cfg = _ctx_cfg(a)
    ident = a.identity
    if ident == "total-zero":
        est = analysis.verify_total_zero(_parse_set(a.set, ctx.n), ctx, cfg)
        ok = est.magnitude <= est.abs_error_estimate
        _print_estimate("total", est, out)
    elif ident == "nl-zero":
        est = analysis.verify_zero_average_nl(_parse_set(a.set, ctx.n), _parse_set(a.bounded, ctx.n), ctx, cfg)
        ok = est.magnitude <= est.abs_error_estimate
        _print_estimate("nl total", est, out)
    elif ident == "gauss-green":
        rep = analysis.verify_gauss_green(_parse_set(a.set, ctx.n), _parse_set(a.bounded, ctx.n), ctx, cfg)
        _print_estimate("lhs", rep.lhs, out)
        _print_estimate("rhs", rep.rhs, out)
        ok = rep.difference <= 2e-2 * max(rep.lhs.magnitude, rep.rhs.magnitude, 1e-3)
    elif ident == "ibp":
        rep = analysis.verify_ibp(_parse_field(a.f), _parse_field(a.phi), ctx, cfg)
        _print_estimate("residual", rep.residual, out)
        ok = abs(float(rep.residual.value)) <= 1e-3 * rep.scale
    elif ident in ("leibniz", "nl-self", "smoothing"):
        x = _parse_vec(a.x)
        if ident == "leibniz":
            f = _parse_field(a.f) if a.f and a.f.startswith("{") and "bump" in a.f else _parse_set(a.f, ctx.n)
            g = _parse_field(a.g) if a.g and a.g.startswith("{") and "bump" in a.g else _parse_set(a.g, ctx.n)
            est = analysis.verify_leibniz_pointwise(f, g, x, ctx, cfg)
        elif ident == "nl-self":
            est = analysis.nl_self_residuals(_parse_set(a.set, ctx.n), x[None, :], ctx, cfg).item(0)
        else:
            est = analysis.verify_smoothing(_parse_set(a.set, ctx.n), a.eps, x[None, :], ctx, cfg).item(0)
        ok = est.magnitude <= est.abs_error_estimate
        _print_estimate("residual", est, out)
    else:  # pragma: no cover - argparse restricts the choices
        raise ConfigError(f"unknown identity {ident!r}")
    out.write("pass\n" if ok else "FAIL\n")
    return 0 if ok else 1


def _cmd_blowup(a, out):
    ctx, cfg = _ctx_cfg(a)
    rep = analysis.blowup_experiment(_parse_set(a.set, ctx.n), _parse_vec(a.x), _parse_vec(a.radii), a.R, ctx, cfg)
    out.write(f"target |D chi_H|(B_R) = {rep.target_total:.10g}\n")
    for r, t, d in zip(rep.radii, rep.totals, rep.deviations):
        out.write(f"r = {r:.6g}: |D|(B_R) = {t:.10g}, deviation = {d:.4%}\n")
    ok = rep.decreasing and rep.deviations[-1] <= a.max_deviation
    out.write("pass\n" if ok else "FAIL\n")
    return 0 if ok else 1


def _cmd_normal(a, out):
    ctx, cfg = _ctx_cfg(a)
    rep = analysis.frac_normal(_parse_set(a.set, ctx.n), _parse_vec(a.x), _parse_vec(a.radii), ctx, cfg)
    for r, q, m in zip(rep.radii, rep.ratios, rep.magnitudes):
        out.write(f"r = {r:.6g}: ratio = [{', '.join(f'{t:.8g}' for t in q)}], magnitude = {m:.6f}\n")
    out.write(f"converged: {rep.converged}\n")
    return 0


def _cmd_probe(a, out):
    ctx, cfg = _ctx_cfg(a)
    E = _parse_set(a.set, ctx.n)
    x = _parse_vec(a.x)
    cone = None
    if isinstance(E, geometry.Polygon):
        hit = np.nonzero(np.all(np.isclose(E.vertices, x, rtol=0, atol=1e-12), axis=1))[0]
        if len(hit):
            cone = geometry.vertex_cone(E, int(hit[0])).translated(-x)
    rep = analysis.corner_probe(E, x, _parse_vec(a.radii), ctx, cfg, cone=cone)
    for r, m in zip(rep.radii, rep.magnitudes):
        out.write(f"r = {r:.6g}: magnitude = {m:.6f}\n")
    if rep.cone_value is not None:
        out.write(f"cone value = {rep.cone_value:.6f} (margin {1 - rep.cone_value:.6f})\n")
    out.write(f"plateau: {rep.plateau}\n")
    return 0


def _cmd_mollify(a, out):
    cfg = QuadratureConfig(tol=a.tol, seed=a.seed)
    u = _parse_set(a.set, a.n)
    est = analysis.mollify_value(u, a.eps, _parse_vec(a.x), cfg)
    _print_estimate("mollified", est, out)
    return 0


def _add_common(p, needs_x=True):
    p.add_argument("--n", type=int, default=2, help="ambient dimension (1-3)")
    p.add_argument("--alpha", type=float, default=0.5, help="fractional order in (0, 1)")
    p.add_argument("--tol", type=float, default=1e-4, help="relative tolerance")
    p.add_argument("--seed", type=int, default=0)
    if needs_x:
        p.add_argument("--x", required=True, help="point, comma separated")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracperim", description="Fractional gradients, perimeters and blow-ups.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the experiments of a TOML config")
    p.add_argument("config")
    p.add_argument("--csv", help="override the CSV output path")
    p.add_argument("--summary", help="override the JSON summary path")
    p.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or all cores)")

    p = sub.add_parser("oracle", help="closed-form reference values")
    p.add_argument("kind", choices=["mu", "halfspace", "ball", "interval", "gamma-beta"])
    _add_common(p, needs_x=False)
    p.add_argument("--x")
    p.add_argument("--intervals", help='JSON list of [a, b] pairs, e.g. "[[0,1],[2,3]]"')
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--s", type=float, default=2.5)

    p = sub.add_parser("gradient", help="fractional gradient of a set indicator or a field")
    _add_common(p)
    p.add_argument("--set", default="ball")
    p.add_argument("--field", help="JSON field table (overrides --set)")

    p = sub.add_parser("perimeter", help="fractional perimeter (or its local part with --local)")
    _add_common(p, needs_x=False)
    p.add_argument("--set", default="ball")
    p.add_argument("--omega", help="bounded region (default: whole space)")
    p.add_argument("--local", action="store_true")
    p.add_argument("--method", choices=["quadrature", "mc"], default="quadrature")

    p = sub.add_parser("verify", help="check an identity numerically")
    p.add_argument("identity", choices=IDENTITIES)
    _add_common(p, needs_x=False)
    p.add_argument("--x")
    p.add_argument("--set", default="ball")
    p.add_argument("--bounded", default="ball")
    p.add_argument("--f")
    p.add_argument("--g")
    p.add_argument("--phi")
    p.add_argument("--eps", type=float, default=0.1)

    p = sub.add_parser("blowup", help="blow-up ladder against the half-space target")
    _add_common(p)
    p.add_argument("--set", default="ball")
    p.add_argument("--radii", default="0.25,0.0625,0.015625")
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--max-deviation", type=float, default=0.05)

    p = sub.add_parser("normal", help="fractional normal ratios along a ladder")
    _add_common(p)
    p.add_argument("--set", default="ball")
    p.add_argument("--radii", default="0.25,0.0625,0.015625")

    p = sub.add_parser("probe", help="ratio magnitudes at a boundary point, with the vertex cone value")
    _add_common(p)
    p.add_argument("--set", default="square")
    p.add_argument("--radii", default="0.25,0.0625,0.015625")

    p = sub.add_parser("mollify", help="mollified indicator value")
    _add_common(p)
    p.add_argument("--set", default="ball")
    p.add_argument("--eps", type=float, default=0.1)
    return ap


_COMMANDS = {
    "oracle": _cmd_oracle,
    "gradient": _cmd_gradient,
    "perimeter": _cmd_perimeter,
    "verify": _cmd_verify,
    "blowup": _cmd_blowup,
    "normal": _cmd_normal,
    "probe": _cmd_probe,
    "mollify": _cmd_mollify,
}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if a.command == "run":
        return run_config(a.config, csv_out=a.csv, summary_out=a.summary, threads=a.threads)
    try:
        return _COMMANDS[a.command](a, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
