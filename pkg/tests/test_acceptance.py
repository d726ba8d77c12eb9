"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Reference values come from ``fracperim.oracles`` (closed forms) and the
packaged golden table (offline arbitrary-precision, symbolic and Monte
Carlo runs).  Run with ``pytest tests/test_acceptance.py -v``; the summary
lines appear at the end of the session.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fracperim import analysis, cli, fracops, geometry, oracles
from fracperim.fields import modulated_bump, radial_bump, tent, vector_field
from fracperim.kernel import make_context, mu_descent
from fracperim.quadrature import QuadratureConfig

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_CONFIG = ROOT / "configs" / "acceptance.toml"
LADDER = [1 / 4, 1 / 16, 1 / 64]


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# ---------------------------------------------------------------------------
# 1. constants


def test_c01_constants(record):
    t0 = time.perf_counter()
    worst_mu = 0.0
    for n in (1, 2, 3):
        for a in ("0.1", "0.25", "0.5", "0.75", "0.9"):
            ref = oracles.golden(f"mu_n{n}_a{a}").scalar
            worst_mu = max(worst_mu, abs(make_context(n, float(a)).mu / ref - 1.0))
    worst_gb = 0.0
    for s in (1.0, 2.5, 3.0, 3.5):
        for u in (0.5, 1.0, 2.0):
            lhs, rhs = oracles.gamma_beta_identity(u, s)
            worst_gb = max(worst_gb, abs(lhs - rhs) / abs(rhs))
    worst_desc = 0.0
    for n in (2, 3):
        for a in (0.25, 0.5, 0.75):
            worst_desc = max(worst_desc, abs(mu_descent(make_context(n, a)) / make_context(n - 1, a).mu - 1.0))
    dt = time.perf_counter() - t0
    ok = worst_mu <= 1e-12 and worst_gb <= 1e-8 and worst_desc <= 1e-12 and dt < 1.0
    record(1, ok, f"mu rel {worst_mu:.1e}, gamma/beta rel {worst_gb:.1e}, descent rel {worst_desc:.1e}, {dt:.2f} s")
    assert ok


# ---------------------------------------------------------------------------
# 2. half-space


def test_c02_halfspace(record, rng):
    t0 = time.perf_counter()
    cfg = QuadratureConfig(tol=1e-4)
    worst = 0.0
    for n in (1, 2):
        ctx = make_context(n, 0.5)
        nu = rng.standard_normal(n)
        nu /= np.linalg.norm(nu)
        x0 = rng.uniform(-1, 1, n)
        H = geometry.HalfSpace(x0, nu)
        dist = np.geomspace(0.1, 10.0, 20) * np.where(np.arange(20) % 2 == 0, 1.0, -1.0)
        tang = rng.standard_normal((20, n))
        tang -= (tang @ nu)[:, None] * nu
        X = x0 + dist[:, None] * nu + tang
        b = fracops.frac_gradient_set_batch(H, X, ctx, cfg)
        for i, x in enumerate(X):
            worst = max(worst, _rel(b.value[i], oracles.halfspace_gradient(x0, nu, x, ctx)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-2 and dt < 120
    record(2, ok, f"worst relative error {worst:.1e} over 40 points (n = 1, 2), {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. interval unions


def test_c03_interval_unions(record, rng):
    t0 = time.perf_counter()
    ctx = make_context(1, 0.5)
    cfg = QuadratureConfig(tol=1e-6)
    unions = [((0.0, 1.0),), ((0.0, 1.0), (2.0, 3.0)), ((-3.0, -2.5), (0.0, 1.0), (1.5, 3.0))]
    worst, sign_ok = 0.0, True
    count = 0
    for iv in unions:
        E = geometry.IntervalUnion(iv)
        lo, hi = iv[0][0] - 2.0, iv[-1][1] + 2.0
        T = rng.uniform(lo, hi, 7 if len(iv) < 3 else 6)
        if len(iv) > 1:
            # inside the first gap, close to the right end of the first interval
            T[0] = iv[0][1] + 0.2 * (iv[1][0] - iv[0][1])
        for t in T:
            ref = oracles.interval_union_gradient(iv, t, ctx.alpha)
            got = float(fracops.frac_gradient_set(E, [t], ctx, cfg).value[0])
            worst = max(worst, abs(got - ref) / abs(ref))
            sign_ok &= np.sign(got) == np.sign(ref)
            count += 1
    gap = oracles.interval_union_gradient(((0.0, 1.0), (2.0, 3.0)), 1.2, ctx.alpha)
    gap_got = float(fracops.frac_gradient_set(geometry.IntervalUnion(((0.0, 1.0), (2.0, 3.0))), [1.2], ctx,
                                              cfg).value[0])
    neg_ok = gap < 0 and gap_got < 0
    dt = time.perf_counter() - t0
    ok = worst <= 1e-3 and sign_ok and neg_ok and count == 20 and dt < 30
    record(3, ok, f"worst relative error {worst:.1e} over {count} points; gap value {gap_got:.6f} "
                  f"(oracle {gap:.6f}); signs {'match' if sign_ok else 'DIFFER'}, {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 4. ball


def test_c04_ball(record, rng):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    cfg = QuadratureConfig(tol=1e-4)
    B = geometry.Ball([0.0, 0.0], 1.0)
    radii = np.concatenate([rng.uniform(0.1, 0.95, 6), rng.uniform(1.05, 4.0, 6)])
    ang = rng.uniform(0, 2 * np.pi, 12)
    X = radii[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    b = fracops.frac_gradient_set_batch(B, X, ctx, cfg)
    worst, worst_angle = 0.0, 0.0
    for i, x in enumerate(X):
        v = b.value[i]
        worst = max(worst, _rel(v, oracles.ball_gradient([0, 0], 1.0, x, ctx)))
        cosang = float(-v @ x / (np.linalg.norm(v) * np.linalg.norm(x)))
        worst_angle = max(worst_angle, math.acos(min(1.0, cosang)))
    c = fracops.frac_gradient_set(B, [0.0, 0.0], ctx, cfg)
    centre_ok = c.magnitude <= c.abs_error_estimate
    dt = time.perf_counter() - t0
    ok = worst <= 1e-2 and worst_angle <= 1e-3 and centre_ok and dt < 300
    record(4, ok, f"worst relative error {worst:.1e}, worst angle {worst_angle:.1e} rad, centre |v| = "
                  f"{c.magnitude:.1e} vs bar {c.abs_error_estimate:.1e}, {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5. integration by parts


def test_c05_integration_by_parts(record):
    t0 = time.perf_counter()
    cases = [
        (1, tent(0.0, 1.0), vector_field(radial_bump([0.3], 0.8), [1.0])),
        (1, radial_bump([0.0], 1.0), vector_field(tent(0.5, 0.7), [1.0])),
        (1, tent(-0.2, 0.6), vector_field(modulated_bump([0.1], 1.2), [1.0])),
        (2, radial_bump([0.0, 0.0], 1.0), vector_field(modulated_bump([0.2, 0.1], 0.9), [1.0, 0.5])),
    ]
    worst = 0.0
    ok = True
    for n, f, phi in cases:
        cfg = QuadratureConfig(tol=1e-4 if n == 1 else 1e-3)
        rep = analysis.verify_ibp(f, phi, make_context(n, 0.5), cfg)
        rel = abs(float(rep.residual.value)) / rep.scale
        worst = max(worst, rel)
        ok &= rel <= 1e-3
    dt = time.perf_counter() - t0
    record(5, ok, f"worst residual / scale {worst:.1e} over 3 pairs in n = 1 and 1 pair in n = 2, {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 6. Leibniz rules


def _off_boundary_points(rng, sets, m, lo=-2.0, hi=2.0, margin=1e-2):
    out = []
    while len(out) < m:
        p = rng.uniform(lo, hi, 2)
        if all(s.distance(p[None, :])[0] > margin for s in sets):
            out.append(p)
    return np.array(out)


def test_c06_leibniz(record, rng):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    cfg = QuadratureConfig(tol=1e-5)
    B = geometry.Ball([0.0, 0.0], 1.0)
    H = geometry.HalfSpace([0.0, 0.3], [0.0, 1.0])
    B2 = geometry.Ball([0.7, -0.2], 0.8)
    fails = []
    for name, f, g in (("ball/half-space", B, H), ("ball/ball", B, B2)):
        X = _off_boundary_points(rng, [f, g], 50)
        b = analysis.leibniz_residuals(f, g, X, ctx, cfg)
        mags = np.linalg.norm(b.value, axis=1)
        bad = int(np.sum(mags > b.error))
        if bad:
            fails.append(f"{name}: {bad}/50")
    X = _off_boundary_points(rng, [B], 50)
    b = analysis.nl_self_residuals(B, X, ctx, cfg)
    bad = int(np.sum(np.linalg.norm(b.value, axis=1) > b.error))
    if bad:
        fails.append(f"self-interaction: {bad}/50")
    dt = time.perf_counter() - t0
    ok = not fails
    record(6, ok, ("all 150 residuals within bars" if ok else "residual above bars for " + ", ".join(fails))
           + f", {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 7. Gauss-Green


def test_c07_gauss_green(record):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    rep = analysis.verify_gauss_green(geometry.HalfSpace([0, 0], [0, 1]), geometry.Ball([0, 0], 1.0), ctx,
                                      QuadratureConfig(tol=1e-4))
    scale = max(rep.lhs.magnitude, rep.rhs.magnitude, 1e-3)
    dt = time.perf_counter() - t0
    ok = rep.difference <= 2e-2 * scale and dt < 600
    record(7, ok, f"|lhs - rhs| = {rep.difference:.1e} vs {2e-2 * scale:.1e} allowed, {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 8. zero totals


def test_c08_zero_totals(record):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    cfg = QuadratureConfig(tol=1e-4)
    F = geometry.Ball([0, 0], 1.0)
    nl = analysis.verify_zero_average_nl(geometry.HalfSpace([0, 0], [0, 1]), F, ctx, cfg)
    per = fracops.frac_perimeter(F, None, ctx, QuadratureConfig(tol=1e-3))
    cap = 5e-2 * ctx.mu * float(per.value)
    tot = analysis.verify_total_zero(F, ctx, cfg)
    tot1 = analysis.verify_total_zero(geometry.IntervalUnion(((0.0, 1.0), (2.0, 4.0))), make_context(1, 0.5), cfg)
    checks = {
        "nl": nl.magnitude <= nl.abs_error_estimate and nl.abs_error_estimate <= cap,
        "ball": tot.magnitude <= tot.abs_error_estimate,
        "intervals": tot1.magnitude <= tot1.abs_error_estimate,
    }
    dt = time.perf_counter() - t0
    ok = all(checks.values())
    record(8, ok, f"NL |v| {nl.magnitude:.1e} <= bar {nl.abs_error_estimate:.1e} (cap {cap:.2f}); ball |v| "
                  f"{tot.magnitude:.1e} <= {tot.abs_error_estimate:.1e}; intervals |v| {tot1.magnitude:.1e} <= "
                  f"{tot1.abs_error_estimate:.1e}; {dt:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 9 and 10. blow-ups, normals, corner probe


@pytest.fixture(scope="module")
def ladder_cfg():
    return QuadratureConfig(tol=1e-3)


@pytest.fixture(scope="module")
def square_edge_normal(ladder_cfg):
    return analysis.frac_normal(geometry.square(), [0.5, 0.0], LADDER, make_context(2, 0.5), ladder_cfg)


def test_c09_blowup(record, ladder_cfg, square_edge_normal):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    target = oracles.golden("halfspace_variation_n2_a0.5").scalar
    lines, ok = [], True
    cases = (("ball", geometry.Ball([0, 0], 1.0), np.array([1.0, 0.0]), np.array([-1.0, 0.0]), None),
             ("square", geometry.square(), np.array([0.5, 0.0]), np.array([0.0, 1.0]), square_edge_normal))
    for name, E, x, nu, normal in cases:
        rep = analysis.blowup_experiment(E, x, LADDER, 1.0, ctx, ladder_cfg)
        if normal is None:
            normal = analysis.frac_normal(E, x, LADDER, ctx, ladder_cfg)
        assert abs(rep.target_total - target) <= 1e-12 * target
        lim = normal.ratios[-1]
        direction_err = float(np.linalg.norm(lim / np.linalg.norm(lim) - nu))
        case_ok = rep.decreasing and rep.deviations[-1] <= 0.05 and direction_err <= 0.05
        ok &= case_ok
        devs = ", ".join(f"{d:.2%}" for d in rep.deviations)
        lines.append(f"{name}: deviations {devs} ({'decreasing' if rep.decreasing else 'NOT decreasing'}), "
                     f"normal error {direction_err:.1e}")
    dt = time.perf_counter() - t0
    record(9, ok, "; ".join(lines) + f"; {dt:.0f} s")
    assert ok


def test_c10_corner_probe(record, ladder_cfg, square_edge_normal):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    S = geometry.square()
    golden = oracles.golden("cone_quarter_a0.5").scalar
    delta = oracles.golden("cone_margin_quarter_a0.5").scalar
    rep = analysis.corner_probe(S, [0.0, 0.0], LADDER, ctx, ladder_cfg, cone=geometry.vertex_cone(S, 0))
    plateau = rep.magnitudes[-1]
    checks = [
        rep.plateau,
        abs(plateau - golden) <= 0.02,
        abs(rep.cone_value - golden) <= 1e-3,
        plateau <= 1.0 - delta,
        square_edge_normal.magnitudes[-1] >= 0.98,
    ]
    ok = all(checks)
    dt = time.perf_counter() - t0
    record(10, ok, f"vertex magnitudes {', '.join(f'{m:.4f}' for m in rep.magnitudes)}; cone golden {golden:.4f} "
                   f"(engine {rep.cone_value:.4f}), margin {delta:.2f}; edge midpoint "
                   f"{square_edge_normal.magnitudes[-1]:.4f}; {dt:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 11. scaling law


def test_c11_scaling_law(record):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    cfg = QuadratureConfig(tol=1e-3)
    # an independent angular partition for the right-hand side
    cfg_rhs = cfg.replace(base_cell=0.3)
    E = geometry.Ball([0.0, 0.0], 1.0)
    x = np.array([0.6, 0.8])
    worst, ok = 0.0, True
    for r, R in ((0.5, 1.0), (0.25, 2.0), (0.125, 1.0)):
        _, lhs = analysis.variation_on_ball(E.rescaled(x, r), np.zeros(2), R, ctx, cfg)
        _, rhs = analysis.variation_on_ball(E, x, r * R, ctx, cfg_rhs)
        s = r ** (ctx.alpha - ctx.n)
        diff = abs(float(lhs.value) - s * float(rhs.value))
        bars = lhs.abs_error_estimate + s * rhs.abs_error_estimate
        worst = max(worst, diff / bars)
        ok &= diff <= bars
    dt = time.perf_counter() - t0
    record(11, ok, f"worst |lhs - rhs| / combined bars = {worst:.2f} over 3 (r, R) pairs, {dt:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 12. mollification


def test_c12_mollification(record, rng):
    t0 = time.perf_counter()
    ctx = make_context(2, 0.5)
    cfg = QuadratureConfig(tol=1e-4)
    eps = 0.1
    bad = []
    for name, E in (("half-space", geometry.HalfSpace([0, 0], [0, 1])), ("ball", geometry.Ball([0, 0], 1.0))):
        X = _off_boundary_points(rng, [E], 10, -1.6, 1.6, margin=1e-3)
        b = analysis.verify_smoothing(E, eps, X, ctx, cfg)
        n_bad = int(np.sum(np.linalg.norm(b.value, axis=1) > b.error))
        if n_bad:
            bad.append(f"{name}: {n_bad}/10")
    pr_h = analysis.precise_representative(geometry.HalfSpace([0, 0], [0, 1]), [0.3, 0.0], [0.1, 0.01, 0.001], cfg)
    pr_s = analysis.precise_representative(geometry.square(), [0.0, 0.0], [0.1, 0.01, 0.001], cfg)
    prec_ok = (pr_h.limit is not None and abs(pr_h.limit - 0.5) <= 0.02 and pr_h.agrees
               and pr_s.limit is not None and abs(pr_s.limit - 0.25) <= 0.02 and pr_s.agrees)
    dt = time.perf_counter() - t0
    ok = not bad and prec_ok
    record(12, ok, ("smoothing residuals within bars at 20 points" if not bad else "smoothing above bars: "
                    + ", ".join(bad)) + f"; precise values {pr_h.limit:.4f} (hyperplane), {pr_s.limit:.4f} "
                                        f"(corner), mollified {pr_h.mollified:.4f} / {pr_s.mollified:.4f}; {dt:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 13. determinism and runtime


def test_c13_determinism(record, tmp_path):
    t0 = time.perf_counter()
    csvs = []
    statuses = []
    for k, threads in enumerate((1, 2)):
        out = tmp_path / f"run{k}.csv"
        statuses.append(cli.run_config(ACCEPTANCE_CONFIG, csv_out=out, summary_out=tmp_path / f"run{k}.json",
                                       threads=threads, log=open(os.devnull, "w")))
        csvs.append(out.read_bytes())
    identical = csvs[0] == csvs[1] and len(csvs[0].splitlines()) > 1
    dt = time.perf_counter() - t0
    from conftest import _SESSION_START

    session = time.perf_counter() - _SESSION_START
    ok = identical and session <= 1800
    record(13, ok, f"CSV bodies {'identical' if identical else 'DIFFER'} across two runs (1 and 2 threads), "
                   f"config exit status {statuses[0]}; two config runs {dt:.0f} s; session so far {session:.0f} s "
                   f"on {os.cpu_count()} core(s)")
    assert ok
