"""Acceptance criteria, each at its stated tolerance.

Constants below are the published event times and errors; every
criterion prints one PASS/FAIL line (also repeated in the terminal summary).
"""

import time
from functools import lru_cache

import numpy as np

from eventerr.adjoint_solver import error_functional, solve_adjoint
from eventerr.estimator import ReferenceTruth, analytic_event_time, estimate_event_error
from eventerr.event_qoi import FunctionalSeries, find_crossings, functional_series
from eventerr.fem_core import assemble, build_space, gauss_rule, interpolate, mass_matrix
from eventerr.forward_solver import TimePartition, forward_space, solve_forward
from eventerr.problems import GRAVITY, make_problem

from _oracles import brute_force_crossings, heat_decay_mode, monomial_integral

MESHES = (50, 100, 200, 400)

HEAT_LINEAR_TC = (0.346346, 0.347711, 0.348053, 0.348138)
HEAT_LINEAR_EQ = (1.820e-3, 4.546e-4, 1.129e-4, 2.839e-5)
HEAT_NONLINEAR_TC = (0.346531, 0.347757, 0.348065, 0.348140)
HEAT_NONLINEAR_EQ = (1.635e-3, 4.087e-4, 1.015e-4, 2.553e-5)
SWE_MANUFACTURED_TC = (0.820996, 0.819917, 0.819883, 0.819878)
SWE_CONSTANT_TC = {200: (13.3495, 20.1529, 89.4961), 400: (13.3499, 20.1531, 89.4931)}


def _forward(name, N, q_t, q_s):
    prob, event = make_problem(name)
    space = forward_space(prob, N, q_s)
    return prob, event, solve_forward(prob, space, TimePartition(0.0, prob.t_final, N), q_t)


@lru_cache(maxsize=None)
def _analytic_sweep(name, q_t, q_s, meshes=MESHES):
    out = []
    for N in meshes:
        prob, event, U = _forward(name, N, q_t, q_s)
        out.append(estimate_event_error(prob, event, U, truth="analytic"))
    return tuple(out)


def _reference_sweep(name, q_t, q_s, meshes, n_ref, events=(1, 2, 3)):
    prob, event = make_problem(name)
    ref = solve_forward(prob, forward_space(prob, n_ref, 3), TimePartition(0.0, prob.t_final, n_ref), 3)
    truth = ReferenceTruth([c.time for c in find_crossings(functional_series(ref, event), event.threshold)])
    table = {}
    for N in meshes:
        _, _, U = _forward(name, N, q_t, q_s)
        table[N] = [estimate_event_error(prob, event, U, truth, occurrence=n) for n in events]
    return table


def _in(x, lo, hi):
    return lo <= x <= hi


def test_criterion_1_heat_linear_published_values(report_criterion):
    start = time.perf_counter()
    _analytic_sweep.cache_clear()
    rows = _analytic_sweep("heat_linear", 1, 1)
    prob, event = make_problem("heat_linear")
    t_t = analytic_event_time(prob, event)
    elapsed = time.perf_counter() - start
    checks = []
    for N, r, tc, eq in zip(MESHES, rows, HEAT_LINEAR_TC, HEAT_LINEAR_EQ):
        checks.append((f"N={N} t_c {r.t_c:.6f} vs {tc}", abs(r.t_c - tc) <= 2e-5))
        checks.append((f"N={N} e_Q {r.e_Q:.4e} vs {eq}", abs(r.e_Q / eq - 1) <= 0.05))
        checks.append((f"N={N} rho {r.rho_eff:.4f}", _in(r.rho_eff, 0.995, 1.005)))
    checks.append((f"t_t {t_t:.10f}", abs(t_t - 0.34816603) <= 1e-7))
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 30))
    ok, line = report_criterion(1, "heat_linear published values", checks, elapsed)
    assert ok, line


def test_criterion_2_heat_nonlinear_published_values(report_criterion):
    start = time.perf_counter()
    rows = _analytic_sweep("heat_nonlinear", 1, 1)
    elapsed = time.perf_counter() - start
    checks = []
    for N, r, tc, eq in zip(MESHES, rows, HEAT_NONLINEAR_TC, HEAT_NONLINEAR_EQ):
        checks.append((f"N={N} t_c {r.t_c:.6f} vs {tc}", abs(r.t_c - tc) <= 2e-5))
        checks.append((f"N={N} e_Q {r.e_Q:.4e} vs {eq}", abs(r.e_Q / eq - 1) <= 0.05))
        checks.append((f"N={N} rho {r.rho_eff:.4f}", _in(r.rho_eff, 0.995, 1.005)))
        checks.append((f"N={N} E3 nonzero", r.E3 != 0.0))
        # dropping E3 turns D into D_direct + E2
        rho_drop = r.E1 / (r.D_direct + r.E2) / r.e_Q
        growth = abs(rho_drop - 1) - abs(r.rho_eff - 1)
        checks.append((f"N={N} dropping E3 growth {growth:.2e} >= {abs(r.E3 / r.D):.2e}",
                       growth >= abs(r.E3 / r.D)))
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 60))
    ok, line = report_criterion(2, "heat_nonlinear published values and E3 effect", checks, elapsed)
    assert ok, line


def test_criterion_3_swe_manufactured_published_values(report_criterion):
    start = time.perf_counter()
    rows = _analytic_sweep("swe_manufactured", 2, 2)
    prob, event = make_problem("swe_manufactured")
    t_t = analytic_event_time(prob, event)
    elapsed = time.perf_counter() - start
    checks = []
    for N, r, tc in zip(MESHES, rows, SWE_MANUFACTURED_TC):
        checks.append((f"N={N} t_c {r.t_c:.6f} vs {tc}", abs(r.t_c - tc) <= 2e-5))
        if N >= 100:
            checks.append((f"N={N} rho {r.rho_eff:.4f}", _in(r.rho_eff, 0.995, 1.005)))
    checks.append((f"t_t {t_t:.9f}", abs(t_t - 0.81987644) <= 1e-6))
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 300))
    ok, line = report_criterion(3, "swe_manufactured published values", checks, elapsed)
    assert ok, line


def test_criterion_4_swe_constant_published_values(report_criterion):
    start = time.perf_counter()
    table = _reference_sweep("swe_constant", 2, 2, (200, 400), 800)
    elapsed = time.perf_counter() - start
    checks = []
    for N, reports in table.items():
        for n, (r, tc) in enumerate(zip(reports, SWE_CONSTANT_TC[N]), start=1):
            checks.append((f"N={N} event {n} rho {r.rho_eff:.4f}", _in(r.rho_eff, 0.95, 1.05)))
            checks.append((f"N={N} event {n} t_c {r.t_c:.4f} vs {tc}", abs(r.t_c - tc) <= 5e-3))
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 1800))
    ok, line = report_criterion(4, "swe_constant published values", checks, elapsed)
    assert ok, line


def test_criterion_5_swe_shelf_effectivity(report_criterion):
    start = time.perf_counter()
    meshes = (80, 160, 320, 640)
    quad = _reference_sweep("swe_shelf", 2, 2, meshes, 1280)
    lin = _reference_sweep("swe_shelf", 2, 1, meshes, 1280)
    elapsed = time.perf_counter() - start
    checks = []
    for label, table in (("cG(2,2)", quad), ("cG(2,1)", lin)):
        for N in meshes[-2:]:
            for n, r in enumerate(table[N], start=1):
                checks.append((f"{label} N={N} event {n} rho {r.rho_eff:.4f}", _in(r.rho_eff, 0.9, 1.1)))
    for N in meshes:
        for n in (2, 3):
            a, b = abs(lin[N][n - 1].e_Q), abs(quad[N][n - 1].e_Q)
            checks.append((f"N={N} event {n} |e_Q| cG(2,1) {a:.2e} > cG(2,2) {b:.2e}", a > b))
    ok, line = report_criterion(5, "swe_shelf effectivity and scheme ordering", checks, elapsed)
    assert ok, line


def test_criterion_6_swe_reef_properties(report_criterion):
    start = time.perf_counter()
    meshes = (80, 160, 320, 640)
    table = _reference_sweep("swe_reef", 2, 2, meshes, 1280)
    elapsed = time.perf_counter() - start
    checks = []
    for N in meshes:
        checks.append((f"N={N} three events", len(table[N]) == 3))
    for N in meshes[-2:]:
        for n, r in enumerate(table[N], start=1):
            checks.append((f"N={N} event {n} rho {r.rho_eff:.4f}", _in(r.rho_eff, 0.9, 1.1)))
    for n in range(3):
        errs = [abs(table[N][n].e_Q) for N in meshes]
        checks.append((f"event {n + 1} |e_Q| decreasing {['%.2e' % e for e in errs]}",
                       all(a > b for a, b in zip(errs[:-1], errs[1:]))))
    ok, line = report_criterion(6, "swe_reef properties", checks, elapsed)
    assert ok, line


def _galerkin_residual(q):
    prob, _ = make_problem("heat_linear")
    space = forward_space(prob, 6, 2)
    U = solve_forward(prob, space, TimePartition(0.0, 0.5, 5), q)
    ops = assemble(space, prob)
    worst = 0.0
    rule = gauss_rule(q + 4)
    for k in range(U.n_slabs):
        a, b = U.knots[k], U.knots[k + 1]
        ts, wt = rule.mapped(a, b)
        P = np.polynomial.legendre.legvander(2 * (ts - a) / (b - a) - 1, q - 1)
        res = np.zeros((space.n_dofs, q))
        for t, w, Pt in zip(ts, wt, P):
            load = ops.mass @ interpolate(space, lambda x: prob.source(x, t))
            r = ops.mass @ U.evaluate_dt(t) + ops.stiffness_like @ U.evaluate(t) - load
            res += w * np.outer(r, Pt)
        worst = max(worst, np.abs(res[space.free_dofs]).max())
    return worst


def _strong_residuals():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for name in ("heat_linear", "heat_nonlinear"):
        prob, _ = make_problem(name)
        x, t = rng.uniform(0, 1, 100), rng.uniform(0, 0.5, 100)
        u = np.cos(t) * np.sin(np.pi * x)
        res = -np.sin(t) * np.sin(np.pi * x) + np.pi ** 2 * u
        f = np.array([prob.f(np.array([[ui]]), np.array([xi]), ti)[0, 0] for ui, xi, ti in zip(u, x, t)])
        worst = max(worst, np.abs(res - f).max())
    prob, _ = make_problem("swe_manufactured")
    x, t = rng.uniform(0, 10, 100), rng.uniform(0, 1, 100)
    d_t = -np.sin(t) * np.sin(np.pi * x)
    d_x = np.pi * np.cos(t) * np.cos(np.pi * x)
    f = np.array([prob.f(None, np.array([xi]), ti)[0] for xi, ti in zip(x, t)])
    worst = max(worst, np.abs(d_t + d_x - f[:, 0]).max(),
                np.abs(d_t + GRAVITY * 12.0 * d_x - f[:, 1]).max())
    return worst


def test_criterion_7_property_suite(report_criterion):
    start = time.perf_counter()
    checks = []

    quad_ok = all(
        np.isclose(np.sum(w * x ** k), monomial_integral(k, 0.0, 1.0), rtol=1e-12, atol=1e-14)
        for n in range(1, 31) for x, w in [gauss_rule(n).mapped(0.0, 1.0)] for k in range(2 * n)
    )
    checks.append(("quadrature exact to degree 2n-1", quad_ok))

    spd = pou = True
    for degree in (1, 2, 3, 4):
        space = build_space((0.0, 1.0), 7, degree)
        M = mass_matrix(space).toarray()
        spd &= bool(np.allclose(M, M.T) and np.linalg.eigvalsh(M).min() > 0)
        qp = space.default_quadrature()
        pou &= bool(np.allclose(np.asarray(qp.values.sum(axis=1)).ravel(), 1.0, atol=1e-13))
    checks.append(("mass matrix SPD", spd))
    checks.append(("partition of unity", pou))

    g = max(_galerkin_residual(q) for q in (1, 2, 3))
    checks.append((f"Galerkin orthogonality {g:.1e}", g < 1e-10))

    prob, event, U = _forward("swe_constant", 100, 2, 2)
    qp = U.space.default_quadrature()
    mass = np.array([np.sum(qp.w * qp.eval(row, 2)[:, 0]) for row in U.coeffs])
    drift = np.abs(mass - mass[0]).max() / abs(mass[0])
    checks.append((f"SWE mass drift {drift:.1e}", drift < 1e-9))

    prob, event, U = _forward("heat_linear", 50, 1, 1)
    s = functional_series(U, event)
    found = np.array([c.time for c in find_crossings(s, event.threshold)])
    ref = brute_force_crossings(s, 0.0, 0.5, event.threshold)
    rng = np.random.default_rng(9)
    rs = FunctionalSeries(np.linspace(0, 1, 9), 3, rng.standard_normal(25))
    found2 = np.array([c.time for c in find_crossings(rs, 0.1)])
    ref2 = brute_force_crossings(rs, 0.0, 1.0, 0.1)
    same = (len(found) == len(ref) and np.all(np.abs(found - ref) < 1e-9 * 0.5)
            and len(found2) == len(ref2) and np.all(np.abs(found2 - ref2) < 1e-9))
    checks.append(("event finder vs 1e6-point scan", bool(same)))

    zero = True
    for name, q in (("heat_linear", 1), ("swe_manufactured", 2), ("swe_constant", 2),
                    ("swe_shelf", 2), ("swe_reef", 2)):
        p, e, V = _forward(name, 16, q, q)
        phi = solve_adjoint(p, e, V, 0.5 * p.t_final, 3)
        zero &= error_functional(p, V, phi) == 0.0
    checks.append(("E3 = 0 for linear problems", zero))

    sr = _strong_residuals()
    checks.append((f"manufactured strong residual {sr:.1e}", sr < 1e-10))

    prob, event, U = _forward("heat_linear", 50, 1, 1)
    phi = solve_adjoint(prob, event, U, 0.3, 1)
    x = phi.space.nodes
    dm = max(np.abs(phi.evaluate(t) - heat_decay_mode(x, t, 0.3)).max() for t in np.linspace(0, 0.3, 31))
    checks.append((f"adjoint decay mode {dm:.1e}", dm < 1e-8))

    elapsed = time.perf_counter() - start
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 120))
    ok, line = report_criterion(7, "property suite", checks, elapsed)
    assert ok, line


def test_criterion_8_convergence_orders(report_criterion):
    start = time.perf_counter()
    heat = _analytic_sweep("heat_linear", 1, 1)
    man = _analytic_sweep("swe_manufactured", 2, 2)
    elapsed = time.perf_counter() - start
    checks = []
    for (Na, a), (Nb, b) in zip(zip(MESHES, heat), zip(MESHES[1:], heat[1:])):
        f = a.e_Q / b.e_Q
        checks.append((f"heat_linear {Na}->{Nb} factor {f:.2f}", _in(f, 3.5, 4.5)))
    f = man[1].e_Q / man[2].e_Q
    checks.append((f"swe_manufactured 100->200 factor {f:.2f}", f >= 3))
    ok, line = report_criterion(8, "convergence orders", checks, elapsed)
    assert ok, line
