"""Computable estimate of the error in the time to an event.

A first-order Taylor argument around the computed event time ``t_c`` gives::

    t_t - t_c  ~  (w, e(t_c)) / D,
    D = (L2 w, L1 U(t_c)) - (w, f(U, t_c)) - (grad_u f^T w, e(t_c)) + (L2 w, L1 e(t_c))

and the three functionals of the solution error ``e = u - U`` are replaced
by adjoint-weighted residuals E1, E3 and E2 respectively.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .adjoint_solver import error_functional, solve_adjoint
from .errors import DegenerateDenominatorError, EventNotFoundError, UnsupportedError
from .event_qoi import functional_series, nth_event
from .fem_core import gauss_rule
from .forward_solver import SpaceTimeSolution

__all__ = [
    "EstimateReport",
    "ReferenceTruth",
    "analytic_event_time",
    "analytic_functional",
    "denominator_direct",
    "estimate_event_error",
]

DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class EstimateReport:
    t_c: float
    E1: float
    E2: float
    E3: float
    D_direct: float
    D: float
    nu: float
    occurrence: int = 1
    t_t: Optional[float] = None
    e_Q: Optional[float] = None
    rho_eff: Optional[float] = None

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReferenceTruth:
    """Event times taken from a reference solution's crossing list."""

    crossings: Sequence[float]

    def event_time(self, n: int) -> float:
        if len(self.crossings) < n:
            raise EventNotFoundError(len(self.crossings), n)
        return float(self.crossings[n - 1])


def analytic_functional(problem, event, t: float, n_sub: int = 64, n_pts: int = 20) -> float:
    """``(w, u(., t))`` for the exact solution by composite Gauss quadrature."""
    if problem.exact is None:
        raise UnsupportedError(f"{problem.name} has no analytic solution")
    a, b = event.support or problem.domain
    rule = gauss_rule(n_pts)
    edges = np.linspace(a, b, n_sub + 1)
    xs = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * rule.points).ravel()
    ws = (0.5 * np.diff(edges)[:, None] * rule.weights).ravel()
    return float(np.sum(ws * np.sum(event.w(xs) * problem.exact(xs, t), axis=1)))


def analytic_event_time(problem, event, n: int | None = None, n_scan: int = 4000) -> float:
    """Time of the n-th transversal crossing of the exact functional."""
    if problem.exact is None:
        raise UnsupportedError(f"{problem.name} has no analytic solution")
    n = n or event.occurrence
    R = event.threshold

    def g(t):
        return analytic_functional(problem, event, t) - R

    ts = np.linspace(event.tau, problem.t_final, n_scan + 1)
    vals = np.array([g(t) for t in ts])
    roots = []
    last = None  # (t, value) of the last nonzero sample
    for t, v in zip(ts, vals):
        if v == 0.0:
            continue
        if last is not None and np.sign(v) != np.sign(last[1]):
            roots.append(brentq(g, last[0], t, xtol=1e-15, rtol=4 * np.finfo(float).eps))
        last = (t, v)
    roots = [r for r in roots if r > event.tau]
    if len(roots) < n:
        raise EventNotFoundError(len(roots), n)
    return float(roots[n - 1])


def denominator_direct(problem, event, U: SpaceTimeSolution, t_c: float, n_points: int | None = None) -> float:
    """``(L2 w, L1 U(t_c)) - (w, f(U(t_c), ., t_c))`` with analytic ``w``."""
    space = U.space
    nc = space.n_components
    quad = space.quadrature(n_points or space.degree + 8)
    coeffs = U.evaluate(t_c)
    u, u_x = quad.eval(coeffs, nc), quad.eval_dx(coeffs, nc)
    x = quad.x
    w, w_x = event.w(x), event.w_dx(x)
    integrand = problem.operator_pairing(x, w, w_x, u, u_x) - np.sum(w * problem.f(u, x, t_c), axis=1)
    return float(np.sum(quad.w * integrand))


def _resolve_truth(truth, problem, event, n: int) -> Optional[float]:
    if truth is None:
        return None
    if isinstance(truth, str):
        if truth != "analytic":
            raise UnsupportedError(f"unknown truth source {truth!r}")
        return analytic_event_time(problem, event, n)
    if isinstance(truth, (int, float)):
        return float(truth)
    return truth.event_time(n)


def estimate_event_error(problem, event, U: SpaceTimeSolution, truth=None, occurrence: int | None = None,
                         degree_offset: int = 2, include_E3: bool = True) -> EstimateReport:
    """Estimate ``t_t - t_c`` for the ``occurrence``-th event of ``U``.

    ``truth`` is ``None``, ``"analytic"``, a number, or an object with an
    ``event_time(n)`` method such as :class:`ReferenceTruth`.
    """
    n = occurrence or event.occurrence
    series = functional_series(U, event)
    t_c = nth_event(series, event.threshold, n, event.tau).time

    estimates = {}
    for which in (1, 2, 3):
        if which == 3 and (problem.is_linear or not include_E3):
            estimates[3] = 0.0
            continue
        phi = solve_adjoint(problem, event, U, t_c, which, degree_offset)
        estimates[which] = error_functional(problem, U, phi, t_c)
    E1, E2, E3 = estimates[1], estimates[2], estimates[3]

    D_direct = denominator_direct(problem, event, U, t_c)
    D = D_direct - E3 + E2
    if abs(D) < DEGENERATE_TOL * max(abs(D_direct), 1.0):
        raise DegenerateDenominatorError(f"denominator {D:.3e} vanishes at t_c = {t_c}")
    nu = E1 / D

    t_t = _resolve_truth(truth, problem, event, n)
    e_Q = rho = None
    if t_t is not None:
        e_Q = float(t_t - t_c)
        rho = float(nu / e_Q) if e_Q != 0.0 else math.nan
    return EstimateReport(float(t_c), float(E1), float(E2), float(E3), float(D_direct), float(D),
                          float(nu), int(n), t_t, e_Q, rho)
