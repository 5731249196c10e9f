"""Threshold events of the functional ``G(U; t) = (w, U(., t))``.

Since ``U`` is a degree-``q_t`` polynomial in time on every slab, so is
``G``; it is stored by its values at the slab's time nodes and crossings of
a threshold are located by bracketing and safeguarded Newton refinement.
Tangential contacts (no sign change) are not reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EventNotFoundError, InvalidArgumentError
from .fem_core import lagrange_basis, weighted_vector
from .forward_solver import SpaceTimeSolution, gauss_lobatto_nodes

__all__ = ["FunctionalSeries", "Crossing", "functional_series", "find_crossings", "nth_event"]

ROOT_TOL = 1e-13
MERGE_TOL = 1e-10


@dataclass(frozen=True)
class FunctionalSeries:
    """Values of ``G`` at the time nodes; ``values`` has ``n_slabs*q + 1`` entries."""

    knots: np.ndarray
    q_t: int
    values: np.ndarray

    @property
    def n_slabs(self) -> int:
        return len(self.knots) - 1

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    def slab_values(self, k: int) -> np.ndarray:
        return self.values[k * self.q_t:(k + 1) * self.q_t + 1]

    def _slab(self, t: float) -> int:
        k = int(np.searchsorted(self.knots, t, side="right")) - 1
        return min(max(k, 0), self.n_slabs - 1)

    def eval_in_slab(self, k: int, t) -> tuple[np.ndarray, np.ndarray]:
        """``G`` and ``dG/dt`` at times inside slab ``k``."""
        a, b = self.knots[k], self.knots[k + 1]
        tau = (np.atleast_1d(np.asarray(t, dtype=float)) - a) / (b - a)
        vals, ders = lagrange_basis(gauss_lobatto_nodes(self.q_t), tau)
        coef = self.slab_values(k)
        return vals @ coef, ders @ coef / (b - a)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        slabs = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.n_slabs - 1)
        out = np.empty_like(t)
        for k in np.unique(slabs):
            sel = slabs == k
            out[sel] = self.eval_in_slab(int(k), t[sel])[0]
        return out

    def sample(self, per_slab: int = 20) -> tuple[np.ndarray, np.ndarray]:
        """Uniform samples inside every slab (shared knots listed once)."""
        ts, gs = [self.knots[:1]], [self.values[:1]]
        for k in range(self.n_slabs):
            a, b = self.knots[k], self.knots[k + 1]
            t = a + (b - a) * np.arange(1, per_slab + 1) / per_slab
            t[-1] = b
            g, _ = self.eval_in_slab(k, t)
            g[-1] = self.slab_values(k)[-1]
            ts.append(t)
            gs.append(g)
        return np.concatenate(ts), np.concatenate(gs)


@dataclass(frozen=True)
class Crossing:
    time: float
    slab: int
    direction: str  # "up" | "down"


def functional_series(U: SpaceTimeSolution, event) -> FunctionalSeries:
    wv = weighted_vector(U.space, event.w)
    return FunctionalSeries(np.asarray(U.knots, dtype=float), U.q_t, U.coeffs @ wv)


def _refine(series: FunctionalSeries, k: int, R: float, a: float, b: float,
            ga: float, tol: float) -> float:
    """Root of ``G - R`` in ``[a, b]`` (sign change given) by Newton with bisection fallback."""
    t = 0.5 * (a + b)
    for _ in range(200):
        g, dg = series.eval_in_slab(k, t)
        g = g[0] - R
        dg = dg[0]
        if g == 0.0:
            return t
        if np.sign(g) == np.sign(ga):
            a, ga = t, g
        else:
            b = t
        if b - a < tol:
            break
        t_new = t - g / dg if dg != 0.0 else None
        if t_new is None or not (a < t_new < b):
            t_new = 0.5 * (a + b)
        if abs(t_new - t) < tol:
            t = t_new
            break
        t = t_new
    return t


def _sample_points(series: FunctionalSeries, k: int, R: float, lo: float, cheb: np.ndarray) -> np.ndarray:
    """Sample times on ``[lo, b]`` with at most one root of ``G - R`` between neighbours.

    ``G`` is a polynomial on the slab, so midpoints between consecutive
    (approximate) roots of its Chebyshev interpolant separate every pair.
    """
    a, b = series.knots[k], series.knots[k + 1]
    x = 2.0 * gauss_lobatto_nodes(series.q_t) - 1.0
    coef = np.polynomial.chebyshev.chebfit(x, series.slab_values(k) - R, series.q_t)
    if np.any(coef[1:]):
        roots = np.polynomial.chebyshev.chebroots(np.trim_zeros(coef, "b"))
        r = a + 0.5 * (b - a) * (np.real(roots) + 1.0)
        r = np.sort(r[(r > lo) & (r < b)])
        mids = 0.5 * (r[1:] + r[:-1]) if len(r) > 1 else np.empty(0)
    else:
        mids = np.empty(0)
    ts = np.unique(np.concatenate([lo + (b - lo) * cheb, mids]))
    ts[0], ts[-1] = lo, b
    return ts


def find_crossings(series: FunctionalSeries, R: float, tau: float | None = None) -> list[Crossing]:
    """All transversal roots of ``G(t) = R`` on ``(tau, T]`` in increasing order."""
    tau = series.t0 if tau is None else float(tau)
    span = series.T - series.t0
    if not series.t0 <= tau < series.T:
        raise InvalidArgumentError(f"tau = {tau} outside [{series.t0}, {series.T})")
    tol = ROOT_TOL * span
    n = 4 * series.q_t + 1
    cheb = 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))  # Chebyshev-Lobatto on [0, 1]
    found: list[Crossing] = []
    # last sample with nonzero G - R: (time, value, slab)
    prev = None
    k0 = series._slab(tau)
    for k in range(k0, series.n_slabs):
        a, b = series.knots[k], series.knots[k + 1]
        lo = max(a, tau)
        ts = _sample_points(series, k, R, lo, cheb)
        g, _ = series.eval_in_slab(k, ts)
        g = g - R
        # exact node values where samples coincide with nodes
        if ts[-1] == b:
            g[-1] = series.slab_values(k)[-1] - R
        for t_i, g_i in zip(ts, g):
            if t_i <= tau and not (t_i == tau and prev is None):
                continue
            if t_i == tau:
                if g_i != 0.0:
                    prev = (t_i, g_i, k)
                continue
            if g_i == 0.0:
                continue
            if prev is not None and np.sign(prev[1]) != np.sign(g_i):
                t_a, g_a, _ = prev
                if t_a < a:  # bracket spans a knot: root lies in [t_a, a] or [a, t_i]
                    g_knot = series.slab_values(k)[0] - R
                    if g_knot == 0.0:
                        root = a
                    elif np.sign(g_knot) != np.sign(g_a):
                        root = _refine(series, k - 1, R, t_a, a, g_a, tol)
                    else:
                        root = _refine(series, k, R, a, t_i, g_knot, tol)
                else:
                    root = _refine(series, k, R, t_a, t_i, g_a, tol)
                direction = "up" if g_i > 0 else "down"
                slab = min(int(np.searchsorted(series.knots, root, side="right")) - 1, series.n_slabs - 1)
                if root > tau:
                    if found and root - found[-1].time < MERGE_TOL * span:
                        found.pop()  # two opposite crossings closer than resolution cancel
                    else:
                        found.append(Crossing(float(root), slab, direction))
            prev = (t_i, g_i, k)
    return found


def nth_event(series: FunctionalSeries, R: float, n: int = 1, tau: float | None = None) -> Crossing:
    if n < 1:
        raise InvalidArgumentError(f"occurrence must be >= 1, got {n}")
    crossings = find_crossings(series, R, tau)
    if len(crossings) < n:
        raise EventNotFoundError(len(crossings), n)
    return crossings[n - 1]
