"""Backward adjoint problems and the classical error representation.

The adjoint ``-phi_t + L* phi = (grad_u f(U))^T phi`` with ``phi(t_c) = psi``
is solved in the reversed time ``s = t_c - t`` as a forward cG problem on a
space-time mesh two degrees richer than the forward one.  Its spatial
operator is the transpose of the forward operator matrix assembled on the
richer space, so no derivative of the coefficients is ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fem_core import SpatialSpace, assemble, assemble_form, build_space, gauss_rule
from .forward_solver import SlabStepper, SpaceTimeSolution
from .problems import adjoint_initial_data

__all__ = ["AdjointSolution", "adjoint_space", "adjoint_knots", "solve_adjoint", "error_functional"]

KNOT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    """Adjoint field stored in reversed time ``s = t_c - t``."""

    reversed: SpaceTimeSolution
    t_c: float
    which: int

    @property
    def space(self) -> SpatialSpace:
        return self.reversed.space

    @property
    def q_t(self) -> int:
        return self.reversed.q_t

    def evaluate(self, t: float) -> np.ndarray:
        return self.reversed.evaluate(self.t_c - t)

    def values_in_forward_slab(self, t: np.ndarray) -> np.ndarray:
        """Coefficient rows at times ``t`` that all lie in one adjoint slab."""
        s = self.t_c - np.asarray(t, dtype=float)
        k = self.reversed.slab_of(float(np.mean(s)))
        vals, _ = self.reversed.basis_in_slab(k, s)
        return vals @ self.reversed.slab_rows(k)


def adjoint_space(problem, U: SpaceTimeSolution, degree_offset: int) -> SpatialSpace:
    s = U.space
    return build_space((s.x_lo, s.x_hi), s.n_elements, s.degree + degree_offset,
                       s.n_components, problem.adjoint_bc)


def adjoint_knots(knots: np.ndarray, t_c: float) -> np.ndarray:
    """Forward knots truncated at ``t_c`` (ascending in t)."""
    span = knots[-1] - knots[0]
    inner = knots[knots < t_c - KNOT_TOL * span]
    return np.append(inner, t_c)


def _reaction_load(problem, U: SpaceTimeSolution, space: SpatialSpace, t_c: float):
    """Load ``(grad_u f(U))^T phi`` for the reversed-time stepper."""
    quad = space.default_quadrature()
    fquad = U.space.quadrature(space.degree + 4)
    nc = space.n_components

    def load(s_times, Yg):
        loads = np.empty_like(Yg)
        jacs = []
        for g, s in enumerate(s_times):
            t = t_c - s
            u = fquad.eval(U.evaluate(t), nc)
            Jt = assemble_form(space, quad, vv=np.swapaxes(problem.gradient(u, quad.x, t), 1, 2), prune=False)
            loads[g] = Jt @ Yg[g]
            jacs.append(Jt)
        return loads, jacs

    return load


def solve_adjoint(problem, event, U: SpaceTimeSolution, t_c: float, which: int,
                  degree_offset: int = 2, n_qt: int | None = None) -> AdjointSolution:
    """Adjoint solution ``phi`` on ``[0, t_c]`` with final data ``psi^(which)``."""
    if not t_c > U.t0:
        raise InvalidArgumentError(f"t_c must lie after the initial time, got {t_c}")
    if t_c > U.T + KNOT_TOL * (U.T - U.t0):
        raise InvalidArgumentError(f"t_c = {t_c} beyond the final time {U.T}")
    if degree_offset < 1:
        raise InvalidArgumentError("degree_offset must be >= 1")
    space = adjoint_space(problem, U, degree_offset)
    q = U.q_t + degree_offset
    knots_t = adjoint_knots(U.knots, t_c)
    s_knots = (t_c - knots_t)[::-1]
    s_knots[0] = 0.0

    psi = adjoint_initial_data(problem, event, which, space,
                               U_at_tc=U.field_at(t_c), t_c=t_c)
    if not np.any(psi):
        rows = np.zeros(((len(s_knots) - 1) * q + 1, space.n_dofs))
        return AdjointSolution(SpaceTimeSolution(space, s_knots, q, rows), t_c, which)

    ops = assemble(space, problem)
    stepper = SlabStepper(space, ops.mass, ops.stiffness_like.T.tocsr(), q, n_qt)
    if problem.is_linear:
        def load(s_times, Yg):
            return None, None
    else:
        load = _reaction_load(problem, U, space, t_c)
    psi[space.constrained_dofs] = 0.0
    rows = stepper.march(psi, s_knots, load, space.dirichlet_values)
    return AdjointSolution(SpaceTimeSolution(space, s_knots, q, rows), t_c, which)


def _fields_at(quad, rows: np.ndarray, nc: int) -> np.ndarray:
    """Evaluate coefficient rows ``(ng, n_dofs)`` at quadrature points -> ``(n_qp, ng, nc)``."""
    ng, n = rows.shape
    stacked = rows.reshape(ng, n // nc, nc).transpose(1, 0, 2).reshape(n // nc, ng * nc)
    return (quad.values @ stacked).reshape(-1, ng, nc), (quad.derivs @ stacked).reshape(-1, ng, nc)


def error_functional(problem, U: SpaceTimeSolution, phi: AdjointSolution, t_c: float | None = None,
                     n_qt: int | None = None) -> float:
    """Adjoint-weighted residual estimate of ``(psi, u(t_c) - U(t_c))``.

    Sum of the initial-error term ``(phi(0), u0 - U(0))`` and the space-time
    residual ``int (phi, f(U) - U_t) - (L2 phi, L1 U) dt`` over ``[0, t_c]``.
    """
    t_c = phi.t_c if t_c is None else t_c
    space_a = phi.space
    nc = space_a.n_components
    n_x = space_a.degree + 6
    qa = space_a.quadrature(n_x)
    qf = U.space.quadrature(n_x)
    x, wx = qa.x, qa.w

    phi0 = qa.eval(phi.evaluate(U.t0), nc)
    e0 = problem.u0(x) - qf.eval(U.evaluate(U.t0), nc)
    total = float(np.sum(wx * np.sum(phi0 * e0, axis=1)))

    rule = gauss_rule(n_qt or U.q_t + (phi.q_t - U.q_t) + 3)
    knots = adjoint_knots(U.knots, t_c)
    for k in range(len(knots) - 1):
        a, b = knots[k], knots[k + 1]
        ts, wt = rule.mapped(a, b)
        slab = min(k, U.n_slabs - 1)
        vals, ders = U.basis_in_slab(slab, ts)
        rows = U.slab_rows(slab)
        Ug, Ugx = _fields_at(qf, vals @ rows, nc)
        Utg, _ = _fields_at(qf, ders @ rows, nc)
        Pg, Pgx = _fields_at(qa, phi.values_in_forward_slab(ts), nc)
        for g, t in enumerate(ts):
            u, u_x, u_t = Ug[:, g], Ugx[:, g], Utg[:, g]
            ph, ph_x = Pg[:, g], Pgx[:, g]
            integrand = np.sum(ph * (problem.f(u, x, t) - u_t), axis=1)
            integrand -= problem.operator_pairing(x, ph, ph_x, u, u_x)
            total += wt[g] * float(np.sum(wx * integrand))
    return total
