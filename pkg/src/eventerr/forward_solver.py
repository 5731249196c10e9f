"""Space-time continuous Galerkin cG(q_t, q_s) time stepping.

On each slab ``[t_n, t_n + p]`` the solution is a degree-``q_t`` Lagrange
polynomial in time (Gauss-Lobatto nodes, so the first node coincides with
the previous slab's last one) with coefficients in the spatial FE space.
The test space uses Legendre polynomials of degree ``< q_t`` in time.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, SolverFailureError
from .fem_core import (
    BandedMatrix,
    SpatialSpace,
    assemble,
    assemble_form,
    build_space,
    gauss_rule,
    interpolate,
    lagrange_basis,
    load_vector,
    mass_matrix,
)

__all__ = [
    "TimePartition",
    "SpaceTimeSolution",
    "SlabStepper",
    "gauss_lobatto_nodes",
    "forward_space",
    "solve_forward",
    "evaluate",
    "evaluate_dt",
]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 25
ROUNDOFF_ACCEPT = 1e-9


@dataclass(frozen=True)
class TimePartition:
    t0: float
    T: float
    n_slabs: int

    def __post_init__(self):
        if self.n_slabs < 1 or not self.T > self.t0:
            raise InvalidArgumentError(f"invalid time partition {self}")

    @property
    def width(self) -> float:
        return (self.T - self.t0) / self.n_slabs

    @property
    def knots(self) -> np.ndarray:
        k = self.t0 + self.width * np.arange(self.n_slabs + 1)
        k[-1] = self.T
        return k


def gauss_lobatto_nodes(q: int) -> np.ndarray:
    """``q + 1`` Gauss-Lobatto points on [0, 1]."""
    return _lobatto(int(q)).copy()


@lru_cache(maxsize=None)
def _lobatto(q: int) -> np.ndarray:
    if q < 1:
        raise InvalidArgumentError("time degree must be >= 1")
    interior = np.polynomial.legendre.Legendre.basis(q).deriv().roots() if q > 1 else np.array([])
    pts = np.concatenate([[-1.0], np.sort(np.real(interior)), [1.0]])
    pts = 0.5 * (pts - pts[::-1])  # symmetric
    return 0.5 * (pts + 1.0)


def _shifted_legendre(m_max: int, tau: np.ndarray) -> np.ndarray:
    """Legendre polynomials ``P_m(2 tau - 1)`` for ``m < m_max``, shape ``(len(tau), m_max)``."""
    return np.polynomial.legendre.legvander(2.0 * np.asarray(tau) - 1.0, m_max - 1)


@dataclass(frozen=True, eq=False)
class SpaceTimeSolution:
    """Continuous-in-time piecewise polynomial field.

    ``coeffs`` has ``n_slabs * q_t + 1`` rows; slab ``k`` owns rows
    ``k*q_t .. (k+1)*q_t`` so neighbouring slabs share their interface row.
    """

    space: SpatialSpace
    knots: np.ndarray
    q_t: int
    coeffs: np.ndarray

    def __post_init__(self):
        rows = (len(self.knots) - 1) * self.q_t + 1
        if self.coeffs.shape != (rows, self.space.n_dofs):
            raise InvalidArgumentError(
                f"coefficients have shape {self.coeffs.shape}, expected {(rows, self.space.n_dofs)}"
            )

    @property
    def n_slabs(self) -> int:
        return len(self.knots) - 1

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    @property
    def time_nodes(self) -> np.ndarray:
        return gauss_lobatto_nodes(self.q_t)

    def slab_rows(self, k: int) -> np.ndarray:
        return self.coeffs[k * self.q_t:(k + 1) * self.q_t + 1]

    def node_times(self, k: int) -> np.ndarray:
        a, b = self.knots[k], self.knots[k + 1]
        return a + (b - a) * self.time_nodes

    def slab_of(self, t: float, left: bool = False) -> int:
        side = "left" if left else "right"
        k = int(np.searchsorted(self.knots, t, side=side)) - 1
        return min(max(k, 0), self.n_slabs - 1)

    def _check(self, t):
        span = self.T - self.t0
        if t < self.t0 - 1e-14 * span or t > self.T + 1e-14 * span:
            raise InvalidArgumentError(f"t = {t} outside [{self.t0}, {self.T}]")

    def basis_in_slab(self, k: int, t) -> tuple[np.ndarray, np.ndarray]:
        """Time basis values and t-derivatives at times ``t`` inside slab ``k``."""
        a, b = self.knots[k], self.knots[k + 1]
        tau = (np.atleast_1d(np.asarray(t, dtype=float)) - a) / (b - a)
        vals, ders = lagrange_basis(self.time_nodes, tau)
        return vals, ders / (b - a)

    def evaluate(self, t: float) -> np.ndarray:
        self._check(t)
        k = self.slab_of(t)
        rows = self.slab_rows(k)
        if t == self.knots[k]:
            return rows[0].copy()
        if t == self.knots[k + 1]:
            return rows[-1].copy()
        vals, _ = self.basis_in_slab(k, t)
        return vals[0] @ rows

    def evaluate_dt(self, t: float) -> np.ndarray:
        self._check(t)
        k = self.slab_of(t, left=True)
        _, ders = self.basis_in_slab(k, t)
        return ders[0] @ self.slab_rows(k)

    def field_at(self, t: float) -> Callable:
        """Callable ``x -> (n, nc)`` values of the solution at time ``t``."""
        coeffs = self.evaluate(t)
        space = self.space

        def fn(x):
            E = space.eval_matrix(x)
            return E @ coeffs.reshape(-1, space.n_components)

        return fn


def evaluate(U: SpaceTimeSolution, t: float) -> np.ndarray:
    return U.evaluate(t)


def evaluate_dt(U: SpaceTimeSolution, t: float) -> np.ndarray:
    return U.evaluate_dt(t)


class SlabStepper:
    """Solve ``M y' + K y = load(y, t)`` slab by slab with cG(q) in time.

    ``load(times, Y)`` receives the time quadrature points of a slab and the
    solution there (shape ``(n_qt, n_dofs)``); it returns the assembled load
    vectors ``(n_qt, n_dofs)`` and either ``None`` (load independent of y)
    or a list of sparse Jacobians ``d load / d y`` per time point.
    """

    def __init__(self, space: SpatialSpace, M, K, q: int, n_qt: int | None = None):
        self.space = space
        self.M = sp.csr_matrix(M)
        self.K = sp.csr_matrix(K)
        self.q = q
        self.n_qt = n_qt or q + 3
        rule = gauss_rule(self.n_qt)
        self.tau = 0.5 * (rule.points + 1.0)
        self.omega = 0.5 * rule.weights
        nodes = gauss_lobatto_nodes(q)
        self.lvals, lders = lagrange_basis(nodes, self.tau)  # (ng, q+1)
        P = _shifted_legendre(q, self.tau)  # (ng, q)
        self.Lw = (P * self.omega[:, None]).T  # (q, ng)
        self.A = self.Lw @ lders  # (q, q+1)  int P_m l_j'
        self.Bt = self.Lw @ self.lvals  # (q, q+1)  int P_m l_j
        self.free = space.free_dofs
        self.constrained = space.constrained_dofs
        self.idx = (self.free[:, None] * q + np.arange(q)[None, :]).ravel()
        self._base_cache: dict = {}
        self._lu_cache: dict = {}

    def _base(self, p: float) -> sp.csr_matrix:
        key = float(p)
        if key not in self._base_cache:
            S = sp.kron(self.M, self.A[:, 1:], format="csr") + p * sp.kron(self.K, self.Bt[:, 1:], format="csr")
            self._base_cache[key] = S
        return self._base_cache[key]

    def _restrict(self, S) -> sp.csr_matrix:
        return S[self.idx][:, self.idx]

    def jacobian(self, p: float, jacs=None) -> sp.csr_matrix:
        """Jacobian of the free slab residual w.r.t. the free unknowns."""
        S = self._base(p)
        if jacs is not None:
            S = S - p * self._coupled(jacs)
        return self._restrict(S)

    def _coupled(self, jacs) -> sp.csr_matrix:
        """``sum_g kron(J_g, Lw[:, g] lvals[g, 1:])`` over the time points."""
        jacs = [sp.csr_matrix(J) for J in jacs]
        smalls = self.Lw.T[:, :, None] * self.lvals[:, None, 1:]  # (ng, q, q)
        first = jacs[0]
        if all(J.nnz == first.nnz and np.array_equal(J.indptr, first.indptr)
               and np.array_equal(J.indices, first.indices) for J in jacs[1:]):
            data = np.stack([J.data for J in jacs])  # (ng, nnz)
            blocks = (data.T @ smalls.reshape(len(jacs), -1)).reshape(-1, self.q, self.q)
            q = self.q
            n = first.shape[0]
            return sp.bsr_matrix((blocks, first.indices, first.indptr),
                                 shape=(n * q, n * q)).tocsr()
        total = sp.kron(jacs[0], smalls[0], format="csr")
        for J, small in zip(jacs[1:], smalls[1:]):
            total = total + sp.kron(J, small, format="csr")
        return total

    def _lu(self, p: float, jacs):
        if jacs is None:
            key = float(p)
            lu = self._lu_cache.get(key)
            if lu is None:
                lu = BandedMatrix.from_sparse(self.jacobian(p)).factor()
                self._lu_cache = {key: lu} if len(self._lu_cache) > 4 else {**self._lu_cache, key: lu}
            return lu
        return BandedMatrix.from_sparse(self.jacobian(p, jacs)).factor()

    def residual(self, Y: np.ndarray, t0: float, p: float, load) -> tuple[np.ndarray, float, list | None]:
        """Free-row slab residual (flattened), its scale and the load Jacobians."""
        times = t0 + p * self.tau
        Yg = self.lvals @ Y.T  # (ng, n)
        L, jacs = load(times, Yg)
        t1 = (self.M @ Y) @ self.A.T
        t2 = p * ((self.K @ Y) @ self.Bt.T)
        t3 = p * (L.T @ self.Lw.T) if L is not None else 0.0
        R = (t1 + t2 - t3)[self.free]
        scale = (np.linalg.norm(t1[self.free]) + np.linalg.norm(t2[self.free])
                 + (np.linalg.norm(t3[self.free]) if L is not None else 0.0))
        return R.ravel(), scale, jacs

    def step(self, y0: np.ndarray, t0: float, p: float, load, bc_values=None,
             slab: int = 0, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
        """Rows ``(q + 1, n_dofs)`` of the solution on one slab."""
        q = self.q
        Y = np.empty((len(y0), q + 1))
        Y[:, :] = y0[:, None]
        if bc_values is not None and len(self.constrained):
            times = t0 + p * gauss_lobatto_nodes(q)
            for j in range(1, q + 1):
                Y[self.constrained, j] = bc_values(times[j])
        rel = prev = np.inf
        for it in range(max_iter + 1):
            R, scale, jacs = self.residual(Y, t0, p, load)
            norm = np.linalg.norm(R)
            rel = norm / scale if scale > 0 else norm
            if norm <= tol * scale:
                return Y.T.copy()
            # roundoff floor of an ill-conditioned slab system: a further
            # correction no longer reduces the residual
            if rel < ROUNDOFF_ACCEPT and rel > 0.5 * prev:
                return Y.T.copy()
            if it == max_iter:
                break
            prev = rel
            dz = self._lu(p, jacs).solve(R)
            Y[self.free, 1:] -= dz.reshape(-1, q)
        raise SolverFailureError(slab, rel)

    def march(self, y0: np.ndarray, knots: np.ndarray, load, bc_values=None) -> np.ndarray:
        q = self.q
        n_slabs = len(knots) - 1
        rows = np.empty((n_slabs * q + 1, len(y0)))
        rows[0] = y0
        for k in range(n_slabs):
            Yk = self.step(rows[k * q], knots[k], knots[k + 1] - knots[k], load, bc_values, slab=k)
            rows[k * q + 1:(k + 1) * q + 1] = Yk[1:]
        return rows


def forward_space(problem, n_elements: int, degree: int) -> SpatialSpace:
    return build_space(problem.domain, n_elements, degree, problem.n_components, problem.bc)


def forward_load(problem, space: SpatialSpace, mode: str = "interpolated"):
    """Load callback for :class:`SlabStepper`.

    The u-dependent reaction part of ``f`` is always integrated by
    quadrature.  With ``mode="interpolated"`` the source part enters through
    its nodal interpolant (load ``M I_h s``); ``mode="quadrature"``
    integrates it directly.
    """
    if mode not in ("interpolated", "quadrature"):
        raise InvalidArgumentError(f"unknown load mode {mode!r}")
    nc = space.n_components
    quad = space.data_quadrature()
    M = mass_matrix(space)
    nodes = space.nodes

    def source_vector(t):
        if mode == "interpolated":
            return M @ np.ascontiguousarray(problem.source(nodes, t), dtype=float).ravel()
        return load_vector(space, quad, problem.source(quad.x, t))

    def load(times, Yg):
        if problem.forcing_is_zero:
            return None, None
        loads = np.empty_like(Yg)
        jacs = [] if problem.reaction is not None and not problem.is_linear else None
        for g, t in enumerate(times):
            loads[g] = source_vector(t)
            if problem.reaction is not None:
                u = quad.eval(Yg[g], nc)
                loads[g] += load_vector(space, quad, problem.reaction(u, quad.x, t))
                if jacs is not None:
                    jacs.append(assemble_form(space, quad, vv=problem.gradient(u, quad.x, t), prune=False))
        return loads, jacs

    return load


def solve_forward(problem, space: SpatialSpace, partition: TimePartition, q_t: int,
                  n_qt: int | None = None, load: str = "interpolated") -> SpaceTimeSolution:
    """cG(q_t, space.degree) approximation on ``partition``.

    ``load`` selects how the forcing enters the slab equations, see
    :func:`forward_load`.
    """
    if q_t < 1:
        raise InvalidArgumentError("q_t must be >= 1")
    ops = assemble(space, problem)
    stepper = SlabStepper(space, ops.mass, ops.stiffness_like, q_t, n_qt)
    y0 = interpolate(space, problem.u0)
    if len(space.constrained_dofs):
        y0[space.constrained_dofs] = space.dirichlet_values(partition.t0)
    rows = stepper.march(y0, partition.knots, forward_load(problem, space, load), space.dirichlet_values)
    return SpaceTimeSolution(space, partition.knots, q_t, rows)
