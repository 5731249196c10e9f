"""Catalog of model problems: heat equations and linearised shallow water.

Each entry bundles the PDE data (forcing and its Jacobian, boundary data,
initial data, bathymetry, exact solution when one is known) with the event
definition (weight function, threshold, occurrence index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError
from .fem_core import DirichletBC, SpatialSpace, interpolate

__all__ = [
    "GRAVITY",
    "ProblemSpec",
    "EventSpec",
    "CATALOG",
    "make_problem",
    "adjoint_initial_data",
    "quartic_bump",
]

GRAVITY = 9.8

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    kind: str  # "heat-linear" | "heat-semilinear" | "swe-linearized"
    domain: tuple[float, float]
    t_final: float
    source: Callable  # s(x, t) -> (n, nc), the u-independent part of f
    u0: Field
    bc: tuple[DirichletBC, ...]
    adjoint_bc: tuple[DirichletBC, ...]
    reaction: Optional[Callable] = None  # r(u, x, t) -> (n, nc); f = r + s
    grad_u_f: Optional[Callable] = None  # (u, x, t) -> (n, nc, nc); None when f is u-independent
    exact: Optional[Callable] = None  # (x, t) -> (n, nc)
    bathymetry: Optional[Field] = None
    bathymetry_dx: Optional[Field] = None
    rest_height: float = 0.0
    gravity: float = GRAVITY
    forcing_is_zero: bool = False
    description: str = ""

    @property
    def n_components(self) -> int:
        return 2 if self.kind == "swe-linearized" else 1

    @property
    def is_linear(self) -> bool:
        return self.grad_u_f is None

    def depth(self, x) -> np.ndarray:
        """Rest depth ``rest_height - B(x)`` (SWE only)."""
        return self.rest_height - self.bathymetry(np.asarray(x, dtype=float))

    def depth_dx(self, x) -> np.ndarray:
        return -self.bathymetry_dx(np.asarray(x, dtype=float))

    def f(self, u, x, t) -> np.ndarray:
        """Full right-hand side ``f(u, x, t)``, shape ``(n, nc)``."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.source(x, t), dtype=float)
        if self.reaction is not None:
            out = out + self.reaction(u, x, t)
        return out

    def gradient(self, u, x, t) -> np.ndarray:
        """Pointwise ``d f_i / d u_j``; zeros for u-independent forcing."""
        n = len(x)
        if self.grad_u_f is None:
            return np.zeros((n, self.n_components, self.n_components))
        return self.grad_u_f(u, x, t)

    def operator_coefficients(self, x) -> dict:
        """Coefficients of ``(L1 u, L2 v)`` in the form used by ``assemble_form``."""
        x = np.asarray(x, dtype=float)
        n = len(x)
        if self.kind == "swe-linearized":
            vd = np.zeros((n, 2, 2))
            vd[:, 0, 1] = 1.0
            vd[:, 1, 0] = self.gravity * self.depth(x)
            return {"vd": vd}
        return {"dd": np.ones((n, 1, 1))}

    def operator_pairing(self, x, v, v_x, u, u_x) -> np.ndarray:
        """Pointwise integrand of ``(L1 u, L2 v)``; arrays are ``(n, nc)``."""
        if self.kind == "swe-linearized":
            gh = self.gravity * self.depth(x)
            return v[:, 0] * u_x[:, 1] + v[:, 1] * gh * u_x[:, 0]
        return v_x[:, 0] * u_x[:, 0]

    def strong_operator(self, x, u_x, u_xx) -> np.ndarray:
        """``L u`` in strong form, for residual checks."""
        if self.kind == "swe-linearized":
            gh = self.gravity * self.depth(x)
            return np.column_stack([u_x[:, 1], gh * u_x[:, 0]])
        return -u_xx


@dataclass(frozen=True, eq=False)
class EventSpec:
    w: Field
    w_dx: Field
    w_dxx: Field
    psi2: Field  # L* w
    threshold: float
    occurrence: int = 1
    tau: float = 0.0
    support: Optional[tuple[float, float]] = None

    def with_occurrence(self, n: int) -> "EventSpec":
        return EventSpec(self.w, self.w_dx, self.w_dxx, self.psi2, self.threshold, n, self.tau, self.support)

    def scaled(self, c: float) -> "EventSpec":
        """Weight and threshold both multiplied by ``c``."""
        return EventSpec(
            lambda x: c * self.w(x), lambda x: c * self.w_dx(x), lambda x: c * self.w_dxx(x),
            lambda x: c * self.psi2(x), c * self.threshold, self.occurrence, self.tau, self.support,
        )


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def quartic_bump(scale: float, a: float, b: float):
    """``scale (x-a)^2 (x-b)^2`` on (a, b), zero elsewhere; returns value, d/dx, d2/dx2."""

    def inside(x):
        return (x > a) & (x < b)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.where(inside(x), scale * (x - a) ** 2 * (x - b) ** 2, 0.0)

    def df(x):
        x = np.asarray(x, dtype=float)
        return np.where(inside(x), 2.0 * scale * (x - a) * (x - b) * (2.0 * x - a - b), 0.0)

    def d2f(x):
        x = np.asarray(x, dtype=float)
        val = 2.0 * scale * ((x - b) * (2 * x - a - b) + (x - a) * (2 * x - a - b) + 2 * (x - a) * (x - b))
        return np.where(inside(x), val, 0.0)

    return f, df, d2f


def _cols(*arrays) -> np.ndarray:
    return np.column_stack([np.asarray(a, dtype=float) for a in arrays])


def _zero_bc(components, value=0.0):
    return tuple(
        DirichletBC(c, side, (lambda t, v=value: v))
        for c in components for side in ("left", "right")
    )


# --------------------------------------------------------------------------
# heat equation entries
# --------------------------------------------------------------------------


def _heat_event() -> EventSpec:
    pi = np.pi
    return EventSpec(
        w=lambda x: _cols(np.sin(pi * x)),
        w_dx=lambda x: _cols(pi * np.cos(pi * x)),
        w_dxx=lambda x: _cols(-pi ** 2 * np.sin(pi * x)),
        psi2=lambda x: _cols(pi ** 2 * np.sin(pi * x)),
        threshold=0.47,
        support=(0.0, 1.0),
    )


def _heat_exact(x, t):
    return _cols(np.cos(t) * np.sin(np.pi * np.asarray(x)))


def _heat_linear(gravity=GRAVITY):
    pi = np.pi

    def source(x, t):
        return _cols(np.sin(pi * x) * (pi ** 2 * np.cos(t) - np.sin(t)))

    prob = ProblemSpec(
        name="heat_linear", kind="heat-linear", domain=(0.0, 1.0), t_final=0.5,
        source=source, u0=lambda x: _cols(np.sin(pi * x)),
        bc=_zero_bc([0]), adjoint_bc=_zero_bc([0]), exact=_heat_exact,
        description="u_t - u_xx = sin(pi x)(pi^2 cos t - sin t) on [0,1]",
    )
    return prob, _heat_event()


def _heat_nonlinear(gravity=GRAVITY):
    pi = np.pi

    def source(x, t):
        s = np.sin(pi * x)
        return _cols(s * (-np.sin(t) + pi ** 2 * np.cos(t) + np.cos(t) ** 2 * s))

    def reaction(u, x, t):
        return -u ** 2

    def grad(u, x, t):
        return (-2.0 * u[:, 0])[:, None, None]

    prob = ProblemSpec(
        name="heat_nonlinear", kind="heat-semilinear", domain=(0.0, 1.0), t_final=0.5,
        source=source, reaction=reaction, grad_u_f=grad, u0=lambda x: _cols(np.sin(pi * x)),
        bc=_zero_bc([0]), adjoint_bc=_zero_bc([0]), exact=_heat_exact,
        description="u_t - u_xx = -u^2 + manufactured source on [0,1]",
    )
    return prob, _heat_event()


# --------------------------------------------------------------------------
# shallow water entries
# --------------------------------------------------------------------------


def _swe_psi2(prob_depth, prob_depth_dx, gravity, w1, w1_dx, w2, w2_dx):
    """``-(A^T w)_x`` with ``A^T w = (g hbar w2, w1)``."""

    def psi2(x):
        x = np.asarray(x, dtype=float)
        first = -gravity * (prob_depth_dx(x) * w2(x) + prob_depth(x) * w2_dx(x))
        return _cols(first, -w1_dx(x))

    return psi2


def _swe_event(w1_parts, w2_parts, threshold, support, depth, depth_dx, gravity):
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    w1, w1_dx, w1_dxx = w1_parts or (zero, zero, zero)
    w2, w2_dx, w2_dxx = w2_parts or (zero, zero, zero)
    return EventSpec(
        w=lambda x: _cols(w1(x), w2(x)),
        w_dx=lambda x: _cols(w1_dx(x), w2_dx(x)),
        w_dxx=lambda x: _cols(w1_dxx(x), w2_dxx(x)),
        psi2=_swe_psi2(depth, depth_dx, gravity, w1, w1_dx, w2, w2_dx),
        threshold=threshold,
        support=support,
    )


def _swe_problem(name, domain, t_final, bathy, bathy_dx, rest_height, gravity, u0, **kw):
    return ProblemSpec(
        name=name, kind="swe-linearized", domain=domain, t_final=t_final,
        u0=u0, bathymetry=bathy, bathymetry_dx=bathy_dx, rest_height=rest_height,
        gravity=gravity, adjoint_bc=_zero_bc([1]), **kw,
    )


def _const(value):
    return lambda x: np.full(np.shape(x), float(value))


def _swe_manufactured(gravity=GRAVITY):
    pi = np.pi
    bathy, bathy_dx, eta_bar = _const(-10.0), _const(0.0), 2.0
    hbar = eta_bar + 10.0

    def source(x, t):
        s, c = np.sin(pi * x), np.cos(pi * x)
        f1 = -np.sin(t) * s + pi * np.cos(t) * c
        f2 = -np.sin(t) * s + pi * gravity * hbar * np.cos(t) * c
        return _cols(f1, f2)

    def exact(x, t):
        s = np.cos(t) * np.sin(pi * np.asarray(x, dtype=float))
        return _cols(2.0 + s, s)

    bc = tuple(
        [DirichletBC(0, side, lambda t: 2.0) for side in ("left", "right")]
        + [DirichletBC(1, side, lambda t: 0.0) for side in ("left", "right")]
    )
    prob = _swe_problem(
        "swe_manufactured", (0.0, 10.0), 1.0, bathy, bathy_dx, eta_bar, gravity,
        u0=lambda x: exact(x, 0.0), source=source, exact=exact, bc=bc,
        description="linearised SWE, manufactured solution, B = -10",
    )
    event = _swe_event(None, quartic_bump(10.0, 5.0, 6.0), -0.19, (5.0, 6.0),
                       prob.depth, prob.depth_dx, gravity)
    return prob, event


def _swe_zero_forcing(x, t):
    return np.zeros((len(x), 2))


def _swe_wave(name, domain, t_final, bathy, bathy_dx, u0_bump, w1_bump, threshold, support, gravity):
    eta0 = u0_bump[0]
    prob = _swe_problem(
        name, domain, t_final, bathy, bathy_dx, 1.0, gravity,
        u0=lambda x: _cols(eta0(x), np.zeros(np.shape(x))),
        source=_swe_zero_forcing, forcing_is_zero=True, bc=_zero_bc([1]),
        description=f"linearised SWE, {name}",
    )
    event = _swe_event(w1_bump, None, threshold, support, prob.depth, prob.depth_dx, gravity)
    return prob, event


def _swe_constant(gravity=GRAVITY):
    return _swe_wave(
        "swe_constant", (0.0, 400.0), 200.0, _const(-0.1), _const(0.0),
        quartic_bump(0.4 / 390625.0, 100.0, 150.0),
        quartic_bump(1.0 / 200000.0, 160.0, 200.0), 2.0, (160.0, 200.0), gravity,
    )


def shelf_bathymetry(x):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 25000.0, -200.0, np.where(x < 50000.0, -0.152 * x + 3600.0, -4000.0))


def shelf_bathymetry_dx(x):
    x = np.asarray(x, dtype=float)
    return np.where((x > 25000.0) & (x < 50000.0), -0.152, 0.0)


_REEF_A, _REEF_B = 200000.0, 250000.0
_REEF_K = 3950.0 / 25000.0 ** 2


def reef_bathymetry(x):
    """Flat floor at -4000 with a parabolic reef rising to -50 at x = 225 km."""
    x = np.asarray(x, dtype=float)
    inside = (x > _REEF_A) & (x < _REEF_B)
    return np.where(inside, -4000.0 - _REEF_K * (x - _REEF_A) * (x - _REEF_B), -4000.0)


def reef_bathymetry_dx(x):
    x = np.asarray(x, dtype=float)
    inside = (x > _REEF_A) & (x < _REEF_B)
    return np.where(inside, -_REEF_K * (2.0 * x - _REEF_A - _REEF_B), 0.0)


def _ocean_u0():
    return quartic_bump(0.4 / 25000.0 ** 4, 100000.0, 150000.0)


def _coastal_weight():
    return quartic_bump(1.0 / 7500.0 ** 4, 10000.0, 25000.0)


def _swe_shelf(gravity=GRAVITY):
    return _swe_wave(
        "swe_shelf", (0.0, 400000.0), 4200.0, shelf_bathymetry, shelf_bathymetry_dx,
        _ocean_u0(), _coastal_weight(), 1000.0, (10000.0, 25000.0), gravity,
    )


def _swe_reef(gravity=GRAVITY):
    return _swe_wave(
        "swe_reef", (0.0, 400000.0), 4200.0, reef_bathymetry, reef_bathymetry_dx,
        _ocean_u0(), _coastal_weight(), 1000.0, (10000.0, 25000.0), gravity,
    )


CATALOG = {
    "heat_linear": _heat_linear,
    "heat_nonlinear": _heat_nonlinear,
    "swe_manufactured": _swe_manufactured,
    "swe_constant": _swe_constant,
    "swe_shelf": _swe_shelf,
    "swe_reef": _swe_reef,
}


def make_problem(name: str, gravity: float = GRAVITY) -> tuple[ProblemSpec, EventSpec]:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown problem {name!r}; choose from {', '.join(CATALOG)}"
        ) from None
    return factory(gravity=gravity)


def adjoint_initial_data(problem: ProblemSpec, event: EventSpec, which: int,
                         space: SpatialSpace, U_at_tc=None, t_c: float | None = None) -> np.ndarray:
    """Final-time data ``psi`` of the three adjoint problems, interpolated on ``space``.

    ``U_at_tc`` is a callable returning the computed solution at ``t_c`` on
    arbitrary points (needed for ``which == 3`` on semilinear problems).
    """
    if which == 1:
        return interpolate(space, event.w)
    if which == 2:
        return interpolate(space, event.psi2)
    if which != 3:
        raise InvalidArgumentError(f"which must be 1, 2 or 3, got {which!r}")
    if U_at_tc is None:
        raise InvalidArgumentError("third adjoint data needs the computed solution at t_c")
    if problem.is_linear:
        return np.zeros(space.n_dofs)
    x = space.nodes
    grad = problem.gradient(U_at_tc(x), x, t_c)
    w = event.w(x)
    return np.einsum("nij,ni->nj", grad, w).ravel()
