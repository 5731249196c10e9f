"""One-dimensional continuous Lagrange finite elements.

Mesh and dof numbering, Gauss-Legendre quadrature, assembly of the mass and
operator matrices, weighted load vectors, nodal interpolation and a banded
LU solver.  Vector-valued fields are stored component-interleaved per node,
i.e. dof ``node * n_components + component``, which keeps the bandwidth of
every assembled matrix small.

Callables describing data on the domain take an array of points ``x`` of
shape ``(n,)`` and return an array of shape ``(n, n_components)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .errors import InvalidArgumentError, SingularMatrixError

__all__ = [
    "QuadratureRule",
    "gauss_rule",
    "lagrange_basis",
    "DirichletBC",
    "SpatialSpace",
    "build_space",
    "OperatorMatrices",
    "assemble",
    "assemble_form",
    "weighted_vector",
    "interpolate",
    "BandedMatrix",
    "BandedLU",
    "solve_banded",
]


# --------------------------------------------------------------------------
# quadrature and reference bases
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)

    def mapped(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights transformed to the interval ``[a, b]``."""
        half = 0.5 * (b - a)
        return a + half * (self.points + 1.0), half * self.weights


_GAUSS_CACHE: dict[int, QuadratureRule] = {}


def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points on [-1, 1] (exact to degree 2n-1)."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= 30:
        raise InvalidArgumentError(f"number of Gauss points must be in [1, 30], got {n!r}")
    n = int(n)
    rule = _GAUSS_CACHE.get(n)
    if rule is None:
        x, w = np.polynomial.legendre.leggauss(n)
        # enforce exact symmetry
        x = 0.5 * (x - x[::-1])
        w = 0.5 * (w + w[::-1])
        x.setflags(write=False)
        w.setflags(write=False)
        rule = _GAUSS_CACHE[n] = QuadratureRule(x, w)
    return rule


def lagrange_basis(nodes, points) -> tuple[np.ndarray, np.ndarray]:
    """Values and first derivatives of the Lagrange polynomials on ``nodes``.

    Returns two arrays of shape ``(len(points), len(nodes))``.
    """
    nodes = np.asarray(nodes, dtype=float)
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    n = len(nodes)
    diff = pts[:, None] - nodes[None, :]  # (npts, n)
    denom = np.array([np.prod(nodes[j] - np.delete(nodes, j)) for j in range(n)])
    vals = np.empty((len(pts), n))
    ders = np.zeros((len(pts), n))
    idx = np.arange(n)
    for j in range(n):
        others = idx != j
        d = diff[:, others]
        vals[:, j] = np.prod(d, axis=1) / denom[j]
        m = d.shape[1]
        for k in range(m):
            keep = np.arange(m) != k
            ders[:, j] += np.prod(d[:, keep], axis=1)
        ders[:, j] /= denom[j]
    return vals, ders


# --------------------------------------------------------------------------
# spatial space
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletBC:
    """Prescribed value ``value(t)`` for one component at one end of the domain."""

    component: int
    side: str  # "left" or "right"
    value: Callable[[float], float] = lambda t: 0.0

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise InvalidArgumentError(f"side must be 'left' or 'right', got {self.side!r}")


@dataclass(frozen=True)
class QuadPoints:
    """Global quadrature points of a space with basis evaluation matrices."""

    x: np.ndarray
    w: np.ndarray
    values: sp.csr_matrix  # (n_qp, n_nodes)
    derivs: sp.csr_matrix  # (n_qp, n_nodes)

    def eval(self, coeffs: np.ndarray, n_components: int) -> np.ndarray:
        """Field values at the points, shape ``(n_qp, n_components)``."""
        return self.values @ np.asarray(coeffs).reshape(-1, n_components)

    def eval_dx(self, coeffs: np.ndarray, n_components: int) -> np.ndarray:
        return self.derivs @ np.asarray(coeffs).reshape(-1, n_components)


@dataclass(frozen=True, eq=False)
class SpatialSpace:
    x_lo: float
    x_hi: float
    n_elements: int
    degree: int
    n_components: int
    dirichlet: tuple[DirichletBC, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_elements

    @property
    def n_nodes(self) -> int:
        return self.n_elements * self.degree + 1

    @property
    def n_dofs(self) -> int:
        return self.n_components * self.n_nodes

    @property
    def nodes(self) -> np.ndarray:
        key = "nodes"
        if key not in self._cache:
            nodes = self.x_lo + self.h * np.arange(self.n_nodes) / self.degree
            nodes[-1] = self.x_hi
            nodes.setflags(write=False)
            self._cache[key] = nodes
        return self._cache[key]

    @property
    def dof_map(self) -> np.ndarray:
        """Element-local to global node index, shape ``(n_elements, degree + 1)``."""
        e = np.arange(self.n_elements)[:, None] * self.degree
        return e + np.arange(self.degree + 1)[None, :]

    def dof(self, node: int, component: int) -> int:
        return node * self.n_components + component

    @property
    def constrained_dofs(self) -> np.ndarray:
        return np.array(
            sorted(self.dof(0 if bc.side == "left" else self.n_nodes - 1, bc.component)
                   for bc in self.dirichlet),
            dtype=int,
        )

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    def dirichlet_values(self, t: float) -> np.ndarray:
        """Prescribed values at ``constrained_dofs`` (same ordering)."""
        pairs = sorted(
            (self.dof(0 if bc.side == "left" else self.n_nodes - 1, bc.component), bc.value(t))
            for bc in self.dirichlet
        )
        return np.array([v for _, v in pairs], dtype=float)

    def with_degree(self, degree: int, dirichlet: Sequence[DirichletBC] | None = None) -> "SpatialSpace":
        """Same mesh, different polynomial degree (and optionally constraints)."""
        return build_space(
            (self.x_lo, self.x_hi), self.n_elements, degree, self.n_components,
            self.dirichlet if dirichlet is None else dirichlet,
        )

    def locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element index and local coordinate in [0, 1] of each point."""
        x = np.asarray(x, dtype=float)
        s = (x - self.x_lo) / self.h
        elem = np.clip(np.floor(s).astype(int), 0, self.n_elements - 1)
        return elem, s - elem

    def eval_matrix(self, x, derivative: bool = False) -> sp.csr_matrix:
        """Sparse matrix mapping nodal values of one component to values at ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        elem, xi = self.locate(x)
        ref = np.linspace(0.0, 1.0, self.degree + 1)
        vals, ders = lagrange_basis(ref, xi)
        data = ders / self.h if derivative else vals
        cols = self.dof_map[elem]
        rows = np.repeat(np.arange(len(x)), self.degree + 1)
        return sp.csr_matrix(
            (data.ravel(), (rows, cols.ravel())), shape=(len(x), self.n_nodes)
        )

    def quadrature(self, n_points: int) -> QuadPoints:
        """Element-wise Gauss points over the whole mesh (``n_points`` per element)."""
        key = ("quad", n_points)
        if key not in self._cache:
            rule = gauss_rule(n_points)
            xi = 0.5 * (rule.points + 1.0)
            left = self.x_lo + self.h * np.arange(self.n_elements)
            x = (left[:, None] + self.h * xi[None, :]).ravel()
            w = np.tile(0.5 * self.h * rule.weights, self.n_elements)
            ref = np.linspace(0.0, 1.0, self.degree + 1)
            vals, ders = lagrange_basis(ref, xi)
            nq = len(xi)
            rows = np.repeat(np.arange(self.n_elements * nq), self.degree + 1)
            cols = np.repeat(self.dof_map, nq, axis=0).ravel()
            shape = (self.n_elements * nq, self.n_nodes)
            V = sp.csr_matrix((np.tile(vals, (self.n_elements, 1)).ravel(), (rows, cols)), shape=shape)
            D = sp.csr_matrix((np.tile(ders / self.h, (self.n_elements, 1)).ravel(), (rows, cols)), shape=shape)
            self._cache[key] = QuadPoints(x, w, V, D)
        return self._cache[key]

    def default_quadrature(self) -> QuadPoints:
        return self.quadrature(self.degree + 4)

    def data_quadrature(self) -> QuadPoints:
        """Rule used whenever analytic data enters an integral."""
        return self.quadrature(self.degree + 6)


def build_space(domain, n_elements: int, degree: int, n_components: int = 1,
                bc: Sequence[DirichletBC] = ()) -> SpatialSpace:
    x_lo, x_hi = (float(v) for v in domain)
    if not x_hi > x_lo:
        raise InvalidArgumentError(f"empty domain [{x_lo}, {x_hi}]")
    if n_elements < 2:
        raise InvalidArgumentError(f"need at least 2 elements, got {n_elements}")
    if degree < 1:
        raise InvalidArgumentError(f"degree must be >= 1, got {degree}")
    if n_components < 1:
        raise InvalidArgumentError("n_components must be >= 1")
    for b in bc:
        if not 0 <= b.component < n_components:
            raise InvalidArgumentError(f"boundary condition on missing component {b.component}")
    return SpatialSpace(x_lo, x_hi, int(n_elements), int(degree), int(n_components), tuple(bc))


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def _as_columns(values, n: int, nc: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full((n, nc), float(values))
    if values.ndim == 1:
        return np.broadcast_to(values[:, None], (n, nc))
    return values


def _form_map(space: SpatialSpace, quad: QuadPoints):
    """Linear maps from pointwise coefficients to CSR data on a fixed pattern.

    Returns ``(maps, indices, indptr)`` where ``maps[kind] @ coef.ravel()``
    gives the CSR data of the ``vv``/``vd``/``dd`` form.  ``None`` if the
    basis matrices do not have a uniform row structure.
    """
    per_element = len(quad.x) // space.n_elements
    key = ("form_map", per_element)
    if space._cache.get(("quad", per_element)) is not quad:
        return None
    if key in space._cache:
        return space._cache[key]
    nc = space.n_components
    nq = len(quad.x)
    counts = np.diff(quad.values.indptr)
    if np.any(counts != counts[0]) or np.any(np.diff(quad.derivs.indptr) != counts[0]):
        space._cache[key] = None
        return None
    m = int(counts[0])
    cols_v = quad.values.indices.reshape(nq, m)
    if not np.array_equal(cols_v, quad.derivs.indices.reshape(nq, m)):
        space._cache[key] = None
        return None
    n = space.n_dofs
    c = np.arange(nc)
    # axes: qp, a (test node), b (trial node), c, d
    rows = cols_v[:, :, None, None, None] * nc + c[None, None, None, :, None]
    cols = cols_v[:, None, :, None, None] * nc + c[None, None, None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    k = np.broadcast_to(np.arange(nq)[:, None, None, None, None] * nc * nc
                        + c[None, None, None, :, None] * nc + c[None, None, None, None, :], rows.shape)
    flat = (rows.astype(np.int64) * n + cols).ravel()
    pattern, pos = np.unique(flat, return_inverse=True)
    mats = {"v": quad.values.data.reshape(nq, m), "d": quad.derivs.data.reshape(nq, m)}
    maps = {}
    for kind, (lk, rk) in (("vv", "vv"), ("vd", "vd"), ("dd", "dd")):
        vals = quad.w[:, None, None] * mats[lk][:, :, None] * mats[rk][:, None, :]
        vals = np.broadcast_to(vals[:, :, :, None, None], rows.shape).ravel()
        maps[kind] = sp.csr_matrix((vals, (pos.ravel(), k.ravel())), shape=(len(pattern), nq * nc * nc))
    indices = (pattern % n).astype(np.int32)
    indptr = np.concatenate(([0], np.cumsum(np.bincount(pattern // n, minlength=n)))).astype(np.int32)
    space._cache[key] = (maps, indices, indptr)
    return space._cache[key]


def assemble_form(space: SpatialSpace, quad: QuadPoints, *, vv=None, vd=None, dd=None,
                  prune: bool = True) -> sp.csr_matrix:
    """Assemble a bilinear form with pointwise matrix coefficients.

    Entry ``(test dof (i, c), trial dof (j, d))`` is the integral of::

        vv[c, d] v_c u_d + vd[c, d] v_c u_d' + dd[c, d] v_c' u_d'

    where each coefficient array has shape ``(n_qp, nc, nc)``.  With
    ``prune=False`` explicit zeros are kept, so forms built on the same
    quadrature share one sparsity pattern.
    """
    nc = space.n_components
    fm = _form_map(space, quad)
    if fm is not None:
        maps, indices, indptr = fm
        data = None
        for kind, coef in (("vv", vv), ("vd", vd), ("dd", dd)):
            if coef is None:
                continue
            part = maps[kind] @ np.asarray(coef, dtype=float).ravel()
            data = part if data is None else data + part
        if data is None:
            return sp.csr_matrix((space.n_dofs, space.n_dofs))
        total = sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(space.n_dofs, space.n_dofs))
        if prune:
            total.eliminate_zeros()
        return total
    V, D = quad.values, quad.derivs
    total = sp.csr_matrix((space.n_dofs, space.n_dofs))
    for coef, left, right in ((vv, V, V), (vd, V, D), (dd, D, D)):
        if coef is None:
            continue
        coef = np.asarray(coef, dtype=float)
        for c in range(nc):
            for d in range(nc):
                cw = quad.w * coef[:, c, d]
                if not np.any(cw):
                    continue
                block = (left.T @ sp.diags(cw) @ right).tocsr()
                unit = sp.csr_matrix(([1.0], ([c], [d])), shape=(nc, nc))
                total = total + sp.kron(block, unit, format="csr")
    total.sum_duplicates()
    total.eliminate_zeros()
    return total


@dataclass(frozen=True)
class OperatorMatrices:
    mass: sp.csr_matrix
    stiffness_like: sp.csr_matrix

    @property
    def bandwidth(self) -> tuple[int, int]:
        return BandedMatrix.bandwidths(self.mass + abs(self.stiffness_like))

    def mass_banded(self) -> "BandedMatrix":
        return BandedMatrix.from_sparse(self.mass)

    def stiffness_banded(self) -> "BandedMatrix":
        return BandedMatrix.from_sparse(self.stiffness_like)


def _identity_coeff(n: int, nc: int) -> np.ndarray:
    return np.broadcast_to(np.eye(nc), (n, nc, nc))


def mass_matrix(space: SpatialSpace) -> sp.csr_matrix:
    key = "mass"
    if key not in space._cache:
        quad = space.default_quadrature()
        space._cache[key] = assemble_form(space, quad, vv=_identity_coeff(len(quad.x), space.n_components))
    return space._cache[key]


def assemble(space: SpatialSpace, problem) -> OperatorMatrices:
    """Mass matrix and the matrix of ``(L1 phi_j, L2 phi_i)``.

    ``problem.operator_coefficients(x)`` supplies the pointwise coefficients
    of the operator pairing (see :func:`assemble_form`).
    """
    if space.n_components != problem.n_components:
        raise InvalidArgumentError(
            f"space has {space.n_components} components, problem needs {problem.n_components}"
        )
    if space.n_elements < 1 or space.h <= 0:
        raise InvalidArgumentError("empty mesh")
    quad = space.default_quadrature()
    coeffs = problem.operator_coefficients(quad.x)
    B = assemble_form(space, quad, **coeffs)
    return OperatorMatrices(mass_matrix(space), B)


def weighted_vector(space: SpatialSpace, w: Callable) -> np.ndarray:
    """Vector of ``(w, phi_i)`` over all dofs."""
    quad = space.data_quadrature()
    vals = _as_columns(w(quad.x), len(quad.x), space.n_components)
    return np.asarray(quad.values.T @ (quad.w[:, None] * vals)).ravel()


def load_vector(space: SpatialSpace, quad: QuadPoints, values: np.ndarray) -> np.ndarray:
    """``(F, phi_i)`` for pointwise values ``F`` of shape ``(n_qp, nc)``."""
    return np.asarray(quad.values.T @ (quad.w[:, None] * values)).ravel()


def interpolate(space: SpatialSpace, g: Callable) -> np.ndarray:
    """Nodal interpolant of ``g`` as an interleaved dof vector."""
    vals = _as_columns(g(space.nodes), space.n_nodes, space.n_components)
    return np.ascontiguousarray(vals, dtype=float).ravel()


# --------------------------------------------------------------------------
# banded linear algebra
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BandedMatrix:
    """Square matrix in LAPACK general-band layout.

    ``data[upper + i - j, j] == A[i, j]`` for ``-upper <= i - j <= lower``.
    """

    data: np.ndarray
    lower: int
    upper: int

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @staticmethod
    def bandwidths(A) -> tuple[int, int]:
        A = sp.coo_matrix(A)
        if A.nnz == 0:
            return 0, 0
        d = A.row - A.col
        return int(max(d.max(), 0)), int(max(-d.min(), 0))

    @classmethod
    def from_sparse(cls, A) -> "BandedMatrix":
        A = sp.coo_matrix(A)
        A.sum_duplicates()
        if A.shape[0] != A.shape[1]:
            raise InvalidArgumentError(f"matrix must be square, got {A.shape}")
        lower, upper = cls.bandwidths(A)
        data = np.zeros((lower + upper + 1, A.shape[0]))
        data[upper + A.row - A.col, A.col] = A.data
        return cls(data, lower, upper)

    @classmethod
    def from_dense(cls, A) -> "BandedMatrix":
        return cls.from_sparse(sp.coo_matrix(np.asarray(A, dtype=float)))

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        for k in range(self.lower + self.upper + 1):
            off = self.upper - k  # column - row
            i = np.arange(max(0, -off), min(n, n - off))
            out[i, i + off] = self.data[k, i + off]
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        x = np.asarray(x, dtype=float)
        y = np.zeros(np.broadcast_shapes(x.shape))
        for k in range(self.lower + self.upper + 1):
            off = self.upper - k
            i = np.arange(max(0, -off), min(n, n - off))
            y[i] += self.data[k, i + off] * x[i + off]
        return y

    def transpose(self) -> "BandedMatrix":
        n = self.n
        data = np.zeros((self.lower + self.upper + 1, n))
        for k in range(self.lower + self.upper + 1):
            off = self.upper - k
            i = np.arange(max(0, -off), min(n, n - off))
            # A[i, i+off] -> At[i+off, i], offset -off
            data[self.lower + off, i] = self.data[k, i + off]
        return BandedMatrix(data, self.upper, self.lower)

    def factor(self) -> "BandedLU":
        n, kl, ku = self.n, self.lower, self.upper
        ab = np.zeros((2 * kl + ku + 1, n), order="F")
        ab[kl:, :] = self.data
        lu, piv, info = lapack.dgbtrf(ab, kl, ku, overwrite_ab=1)
        if info > 0:
            raise SingularMatrixError(f"zero pivot at row {info - 1}")
        if info < 0:
            raise InvalidArgumentError(f"dgbtrf argument {-info} invalid")
        return BandedLU(lu, piv, kl, ku)


@dataclass(frozen=True)
class BandedLU:
    lu: np.ndarray
    piv: np.ndarray
    lower: int
    upper: int

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.asarray(rhs, dtype=float)
        one_d = b.ndim == 1
        x, info = lapack.dgbtrs(self.lu, self.lower, self.upper,
                                b[:, None] if one_d else b, self.piv)
        if info != 0:
            raise InvalidArgumentError(f"dgbtrs failed with info={info}")
        return x[:, 0] if one_d else x


def solve_banded(matrix: BandedMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` by banded LU with partial pivoting."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != matrix.n:
        raise InvalidArgumentError(f"rhs length {rhs.shape[0]} != matrix size {matrix.n}")
    return matrix.factor().solve(rhs)
