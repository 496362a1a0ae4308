"""Structured grids, field containers and discrete differential operators.

Layout: a uniform vertex-centered Cartesian grid on an axis-aligned box.
An axis with n cells carries n+1 nodes including both boundary nodes, so
Dirichlet conditions are imposed exactly on the boundary nodes.

Quadrature: discrete integrals use trapezoid weights (half weight on
boundary nodes), so the unit constant on the unit box has L2 norm exactly 1
and the discrete mean of a projected field vanishes to round-off.

Differences: first and second derivatives are second-order centered in the
interior with second-order one-sided closures at the boundary; every
operator is exact on affine fields.  `viscous_operator` (the divergence-free
elliptic block -(lap v + grad div v)) swaps in matched centered stencils on
interior nodes so that its quadratic form on Dirichlet fields is exactly
nonnegative and vanishes only for the zero field.

Sobolev norms H^k (k <= 3) sum weighted L2 squares of all repeated
difference quotients up to order k.  H^{-1} is realized through one
discrete Dirichlet-Laplacian solve per component.

Everything here is stateless and safe to call concurrently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import LinearSolveError, NonDirichletError

__all__ = [
    "Grid", "ScalarField", "VectorField", "SymTensorField",
    "gradient", "grad_tensor", "divergence", "div_tensor", "laplacian",
    "viscous_operator", "rate_tensors", "norm", "inner", "mean",
    "mean_zero_project", "norm_hminus1", "sym_components",
    "save_snapshot", "load_snapshot", "random_smooth_field",
]


def _as_tuple(value, dim, cast):
    if np.isscalar(value):
        return (cast(value),) * dim
    out = tuple(cast(v) for v in value)
    if len(out) != dim:
        raise ValueError(f"expected {dim} per-axis entries, got {len(out)}")
    return out


@dataclass(eq=True)
class Grid:
    """Uniform vertex-centered grid on the box prod_i [0, extent_i]."""

    dim: int
    n: tuple[int, ...]
    extent: tuple[float, ...] = field(default=None)

    def __init__(self, dim, n, extent=1.0):
        if dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        self.dim = int(dim)
        self.n = _as_tuple(n, self.dim, int)
        if min(self.n) < 8:
            raise ValueError(f"need at least 8 cells per axis, got {self.n}")
        self.extent = _as_tuple(extent, self.dim, float)
        if min(self.extent) <= 0.0:
            raise ValueError(f"extents must be positive, got {self.extent}")

    @classmethod
    def unit(cls, n, dim=2):
        return cls(dim, n, 1.0)

    @property
    def h(self):
        return tuple(L / m for L, m in zip(self.extent, self.n))

    @property
    def node_shape(self):
        return tuple(m + 1 for m in self.n)

    @cached_property
    def axes(self):
        return tuple(np.linspace(0.0, L, m + 1) for L, m in zip(self.extent, self.n))

    @cached_property
    def coords(self):
        """Node coordinates, shape (dim, *node_shape)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def weights(self):
        """Trapezoid quadrature weights per node, shape node_shape."""
        w = np.ones(())
        for L, m in zip(self.extent, self.n):
            w1 = np.full(m + 1, L / m)
            w1[0] *= 0.5
            w1[-1] *= 0.5
            w = np.multiply.outer(w, w1)
        return w

    @cached_property
    def boundary_mask(self):
        """True exactly on the nodes lying on the box boundary."""
        mask = np.zeros(self.node_shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask

    @cached_property
    def interior_mask(self):
        return ~self.boundary_mask

    @property
    def volume(self):
        return float(np.prod(self.extent))

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.dim == other.dim
                and self.n == other.n and self.extent == other.extent)

    def __repr__(self):
        return f"Grid(dim={self.dim}, n={self.n}, extent={self.extent})"


def sym_components(dim):
    """Index pairs of the stored upper triangle, row-major."""
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def _check_grid(a, b):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


class _FieldBase:
    """Shared arithmetic for the three field containers."""

    def copy(self):
        return self.__class__(self.grid, self.values.copy(), **self._flags())

    def _flags(self):
        return {}

    def _binary(self, other, op, flag_and=True):
        _check_grid(self, other)
        if type(other) is not type(self):
            raise TypeError("mixed field types")
        flags = self._flags()
        for k, v in other._flags().items():
            flags[k] = (v and flags[k]) if flag_and else False
        return self.__class__(self.grid, op(self.values, other.values), **flags)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c):
        return self.__class__(self.grid, self.values * float(c), **self._flags())

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class ScalarField(_FieldBase):
    """Scalar samples at the grid nodes."""

    ncomp = 1

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.node_shape:
            raise ValueError(f"scalar values must have shape {grid.node_shape}, "
                             f"got {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.node_shape))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.asarray(fn(*grid.coords), dtype=float))


class VectorField(_FieldBase):
    """Vector samples, component-first storage (dim, *node_shape).

    `dirichlet=True` asserts (and checks) that every component vanishes on
    the boundary nodes.
    """

    def __init__(self, grid, values, dirichlet=False):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.dim,) + grid.node_shape:
            raise ValueError(f"vector values must have shape "
                             f"{(grid.dim,) + grid.node_shape}, got {values.shape}")
        if dirichlet and not np.all(values[:, grid.boundary_mask] == 0.0):
            raise NonDirichletError("dirichlet-flagged field is nonzero on the boundary")
        self.grid = grid
        self.values = values
        self.dirichlet = bool(dirichlet)

    def _flags(self):
        return {"dirichlet": self.dirichlet}

    @property
    def ncomp(self):
        return self.grid.dim

    @classmethod
    def zeros(cls, grid, dirichlet=False):
        return cls(grid, np.zeros((grid.dim,) + grid.node_shape), dirichlet=dirichlet)

    @classmethod
    def from_function(cls, grid, fn, dirichlet=False):
        comps = fn(*grid.coords)
        vals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.node_shape)
                         for c in comps])
        return cls(grid, vals, dirichlet=dirichlet)


class SymTensorField(_FieldBase):
    """Symmetric tensor samples; only the upper triangle is stored.

    Storage order is row-major over the upper triangle: 2-D components are
    (00, 01, 11), 3-D components are (00, 01, 02, 11, 12, 22).  Symmetry is
    therefore structural: `full()` mirrors the stored values exactly.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        m = grid.dim * (grid.dim + 1) // 2
        if values.shape != (m,) + grid.node_shape:
            raise ValueError(f"symmetric tensor values must have shape "
                             f"{(m,) + grid.node_shape}, got {values.shape}")
        self.grid = grid
        self.values = values

    @property
    def ncomp(self):
        return self.grid.dim * (self.grid.dim + 1) // 2

    @classmethod
    def zeros(cls, grid):
        m = grid.dim * (grid.dim + 1) // 2
        return cls(grid, np.zeros((m,) + grid.node_shape))

    @classmethod
    def identity(cls, grid, scale=1.0):
        out = cls.zeros(grid)
        for k, (i, j) in enumerate(sym_components(grid.dim)):
            if i == j:
                out.values[k] = scale
        return out

    def full(self):
        """Dense (dim, dim, *node_shape) view; exactly symmetric."""
        d = self.grid.dim
        out = np.empty((d, d) + self.grid.node_shape)
        for k, (i, j) in enumerate(sym_components(d)):
            out[i, j] = self.values[k]
            if i != j:
                out[j, i] = self.values[k]
        return out

    @classmethod
    def from_full(cls, grid, tensor, symmetrize=False):
        tensor = np.asarray(tensor, dtype=float)
        pairs = sym_components(grid.dim)
        vals = np.empty((len(pairs),) + grid.node_shape)
        for k, (i, j) in enumerate(pairs):
            if symmetrize and i != j:
                vals[k] = 0.5 * (tensor[i, j] + tensor[j, i])
            else:
                vals[k] = tensor[i, j]
        return cls(grid, vals)


# ---------------------------------------------------------------------------
# difference stencils


def _diff1(values, h, axis):
    """Second-order first derivative (centered interior, one-sided edges)."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def _diff2(values, h, axis):
    """Second-order second derivative along one axis.

    Interior: (f[i-1] - 2 f[i] + f[i+1]) / h^2.  Boundary: the one-sided
    four-point stencil (2, -5, 4, -1) / h^2, which is also second order and
    exact on affine data.
    """
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def gradient(f: ScalarField) -> VectorField:
    """Discrete gradient of a scalar field."""
    h = f.grid.h
    vals = np.stack([_diff1(f.values, h[ax], ax) for ax in range(f.grid.dim)])
    return VectorField(f.grid, vals)


def grad_tensor(v: VectorField) -> np.ndarray:
    """Velocity gradient samples, shape (dim, dim, *nodes); [i, j] = d v_i / d x_j."""
    d = v.grid.dim
    h = v.grid.h
    out = np.empty((d, d) + v.grid.node_shape)
    for i in range(d):
        for j in range(d):
            out[i, j] = _diff1(v.values[i], h[j], j)
    return out


def divergence(v: VectorField) -> ScalarField:
    h = v.grid.h
    acc = _diff1(v.values[0], h[0], 0)
    for ax in range(1, v.grid.dim):
        acc = acc + _diff1(v.values[ax], h[ax], ax)
    return ScalarField(v.grid, acc)


def div_tensor(t: SymTensorField) -> VectorField:
    """Row-wise divergence of a symmetric tensor: (div T)_i = sum_j dT_ij/dx_j."""
    d = t.grid.dim
    h = t.grid.h
    full = t.full()
    vals = np.empty((d,) + t.grid.node_shape)
    for i in range(d):
        acc = _diff1(full[i, 0], h[0], 0)
        for j in range(1, d):
            acc = acc + _diff1(full[i, j], h[j], j)
        vals[i] = acc
    return VectorField(t.grid, vals)


def laplacian(v) -> "VectorField | ScalarField":
    """Componentwise Laplacian of a scalar or vector field."""
    h = v.grid.h
    if isinstance(v, ScalarField):
        acc = _diff2(v.values, h[0], 0)
        for ax in range(1, v.grid.dim):
            acc = acc + _diff2(v.values, h[ax], ax)
        return ScalarField(v.grid, acc)
    d = v.grid.dim
    vals = np.empty((d,) + v.grid.node_shape)
    for i in range(d):
        acc = _diff2(v.values[i], h[0], 0)
        for ax in range(1, d):
            acc = acc + _diff2(v.values[i], h[ax], ax)
        vals[i] = acc
    return VectorField(v.grid, vals)


def _centered_interior(values, h, axis):
    """Centered first difference at nodes interior along `axis` (length-2 shorter)."""
    v = np.moveaxis(values, axis, 0)
    out = (v[2:] - v[:-2]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _graddiv_interior(v: VectorField, i: int) -> np.ndarray:
    """(grad div v)_i at fully interior nodes via matched centered stencils.

    Diagonal term d^2 v_i / dx_i^2 uses the compact 3-point stencil; mixed
    terms use the centered cross stencil C_i C_j.  With zero boundary data
    the assembled operator is symmetric and its quadratic form equals a sum
    of squared difference quotients, which makes `viscous_operator` exactly
    coercive on Dirichlet fields.
    """
    g = v.grid
    h = g.h
    inner_sl = tuple(slice(1, -1) for _ in range(g.dim))
    acc = np.zeros(tuple(m - 1 for m in g.n))
    for j in range(g.dim):
        if j == i:
            w = np.moveaxis(v.values[i], i, 0)
            term = (w[:-2] - 2.0 * w[1:-1] + w[2:]) / h[i]**2
            term = np.moveaxis(term, 0, i)
            # restrict the remaining axes to their interior range
            sl = tuple(slice(None) if ax == i else slice(1, -1) for ax in range(g.dim))
            acc += term[sl]
        else:
            term = _centered_interior(v.values[j], h[j], j)
            term = _centered_interior(term, h[i], i)
            sl = tuple(slice(None) if ax in (i, j) else slice(1, -1)
                       for ax in range(g.dim))
            acc += term[sl]
    del inner_sl
    return acc


def viscous_operator(v: VectorField) -> VectorField:
    """The elliptic block A v = -(lap v + grad div v) on a Dirichlet field.

    Interior nodes use matched centered stencils so that the weighted inner
    product <A v, v> is exactly nonnegative and vanishes only for v = 0;
    boundary nodes carry the generic one-sided composition (they never enter
    the inner product because v vanishes there).
    """
    if not v.dirichlet:
        raise NonDirichletError("viscous_operator requires a dirichlet-flagged field")
    g = v.grid
    lap = laplacian(v)
    gd_generic = gradient(divergence(v))
    vals = -(lap.values + gd_generic.values)
    interior = tuple(slice(1, -1) for _ in range(g.dim))
    for i in range(g.dim):
        vals[(i,) + interior] = (-lap.values[(i,) + interior]
                                 - _graddiv_interior(v, i))
    return VectorField(g, vals, dirichlet=False)


def rate_tensors(v: VectorField):
    """Symmetric and skew parts of the velocity gradient.

    Returns (D, W) with D a SymTensorField (exactly symmetric by storage)
    and W dense skew samples mirrored from one stored triangle (exactly
    skew by construction).  full(D) + W reconstructs grad_tensor(v) to the
    last ulp; the two roundings per entry forbid anything sharper.
    """
    g = grad_tensor(v)
    D = SymTensorField.from_full(v.grid, g, symmetrize=True)
    W = np.zeros_like(g)
    d = v.grid.dim
    for i in range(d):
        for j in range(i + 1, d):
            w = 0.5 * (g[i, j] - g[j, i])
            W[i, j] = w
            W[j, i] = -w
    return D, W


# ---------------------------------------------------------------------------
# norms and integrals


def _component_list(f):
    """(array, multiplicity) pairs covering the full tensor norm."""
    if isinstance(f, ScalarField):
        return [(f.values, 1.0)]
    if isinstance(f, VectorField):
        return [(f.values[i], 1.0) for i in range(f.grid.dim)]
    if isinstance(f, SymTensorField):
        return [(f.values[k], 1.0 if i == j else 2.0)
                for k, (i, j) in enumerate(sym_components(f.grid.dim))]
    raise TypeError(f"not a field: {type(f)!r}")


def inner(a, b) -> float:
    """Weighted L2 inner product; off-diagonal tensor entries count twice."""
    _check_grid(a, b)
    if type(a) is not type(b):
        raise TypeError("mixed field types in inner product")
    w = a.grid.weights
    total = 0.0
    for (ca, ma), (cb, _) in zip(_component_list(a), _component_list(b)):
        total += ma * float(np.sum(w * ca * cb))
    return total


def norm(f, k: int = 0) -> float:
    """Discrete Sobolev norm H^k, k in {0, 1, 2, 3}.

    Adds the weighted L2 squares of every repeated difference quotient up to
    order k (each multi-index counted once; mixed quotients commute exactly).
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise ValueError(f"k must be an integer, got {k!r}")
    if k < 0 or k > 3:
        raise ValueError(f"norm order k={k} out of range 0..3")
    g = f.grid
    w = g.weights
    h = g.h
    total = 0.0
    for comp, mult in _component_list(f):
        total += mult * float(np.sum(w * comp * comp))
        for order in range(1, k + 1):
            for axes in itertools.combinations_with_replacement(range(g.dim), order):
                d = comp
                for ax in axes:
                    d = _diff1(d, h[ax], ax)
                total += mult * float(np.sum(w * d * d))
    return float(np.sqrt(total))


def mean(f: ScalarField) -> float:
    return float(np.sum(f.grid.weights * f.values) / f.grid.volume)


def mean_zero_project(f: ScalarField) -> ScalarField:
    """Subtract the weighted mean; idempotent to round-off."""
    return ScalarField(f.grid, f.values - mean(f))


# ---------------------------------------------------------------------------
# discrete H^{-1} via one Dirichlet-Laplacian solve per component


def _poisson_dirichlet(grid: Grid, rhs: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve -lap phi = rhs with phi = 0 on the boundary (compact stencil, CG)."""
    interior = grid.interior_mask
    idx = np.where(interior.ravel())[0]
    shape = grid.node_shape
    h2 = [hh * hh for hh in grid.h]

    def matvec(x):
        full = np.zeros(shape)
        full.ravel()[idx] = x
        acc = np.zeros(tuple(m - 1 for m in grid.n))
        for ax in range(grid.dim):
            v = np.moveaxis(full, ax, 0)
            term = -(v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2[ax]
            term = np.moveaxis(term, 0, ax)
            sl = tuple(slice(None) if a == ax else slice(1, -1) for a in range(grid.dim))
            acc += term[sl]
        return acc.ravel()

    b = rhs[interior].ravel()
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(shape)
    n_int = b.size
    op = LinearOperator((n_int, n_int), matvec=matvec)
    x, info = cg(op, b, rtol=rtol, atol=0.0, maxiter=20 * n_int)
    if info != 0:
        raise LinearSolveError(f"poisson solve did not converge (info={info})")
    full = np.zeros(shape)
    full.ravel()[idx] = x
    return full


def norm_hminus1(f) -> float:
    """Dual-norm realization of H^{-1}: sqrt(<f, phi>) with -lap phi = f."""
    comps = _component_list(f)
    w = f.grid.weights
    total = 0.0
    for comp, mult in comps:
        phi = _poisson_dirichlet(f.grid, comp)
        total += mult * float(np.sum(w * comp * phi))
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# snapshots


def save_snapshot(f, t: float, path) -> None:
    """ASCII snapshot: header 'dim n1 [n2 [n3]] components t', then values.

    Values are written row-major with 17 significant digits, which
    round-trips float64 bit-exactly.
    """
    g = f.grid
    vals = f.values if f.values.ndim == g.dim + 1 else f.values[None]
    ncomp = vals.shape[0]
    with open(path, "w") as fh:
        ns = " ".join(str(m) for m in g.n)
        fh.write(f"{g.dim} {ns} {ncomp} {t:.17g}\n")
        flat = vals.reshape(-1, g.node_shape[-1])
        for row in flat:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_snapshot(path, grid: Grid = None):
    """Read a snapshot; returns (field, t).

    The header stores cell counts only, so a unit box is assumed unless a
    grid with matching counts is supplied.  Vector fields come back without
    the Dirichlet flag.
    """
    with open(path) as fh:
        head = fh.readline().split()
        dim = int(head[0])
        n = tuple(int(x) for x in head[1:1 + dim])
        ncomp = int(head[1 + dim])
        t = float(head[2 + dim])
        data = np.fromstring(fh.read(), sep=" ")
    if grid is None:
        grid = Grid(dim, n, 1.0)
    elif grid.dim != dim or grid.n != n:
        raise ValueError(f"snapshot grid {dim}/{n} does not match {grid}")
    vals = data.reshape((ncomp,) + grid.node_shape)
    if ncomp == 1:
        return ScalarField(grid, vals[0]), t
    if ncomp == dim:
        return VectorField(grid, vals), t
    if ncomp == dim * (dim + 1) // 2:
        return SymTensorField(grid, vals), t
    raise ValueError(f"cannot infer field type from {ncomp} components in {dim}D")


# ---------------------------------------------------------------------------
# smooth random test fields


def random_smooth_field(grid: Grid, rng, kind="vector", modes=3, amplitude=1.0):
    """Random low-mode trigonometric field; 'vector'/'scalar' vanish on the
    boundary (products of sines), 'scalar_free' uses cosines instead."""
    coords = grid.coords
    ks = range(1, modes + 1)

    def sine_sum():
        acc = np.zeros(grid.node_shape)
        for kv in itertools.product(ks, repeat=grid.dim):
            c = rng.normal() * amplitude / (sum(kv) ** 2)
            term = np.ones(grid.node_shape)
            for ax, k in enumerate(kv):
                term = term * np.sin(k * np.pi * coords[ax] / grid.extent[ax])
            acc += c * term
        acc[grid.boundary_mask] = 0.0  # sin(k*pi) is only zero to round-off
        return acc

    def cosine_sum():
        acc = np.zeros(grid.node_shape)
        for kv in itertools.product(range(modes + 1), repeat=grid.dim):
            if sum(kv) == 0:
                continue
            c = rng.normal() * amplitude / (sum(kv) ** 2)
            term = np.ones(grid.node_shape)
            for ax, k in enumerate(kv):
                term = term * np.cos(k * np.pi * coords[ax] / grid.extent[ax])
            acc += c * term
        return acc

    if kind == "scalar":
        return ScalarField(grid, sine_sum())
    if kind == "scalar_free":
        return ScalarField(grid, cosine_sum())
    if kind == "vector":
        vals = np.stack([sine_sum() for _ in range(grid.dim)])
        return VectorField(grid, vals, dirichlet=True)
    if kind == "symtensor":
        m = grid.dim * (grid.dim + 1) // 2
        return SymTensorField(grid, np.stack([cosine_sum() for _ in range(m)]))
    raise ValueError(f"unknown field kind {kind!r}")
