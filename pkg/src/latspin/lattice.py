"""Periodic lattice calculus: centered differences, divergence, quadrature.

The discrete operators are chosen so that summation by parts is exact: on a
periodic grid the centered difference matrix is antisymmetric, hence

    sum_m f (D g) = - sum_m (D f) g

holds to roundoff for every pair of fields. Together with the pointwise
ad/ad* duality of the algebra kernels this makes the covariant divergence
exactly the negative L2 adjoint of the covariant differential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lie import MatrixGroup

__all__ = [
    "GridMismatchError",
    "Grid",
    "AlgebraField",
    "DualField",
    "GroupField",
    "ConnectionForm",
    "DualVectorField",
    "central_diff",
    "d_alg",
    "div_dual",
    "integrate",
    "l2_pair",
    "right_log_derivative",
    "snapshot",
    "field_from_snapshot",
]

MIN_SITES_PER_AXIS = 4


class GridMismatchError(ValueError):
    """Fields live on different grids or groups."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice with per-axis site counts and spacings.

    The cell volume prod(h_i) plays the role of the volume density in all
    quadrature; lengths are N_i * h_i per axis.
    """

    sizes: tuple
    spacing: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        spacing = tuple(float(h) for h in self.spacing)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "spacing", spacing)
        if len(sizes) not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if len(spacing) != len(sizes):
            raise ValueError("spacing must list one value per axis")
        if any(n < MIN_SITES_PER_AXIS for n in sizes):
            raise ValueError(f"each axis needs at least {MIN_SITES_PER_AXIS} sites")
        if any(h <= 0 for h in spacing):
            raise ValueError("grid spacing must be positive")

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def num_sites(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lengths(self) -> tuple:
        return tuple(n * h for n, h in zip(self.sizes, self.spacing))

    def coordinates(self):
        """Meshgrid of site coordinates, one array per axis (ij indexing)."""
        axes = [h * np.arange(n) for n, h in zip(self.sizes, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")


def _check_same_grid(a, b):
    if a.grid != b.grid or a.group is not b.group:
        raise GridMismatchError("fields live on different grids or groups")


@dataclass
class AlgebraField:
    """Map from the lattice into the Lie algebra, stored as coefficients (sites..., d)."""

    grid: Grid
    group: MatrixGroup
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        want = self.grid.sizes + (self.group.algebra_dim,)
        if self.values.shape != want:
            raise ValueError(f"values must have shape {want}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def zeros(cls, grid, group):
        return cls(grid, group, np.zeros(grid.sizes + (group.algebra_dim,)))

    def copy(self):
        return AlgebraField(self.grid, self.group, self.values.copy())

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=-1), initial=0.0))


@dataclass
class DualField:
    """Map from the lattice into the dual algebra (coefficients in the dual basis)."""

    grid: Grid
    group: MatrixGroup
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        want = self.grid.sizes + (self.group.algebra_dim,)
        if self.values.shape != want:
            raise ValueError(f"values must have shape {want}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def zeros(cls, grid, group):
        return cls(grid, group, np.zeros(grid.sizes + (group.algebra_dim,)))

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=-1), initial=0.0))


@dataclass
class GroupField:
    """Map from the lattice into G, stored as matrices (sites..., n, n)."""

    grid: Grid
    group: MatrixGroup
    values: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        n = self.group.matrix_dim
        want = self.grid.sizes + (n, n)
        if self.values.shape != want:
            raise ValueError(f"values must have shape {want}, got {self.values.shape}")
        if self.validate:
            self.group.check_membership(self.values)

    @classmethod
    def identity(cls, grid, group):
        eye = np.broadcast_to(group.identity(), grid.sizes + (group.matrix_dim,) * 2)
        return cls(grid, group, eye.copy(), validate=False)

    def inverse(self) -> "GroupField":
        return GroupField(self.grid, self.group, self.group.inverse_arr(self.values), validate=False)

    def compose(self, other: "GroupField") -> "GroupField":
        """Pointwise product self * other."""
        _check_same_grid(self, other)
        return GroupField(self.grid, self.group, self.values @ other.values, validate=False)


@dataclass
class ConnectionForm:
    """Algebra-valued one-form: one coefficient field per grid axis (dim, sites..., d)."""

    grid: Grid
    group: MatrixGroup
    comps: np.ndarray

    def __post_init__(self):
        self.comps = np.asarray(self.comps, float)
        want = (self.grid.dim,) + self.grid.sizes + (self.group.algebra_dim,)
        if self.comps.shape != want:
            raise ValueError(f"components must have shape {want}, got {self.comps.shape}")
        if not np.all(np.isfinite(self.comps)):
            raise ValueError("one-form components must be finite")

    @classmethod
    def zeros(cls, grid, group):
        return cls(grid, group, np.zeros((grid.dim,) + grid.sizes + (group.algebra_dim,)))

    def copy(self):
        return ConnectionForm(self.grid, self.group, self.comps.copy())

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.comps, axis=-1), initial=0.0))


@dataclass
class DualVectorField:
    """Dual-algebra-valued vector field, one component per grid axis."""

    grid: Grid
    group: MatrixGroup
    comps: np.ndarray

    def __post_init__(self):
        self.comps = np.asarray(self.comps, float)
        want = (self.grid.dim,) + self.grid.sizes + (self.group.algebra_dim,)
        if self.comps.shape != want:
            raise ValueError(f"components must have shape {want}, got {self.comps.shape}")
        if not np.all(np.isfinite(self.comps)):
            raise ValueError("vector field components must be finite")

    @classmethod
    def zeros(cls, grid, group):
        return cls(grid, group, np.zeros((grid.dim,) + grid.sizes + (group.algebra_dim,)))

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.comps, axis=-1), initial=0.0))


# -- operators ---------------------------------------------------------------


def cdiff_array(arr, axis: int, h: float) -> np.ndarray:
    """Centered difference with periodic wraparound along a site axis."""
    return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2.0 * h)


def central_diff(f, axis: int):
    """Centered difference of a coefficient field along a grid axis.

    Annihilates constants exactly and is antisymmetric under the periodic
    site sum, which is the source of all exact adjointness statements.
    """
    if axis < 0 or axis >= f.grid.dim:
        raise ValueError(f"axis {axis} out of range for a {f.grid.dim}-d grid")
    out = cdiff_array(f.values, axis, f.grid.spacing[axis])
    return type(f)(f.grid, f.group, out)


def d_alg(zeta: AlgebraField) -> ConnectionForm:
    """Plain exterior derivative of an algebra-valued function."""
    comps = np.stack(
        [cdiff_array(zeta.values, i, zeta.grid.spacing[i]) for i in range(zeta.grid.dim)]
    )
    return ConnectionForm(zeta.grid, zeta.group, comps)


def div_dual(w: DualVectorField) -> DualField:
    """Plain divergence of a dual-valued vector field."""
    out = np.zeros(w.grid.sizes + (w.group.algebra_dim,))
    for i in range(w.grid.dim):
        out += cdiff_array(w.comps[i], i, w.grid.spacing[i])
    return DualField(w.grid, w.group, out)


def integrate(grid: Grid, site_values) -> float:
    """Quadrature of a per-site scalar: cell volume times the (pairwise) site sum."""
    site_values = np.asarray(site_values, float)
    if site_values.shape != grid.sizes:
        raise ValueError("integrand shape does not match the grid")
    return grid.cell_volume * float(np.sum(site_values))


def l2_pair(a, b) -> float:
    """L2 duality pairing: pointwise contraction, then quadrature.

    DualField pairs with AlgebraField; DualVectorField with ConnectionForm
    (summing over one-form components).
    """
    if isinstance(a, DualField) and isinstance(b, AlgebraField):
        _check_same_grid(a, b)
        density = np.einsum("...a,...a->...", a.values, b.values)
    elif isinstance(a, DualVectorField) and isinstance(b, ConnectionForm):
        _check_same_grid(a, b)
        density = np.einsum("i...a,i...a->...", a.comps, b.comps)
    else:
        raise GridMismatchError(
            f"cannot pair {type(a).__name__} with {type(b).__name__}"
        )
    return integrate(a.grid, density)


def right_log_derivative(chi: GroupField) -> ConnectionForm:
    """Right logarithmic derivative (D chi) chi^-1, projected onto the algebra.

    The projection is kappa-orthogonal; right translation by a constant group
    element drops out exactly.
    """
    inv = chi.group.inverse_arr(chi.values)
    comps = []
    for i in range(chi.grid.dim):
        mats = cdiff_array(chi.values, i, chi.grid.spacing[i]) @ inv
        comps.append(chi.group.to_coeffs(mats))
    return ConnectionForm(chi.grid, chi.group, np.stack(comps))


# -- snapshots ---------------------------------------------------------------

_KINDS = {
    "algebra": AlgebraField,
    "dual": DualField,
    "group": GroupField,
    "connection": ConnectionForm,
    "dual_vector": DualVectorField,
}


def snapshot(f) -> dict:
    """Serializable snapshot: header plus flat row-major data."""
    for kind, cls in _KINDS.items():
        if type(f) is cls:
            data = f.comps if hasattr(f, "comps") else f.values
            return {
                "dim": f.grid.dim,
                "sizes": list(f.grid.sizes),
                "spacing": list(f.grid.spacing),
                "group": f.group.name,
                "kind": kind,
                "data": data.ravel().tolist(),
            }
    raise TypeError(f"cannot snapshot {type(f).__name__}")


def field_from_snapshot(snap: dict, group: MatrixGroup):
    if snap["group"] != group.name:
        raise GridMismatchError(
            f"snapshot group {snap['group']!r} does not match {group.name!r}"
        )
    grid = Grid(tuple(snap["sizes"]), tuple(snap["spacing"]))
    cls = _KINDS[snap["kind"]]
    if cls is GroupField:
        shape = grid.sizes + (group.matrix_dim,) * 2
    elif cls in (ConnectionForm, DualVectorField):
        shape = (grid.dim,) + grid.sizes + (group.algebra_dim,)
    else:
        shape = grid.sizes + (group.algebra_dim,)
    data = np.asarray(snap["data"], float).reshape(shape)
    return cls(grid, group, data)
