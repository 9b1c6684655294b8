"""Matrix Lie group kernel: bracket, adjoint/coadjoint actions, exp/log, metric duality.

Conventions
-----------
An algebra element is stored as its coefficient vector in a fixed basis that is
orthonormal for the ad-invariant inner product

    kappa(X, Y) = w * tr(X^T Y),

with the weight ``w`` chosen per group (1/2 for so(3), which makes the hat-map
basis orthonormal, so kappa is the plain dot product of coefficient vectors).
Dual elements use the dual basis; the pairing is then the coefficient dot
product and flat/sharp are coefficient identities.

All kernels operate on stacked arrays (leading axes arbitrary), so the same
code path serves single elements and whole lattice fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "DescriptorMismatchError",
    "MembershipError",
    "LogBranchError",
    "ProjectionError",
    "MatrixGroup",
    "so3",
    "generic_matrix_subgroup",
    "AlgebraElement",
    "DualAlgebraElement",
    "GroupElement",
    "bracket",
    "ad_star",
    "Ad",
    "exp_map",
    "log_map",
    "metric_dual",
    "project_group",
]

STRUCTURE_TOL = 1e-12
ORTHONORMALITY_TOL = 1e-12
SO3_MEMBERSHIP_TOL = 1e-9
SO3_LOG_ANGLE_MARGIN = 1e-6
PROJECTION_RADIUS = 0.1


class DescriptorMismatchError(ValueError):
    """Operands belong to different group descriptors."""


class MembershipError(ValueError):
    """Matrix fails the group membership test."""


class LogBranchError(ValueError):
    """Group element lies at or beyond the injectivity radius of exp."""


class ProjectionError(ValueError):
    """Matrix is too far from the group to project."""


def _so3_basis() -> np.ndarray:
    e = np.zeros((3, 3, 3))
    e[0] = [[0, 0, 0], [0, 0, -1], [0, 1, 0]]
    e[1] = [[0, 0, 1], [0, 0, 0], [-1, 0, 0]]
    e[2] = [[0, -1, 0], [1, 0, 0], [0, 0, 0]]
    return e


class MatrixGroup:
    """Descriptor for a matrix group G with a kappa-orthonormal algebra basis.

    The descriptor owns every array-level kernel; element wrappers and lattice
    fields delegate here so there is a single implementation per operation.
    """

    def __init__(self, name, basis, kappa_weight, is_so3=False,
                 exp_fn=None, log_fn=None, membership_fn=None, project_fn=None):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 3 or basis.shape[1] != basis.shape[2]:
            raise ValueError("basis must be a stack of square matrices")
        self.name = name
        self.basis = basis
        self.algebra_dim = basis.shape[0]
        self.matrix_dim = basis.shape[1]
        self.kappa_weight = float(kappa_weight)
        self.is_so3 = bool(is_so3)
        self.exp_fn = exp_fn
        self.log_fn = log_fn
        self.membership_fn = membership_fn
        self.project_fn = project_fn
        self._check_orthonormal()
        self.structure = self._structure_tensor()

    # -- descriptor validation -------------------------------------------------

    def _check_orthonormal(self):
        gram = self.kappa_weight * np.einsum(
            "aji,bji->ab", self.basis, self.basis
        )
        defect = np.max(np.abs(gram - np.eye(self.algebra_dim)))
        if defect > ORTHONORMALITY_TOL:
            raise ValueError(
                f"basis is not kappa-orthonormal (defect {defect:.3e})"
            )

    def _structure_tensor(self) -> np.ndarray:
        # C[a, b, c] with [e_a, e_b] = C[a, b, c] e_c, and closure check.
        comm = np.einsum("aij,bjk->abik", self.basis, self.basis)
        comm = comm - np.transpose(comm, (1, 0, 2, 3))
        c = self.to_coeffs(comm)
        rebuilt = np.einsum("abc,cij->abij", c, self.basis)
        defect = np.max(np.abs(comm - rebuilt))
        if defect > STRUCTURE_TOL:
            raise ValueError(
                f"algebra basis does not close under the bracket (defect {defect:.3e})"
            )
        return c

    # -- coefficient/matrix conversion ----------------------------------------

    def hat(self, coeffs) -> np.ndarray:
        """Coefficient vectors (..., d) to algebra matrices (..., n, n)."""
        return np.einsum("...a,aij->...ij", np.asarray(coeffs, float), self.basis)

    def to_coeffs(self, mats) -> np.ndarray:
        """kappa-orthogonal projection of matrices onto the algebra, in coefficients.

        For so(3) this is the antisymmetrization followed by the inverse hat map.
        """
        return self.kappa_weight * np.einsum(
            "...ij,aij->...a", np.asarray(mats, float), self.basis
        )

    # -- algebra kernels -------------------------------------------------------

    def bracket_arr(self, xi, eta) -> np.ndarray:
        return np.einsum("...a,...b,abc->...c", xi, eta, self.structure)

    def ad_star_arr(self, xi, mu) -> np.ndarray:
        # <ad*_xi mu, eta> = <mu, [xi, eta]> evaluated against every basis vector.
        return np.einsum("...a,...c,abc->...b", xi, mu, self.structure)

    def ad_arr(self, gmats, coeffs) -> np.ndarray:
        """Adjoint action g xi g^-1, re-expanded in the basis."""
        conj = gmats @ self.hat(coeffs) @ self.inverse_arr(gmats)
        return self.to_coeffs(conj)

    # -- group kernels ---------------------------------------------------------

    def inverse_arr(self, gmats) -> np.ndarray:
        if self.is_so3:
            return np.swapaxes(gmats, -1, -2)
        return np.linalg.inv(gmats)

    def membership_defect(self, mats) -> np.ndarray:
        """Frobenius defect from the group manifold (orthogonality for SO3)."""
        mats = np.asarray(mats, float)
        if self.membership_fn is not None:
            return np.asarray(self.membership_fn(mats), float)
        if self.is_so3:
            gram = np.swapaxes(mats, -1, -2) @ mats
            defect = np.linalg.norm(gram - np.eye(3), axis=(-2, -1))
            bad_det = np.linalg.det(mats) <= 0
            return np.where(bad_det, np.inf, defect)
        # Generic subgroups without their own test: accept matrices whose log
        # round-trips.
        try:
            coeffs = self.log_arr(mats)
        except LogBranchError:
            return np.full(mats.shape[:-2], np.inf)
        back = self.exp_arr(coeffs)
        return np.linalg.norm(back - mats, axis=(-2, -1))

    def check_membership(self, mats, tol=SO3_MEMBERSHIP_TOL):
        defect = self.membership_defect(mats)
        worst = float(np.max(defect))
        if not np.isfinite(worst) or worst > tol:
            raise MembershipError(
                f"matrix is not in {self.name} (defect {worst:.3e} > {tol:.1e})"
            )

    def exp_arr(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, float)
        if self.is_so3:
            return _so3_exp(coeffs, self.basis)
        if self.exp_fn is not None:
            return np.asarray(self.exp_fn(coeffs), float)
        return scipy.linalg.expm(self.hat(coeffs))

    def log_arr(self, gmats) -> np.ndarray:
        gmats = np.asarray(gmats, float)
        if self.is_so3:
            return _so3_log(gmats)
        if self.log_fn is not None:
            return np.asarray(self.log_fn(gmats), float)
        out = np.empty(gmats.shape[:-2] + (self.algebra_dim,))
        flat = gmats.reshape((-1,) + gmats.shape[-2:])
        logs = np.empty_like(flat)
        for k in range(flat.shape[0]):
            lg = scipy.linalg.logm(flat[k])
            if np.max(np.abs(lg.imag)) > 1e-8:
                raise LogBranchError("matrix logarithm left the real branch")
            logs[k] = lg.real
        out[...] = self.to_coeffs(logs.reshape(gmats.shape))
        return out

    def project_arr(self, mats) -> np.ndarray:
        """Nearest group element (polar decomposition for SO3)."""
        mats = np.asarray(mats, float)
        if self.project_fn is not None:
            return np.asarray(self.project_fn(mats), float)
        if not self.is_so3:
            raise ProjectionError(
                f"group projection is not available for {self.name}"
            )
        u, _, vt = np.linalg.svd(mats)
        rot = u @ vt
        # det == -1 cannot occur within the projection radius; guard anyway.
        bad = np.linalg.det(rot) < 0
        if np.any(bad):
            u = np.array(u)
            u[bad, ..., :, -1] *= -1.0
            rot = u @ vt
        dist = np.linalg.norm(mats - rot, axis=(-2, -1))
        if np.max(dist) > PROJECTION_RADIUS:
            raise ProjectionError(
                f"matrix is {np.max(dist):.3e} from {self.name}, beyond the "
                f"projection radius {PROJECTION_RADIUS}"
            )
        return rot

    def identity(self) -> np.ndarray:
        return np.eye(self.matrix_dim)

    def __repr__(self):
        return f"MatrixGroup({self.name!r}, dim={self.matrix_dim}, algebra_dim={self.algebra_dim})"


def _sinc_like(theta2):
    """Stable sin(t)/t and (1-cos t)/t^2 for squared angles."""
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                     np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                     (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    return a, b


def _so3_exp(coeffs, basis) -> np.ndarray:
    theta2 = np.einsum("...a,...a->...", coeffs, coeffs)
    k = np.einsum("...a,aij->...ij", coeffs, basis)
    a, b = _sinc_like(theta2)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def _so3_log(gmats) -> np.ndarray:
    tr = np.trace(gmats, axis1=-2, axis2=-1)
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if np.max(theta) >= np.pi - SO3_LOG_ANGLE_MARGIN:
        raise LogBranchError(
            f"rotation angle {np.max(theta):.8f} is within "
            f"{SO3_LOG_ANGLE_MARGIN:.1e} of the cut locus at pi"
        )
    anti = 0.5 * (gmats - np.swapaxes(gmats, -1, -2))
    vee = np.stack([anti[..., 2, 1], anti[..., 0, 2], anti[..., 1, 0]], axis=-1)
    small = theta < 1e-4
    theta2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(
            small,
            1.0 + theta2 / 6.0 + 7.0 * theta2 * theta2 / 360.0,
            theta / np.where(small, 1.0, np.sin(theta)),
        )
    return factor[..., None] * vee


_SO3 = None


def so3() -> MatrixGroup:
    """The shared SO(3) descriptor (hat-map basis, kappa = dot product)."""
    global _SO3
    if _SO3 is None:
        _SO3 = MatrixGroup("SO3", _so3_basis(), kappa_weight=0.5, is_so3=True)
    return _SO3


def generic_matrix_subgroup(name, basis, kappa_weight, exp_fn=None, log_fn=None,
                            membership_fn=None, project_fn=None) -> MatrixGroup:
    """Descriptor for a matrix subgroup given a kappa-orthonormal algebra basis.

    Closed-form exp/log, a membership test and a projection may be supplied;
    exp falls back to scaling-and-squaring and log to the real matrix
    logarithm otherwise.
    """
    return MatrixGroup(name, basis, kappa_weight, is_so3=False, exp_fn=exp_fn,
                       log_fn=log_fn, membership_fn=membership_fn,
                       project_fn=project_fn)


def group_by_name(name: str) -> MatrixGroup:
    if name == "SO3":
        return so3()
    raise ValueError(f"unknown group name {name!r}")


# -- element-level wrappers ------------------------------------------------


def _require_finite(coeffs):
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("algebra coefficients must be finite")


def _require_same_group(a, b):
    if a.group is not b.group:
        raise DescriptorMismatchError(
            f"operands belong to different descriptors "
            f"({a.group.name!r} vs {b.group.name!r})"
        )


@dataclass(frozen=True)
class AlgebraElement:
    """Element of the Lie algebra in the fixed orthonormal basis."""

    group: MatrixGroup
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, float))
        if self.coeffs.shape != (self.group.algebra_dim,):
            raise ValueError("coefficient vector has the wrong length")
        _require_finite(self.coeffs)

    def matrix(self) -> np.ndarray:
        return self.group.hat(self.coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class DualAlgebraElement:
    """Element of the dual algebra in the dual basis."""

    group: MatrixGroup
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, float))
        if self.coeffs.shape != (self.group.algebra_dim,):
            raise ValueError("coefficient vector has the wrong length")
        _require_finite(self.coeffs)

    def pair(self, xi: AlgebraElement) -> float:
        _require_same_group(self, xi)
        return float(self.coeffs @ xi.coeffs)


@dataclass(frozen=True)
class GroupElement:
    """Matrix representative of a group element; membership checked on construction."""

    group: MatrixGroup
    matrix: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, float))
        n = self.group.matrix_dim
        if self.matrix.shape != (n, n):
            raise ValueError("group matrix has the wrong shape")
        if self.validate:
            self.group.check_membership(self.matrix)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, self.group.inverse_arr(self.matrix), validate=False)


def bracket(xi: AlgebraElement, eta: AlgebraElement) -> AlgebraElement:
    """Lie bracket [xi, eta] = xi eta - eta xi, re-expanded in the basis."""
    _require_same_group(xi, eta)
    return AlgebraElement(xi.group, xi.group.bracket_arr(xi.coeffs, eta.coeffs))


def ad_star(xi: AlgebraElement, mu: DualAlgebraElement) -> DualAlgebraElement:
    """Coadjoint action: the unique mu' with <mu', eta> = <mu, [xi, eta]>."""
    _require_same_group(xi, mu)
    return DualAlgebraElement(xi.group, xi.group.ad_star_arr(xi.coeffs, mu.coeffs))


def Ad(g: GroupElement, xi: AlgebraElement) -> AlgebraElement:
    """Adjoint action g xi g^-1."""
    _require_same_group(g, xi)
    return AlgebraElement(xi.group, g.group.ad_arr(g.matrix, xi.coeffs))


def exp_map(xi: AlgebraElement) -> GroupElement:
    return GroupElement(xi.group, xi.group.exp_arr(xi.coeffs), validate=False)


def log_map(g: GroupElement) -> AlgebraElement:
    """Principal logarithm; raises LogBranchError at the cut locus."""
    return AlgebraElement(g.group, g.group.log_arr(g.matrix))


def metric_dual(x):
    """Flat/sharp isomorphism via kappa; a coefficient identity in this basis."""
    if isinstance(x, AlgebraElement):
        return DualAlgebraElement(x.group, x.coeffs.copy())
    if isinstance(x, DualAlgebraElement):
        return AlgebraElement(x.group, x.coeffs.copy())
    raise TypeError("metric_dual expects an AlgebraElement or DualAlgebraElement")


def project_group(group: MatrixGroup, mat) -> GroupElement:
    """Nearest group element to a raw matrix (polar decomposition for SO3)."""
    return GroupElement(group, group.project_arr(np.asarray(mat, float)), validate=False)
