"""Univariate and tensor-product B-spline machinery.

Basis evaluation follows the Cox-de Boor derivative recursion (Piegl & Tiller,
*The NURBS Book*, A2.1/A2.3); knot insertion uses Boehm's algorithm applied to
homogeneous control points so that rational patches are handled as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "RefinementError",
    "GeometryError",
    "KnotVector",
    "SplinePatch",
    "PointEval",
    "find_span",
    "basis_and_derivs",
    "insert_knot",
    "insert_knot_curve",
    "geometry_map",
    "evaluate_grid",
    "greville",
]

_KNOT_TOL = 1e-12


class DomainError(ValueError):
    """Parametric coordinate outside the knot range."""


class RefinementError(ValueError):
    """Knot insertion would break the required C1 continuity."""


class GeometryError(ValueError):
    """Degenerate geometry mapping (singular or inverted Jacobian)."""


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector of a univariate B-spline basis.

    Parameters
    ----------
    degree : int
        Polynomial degree ``p``; at least 2 so that the basis is C1.
    knots : array_like
        Nondecreasing knots. The end knots must be repeated exactly
        ``p + 1`` times and interior multiplicities may not exceed ``p - 1``.
    """

    degree: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = int(self.degree)
        U = np.asarray(self.knots, dtype=float).copy()
        U.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", U)
        if p < 2:
            raise ValueError(f"degree must be >= 2 for C1 continuity, got {p}")
        if U.ndim != 1 or U.size < 2 * (p + 1):
            raise ValueError("knot vector too short for the requested degree")
        if np.any(np.diff(U) < 0):
            raise ValueError("knots must be nondecreasing")
        if U[-1] <= U[0]:
            raise ValueError("knot vector has an empty parametric range")
        vals, mult = _multiplicities(U)
        if mult[0] != p + 1 or mult[-1] != p + 1:
            raise ValueError(
                f"end knots must have multiplicity exactly {p + 1}, "
                f"got {mult[0]} and {mult[-1]}"
            )
        if mult.size > 2 and mult[1:-1].max() > p - 1:
            bad = vals[1:-1][mult[1:-1] > p - 1]
            raise ValueError(
                f"interior knot(s) {bad.tolist()} exceed multiplicity {p - 1}"
            )

    @classmethod
    def from_breaks(cls, degree: int, breaks) -> "KnotVector":
        """Open knot vector with single interior knots at ``breaks[1:-1]``."""
        b = np.asarray(breaks, dtype=float)
        U = np.concatenate([np.full(degree, b[0]), b, np.full(degree, b[-1])])
        return cls(degree, U)

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return _multiplicities(self.knots)[0]

    @property
    def span_indices(self) -> np.ndarray:
        """Index ``s`` of every non-empty span ``[U[s], U[s+1])``."""
        U = self.knots
        s = np.arange(self.degree, U.size - self.degree - 1)
        return s[U[s + 1] > U[s]]

    def multiplicity(self, value: float) -> int:
        return int(np.count_nonzero(np.abs(self.knots - value) <= _KNOT_TOL))


def _multiplicities(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = [U[0]]
    mult = [1]
    for u in U[1:]:
        if u - vals[-1] <= _KNOT_TOL:
            mult[-1] += 1
        else:
            vals.append(u)
            mult.append(1)
    return np.array(vals), np.array(mult)


def greville(kv: KnotVector) -> np.ndarray:
    """Greville abscissae; control points placed here reproduce ``x = xi``."""
    p, U = kv.degree, kv.knots
    return np.array([U[i + 1:i + p + 1].mean() for i in range(kv.n_basis)])


def find_span(kv: KnotVector, xi: float) -> int:
    """Index ``s`` with ``U[s] <= xi < U[s+1]``.

    ``xi`` equal to the last knot maps to the last non-empty span.
    """
    U, p = kv.knots, kv.degree
    lo, hi = U[0], U[-1]
    if not (lo - _KNOT_TOL <= xi <= hi + _KNOT_TOL):
        raise DomainError(f"xi={xi!r} outside knot range [{lo}, {hi}]")
    n = kv.n_basis
    if xi >= U[n]:
        return n - 1
    if xi <= U[p]:
        return p
    return int(np.searchsorted(U, xi, side="right") - 1)


def basis_and_derivs(kv: KnotVector, xi: float, order: int = 2,
                     span: int | None = None) -> np.ndarray:
    """Nonzero basis functions and their parametric derivatives at ``xi``.

    Returns
    -------
    ders : ndarray, shape (order + 1, p + 1)
        ``ders[k, j]`` is the k-th derivative of ``N_{span-p+j}``.
    """
    p, U = kv.degree, kv.knots
    if order < 0 or order > 2:
        raise ValueError(f"derivative order must be in 0..2, got {order}")
    if order > p:
        raise ValueError(f"derivative order {order} unsupported for degree {p}")
    if span is None:
        span = find_span(kv, xi)

    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - U[span + 1 - j]
        right[j] = U[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, order + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


@dataclass(frozen=True)
class SplinePatch:
    """Tensor-product spline surface in the plane.

    ``control_points`` has shape ``(n_xi, n_eta, 2)`` in mm and ``weights``
    shape ``(n_xi, n_eta)``. Control point ``(i, j)`` carries the flat index
    ``i + n_xi * j``.
    """

    kv_xi: KnotVector
    kv_eta: KnotVector
    control_points: np.ndarray = field(repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        P = np.asarray(self.control_points, dtype=float).copy()
        shape = (self.kv_xi.n_basis, self.kv_eta.n_basis)
        if P.shape != shape + (2,):
            raise ValueError(
                f"control grid {P.shape[:-1]} does not match basis counts {shape}"
            )
        W = np.ones(shape) if self.weights is None else np.asarray(
            self.weights, dtype=float).copy()
        if W.shape != shape:
            raise ValueError("weights shape must match the control grid")
        if np.any(W <= 0):
            raise ValueError("weights must be positive")
        P.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "control_points", P)
        object.__setattr__(self, "weights", W)

    @classmethod
    def rectangle(cls, degree: int, xi_breaks, eta_breaks,
                  origin=(0.0, 0.0), size=(1.0, 1.0)) -> "SplinePatch":
        """Affine rectangle patch with parametric breaks normalised to [0, 1].

        Control points sit at the scaled Greville abscissae, so the map is
        ``x = origin + size * (xi, eta)`` exactly.
        """
        kx = KnotVector.from_breaks(degree, _normalise(xi_breaks))
        ke = KnotVector.from_breaks(degree, _normalise(eta_breaks))
        gx, ge = greville(kx), greville(ke)
        P = np.empty((gx.size, ge.size, 2))
        P[..., 0] = origin[0] + size[0] * gx[:, None]
        P[..., 1] = origin[1] + size[1] * ge[None, :]
        return cls(kx, ke, P)

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv_xi.n_basis, self.kv_eta.n_basis

    @property
    def n_control_points(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def is_rational(self) -> bool:
        return not np.all(self.weights == 1.0)

    def flat_control_points(self) -> np.ndarray:
        """Control points as ``(n_cp, 2)`` in flat-index order."""
        return self.control_points.transpose(1, 0, 2).reshape(-1, 2)

    def flat_index(self, i, j):
        return np.asarray(i) + self.shape[0] * np.asarray(j)


def _normalise(breaks) -> np.ndarray:
    b = np.asarray(breaks, dtype=float)
    return (b - b[0]) / (b[-1] - b[0])


def insert_knot_curve(kv: KnotVector, Pw: np.ndarray, u: float):
    """Insert ``u`` once into a curve with homogeneous control points ``Pw``.

    Returns the refined knot vector and control points (Boehm's algorithm).
    """
    p, U = kv.degree, kv.knots
    lo, hi = kv.domain
    if not (lo < u < hi):
        raise RefinementError(f"knot {u!r} must lie strictly inside ({lo}, {hi})")
    s = kv.multiplicity(u)
    if s + 1 > p - 1:
        raise RefinementError(
            f"inserting {u!r} raises its multiplicity to {s + 1} > {p - 1}; "
            "the basis would lose C1 continuity"
        )
    k = find_span(kv, u)
    n = kv.n_basis
    Q = np.empty((n + 1,) + Pw.shape[1:])
    Q[:k - p + 1] = Pw[:k - p + 1]
    for i in range(k - p + 1, k - s + 1):
        alpha = (u - U[i]) / (U[i + p] - U[i])
        Q[i] = alpha * Pw[i] + (1.0 - alpha) * Pw[i - 1]
    Q[k - s + 1:] = Pw[k - s:]
    U_new = np.insert(U, k + 1, u)
    return KnotVector(p, U_new), Q


def insert_knot(patch: SplinePatch, direction: int, xi_new: float) -> SplinePatch:
    """Insert one knot into ``patch`` along ``direction`` (0 = xi, 1 = eta).

    The mapped geometry is unchanged; the basis gains one function.
    """
    if direction not in (0, 1):
        raise ValueError("direction must be 0 (xi) or 1 (eta)")
    W = patch.weights[..., None]
    Pw = np.concatenate([patch.control_points * W, W], axis=-1)
    if direction == 1:
        Pw = Pw.transpose(1, 0, 2)
    kv = patch.kv_xi if direction == 0 else patch.kv_eta
    kv_new, Q = insert_knot_curve(kv, Pw, xi_new)
    if direction == 1:
        Q = Q.transpose(1, 0, 2)
    w = Q[..., 2]
    P = Q[..., :2] / w[..., None]
    if direction == 0:
        return SplinePatch(kv_new, patch.kv_eta, P, w)
    return SplinePatch(patch.kv_xi, kv_new, P, w)


@dataclass
class PointEval:
    """Geometry and physical basis derivatives at parametric points.

    Arrays carry a leading point axis ``m``; ``nb = (p_xi+1)(p_eta+1)``.
    ``d2N`` columns are ``(xx, yy, xy)``.
    """

    x: np.ndarray          # (m, 2)
    jacobian: np.ndarray   # (m, 2, 2), J[i, a] = dx_i / dxi_a
    det_j: np.ndarray      # (m,)
    indices: np.ndarray    # (nb,) flat control-point indices
    N: np.ndarray          # (m, nb)
    dN: np.ndarray         # (m, nb, 2)
    d2N: np.ndarray        # (m, nb, 3)


def _ders_1d(kv: KnotVector, span: int, pts) -> np.ndarray:
    return np.stack([basis_and_derivs(kv, float(t), 2, span) for t in pts])


def evaluate_grid(patch: SplinePatch, span_xi: int, span_eta: int,
                  xis, etas, ders_xi=None, ders_eta=None) -> PointEval:
    """Evaluate basis and geometry on the tensor grid ``xis x etas``.

    All points must lie in the closed element ``(span_xi, span_eta)``.
    Points are ordered with ``xi`` fastest. Precomputed 1D derivative tables
    (shape ``(len(pts), 3, p+1)``) may be passed to skip the recursion.
    """
    kx, ke = patch.kv_xi, patch.kv_eta
    px, pe = kx.degree, ke.degree
    Dx = _ders_1d(kx, span_xi, xis) if ders_xi is None else ders_xi
    De = _ders_1d(ke, span_eta, etas) if ders_eta is None else ders_eta
    nx, ne = Dx.shape[0], De.shape[0]

    ii = np.arange(span_xi - px, span_xi + 1)
    jj = np.arange(span_eta - pe, span_eta + 1)
    # local basis a = ib + (px+1) * jb, matching the flat control-point order
    idx = (ii[None, :] + patch.shape[0] * jj[:, None]).ravel()

    def tp(a, b):
        # (nx, px+1) x (ne, pe+1) -> (ne*nx, nb) with xi fastest
        return np.einsum("qi,rj->rqji", a, b).reshape(ne * nx, -1)

    B = tp(Dx[:, 0], De[:, 0])
    Bx, By = tp(Dx[:, 1], De[:, 0]), tp(Dx[:, 0], De[:, 1])
    Bxx, Byy = tp(Dx[:, 2], De[:, 0]), tp(Dx[:, 0], De[:, 2])
    Bxy = tp(Dx[:, 1], De[:, 1])

    Pc = patch.control_points[ii[:, None], jj[None, :]].transpose(1, 0, 2).reshape(-1, 2)
    w = patch.weights[ii[:, None], jj[None, :]].T.ravel()

    if patch.is_rational:
        R, Rx, Ry, Rxx, Ryy, Rxy = _rationalise(B, Bx, By, Bxx, Byy, Bxy, w)
    else:
        R, Rx, Ry, Rxx, Ryy, Rxy = B, Bx, By, Bxx, Byy, Bxy

    x = R @ Pc
    J = np.stack([Rx @ Pc, Ry @ Pc], axis=-1)           # (m, 2, 2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 1e-14 * np.abs(J).max()):
        raise GeometryError(
            f"singular or inverted Jacobian in element span ({span_xi}, {span_eta})"
        )
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det

    dxi = np.stack([Rx, Ry], axis=-1)                    # (m, nb, 2)
    dN = np.einsum("mba,mai->mbi", dxi, Jinv)            # d/dx_i = sum_a Jinv[a,i] d/dxi_a

    # second derivatives: Hxi = J^T Hx J + sum_i N_{,x_i} d2x_i/dxi2
    X2 = np.stack([Rxx @ Pc, Ryy @ Pc, Rxy @ Pc], axis=1)  # (m, 3, 2)
    Hxi = np.empty(dN.shape[:2] + (2, 2))
    Hxi[..., 0, 0] = Rxx
    Hxi[..., 1, 1] = Ryy
    Hxi[..., 0, 1] = Rxy
    Hxi[..., 1, 0] = Rxy
    G = np.empty(X2.shape[:1] + (2, 2, 2))               # G[m, i, a, b]
    G[:, :, 0, 0] = X2[:, 0]
    G[:, :, 1, 1] = X2[:, 1]
    G[:, :, 0, 1] = X2[:, 2]
    G[:, :, 1, 0] = X2[:, 2]
    M = Hxi - np.einsum("mni,miab->mnab", dN, G)
    Hx = np.einsum("mai,mbac,mcj->mbij", Jinv, M, Jinv)
    d2N = np.stack([Hx[..., 0, 0], Hx[..., 1, 1], Hx[..., 0, 1]], axis=-1)
    return PointEval(x, J, det, idx, R, dN, d2N)


def _rationalise(B, Bx, By, Bxx, Byy, Bxy, w):
    Nw = B * w
    W = Nw.sum(axis=1, keepdims=True)
    Wx = (Bx * w).sum(axis=1, keepdims=True)
    Wy = (By * w).sum(axis=1, keepdims=True)
    Wxx = (Bxx * w).sum(axis=1, keepdims=True)
    Wyy = (Byy * w).sum(axis=1, keepdims=True)
    Wxy = (Bxy * w).sum(axis=1, keepdims=True)
    R = Nw / W
    Rx = (Bx * w - R * Wx) / W
    Ry = (By * w - R * Wy) / W
    Rxx = (Bxx * w - 2 * Rx * Wx - R * Wxx) / W
    Ryy = (Byy * w - 2 * Ry * Wy - R * Wyy) / W
    Rxy = (Bxy * w - Rx * Wy - Ry * Wx - R * Wxy) / W
    return R, Rx, Ry, Rxx, Ryy, Rxy


def geometry_map(patch: SplinePatch, xi: float, eta: float) -> PointEval:
    """Physical point, Jacobian and pushed-forward basis derivatives at one point."""
    sx = find_span(patch.kv_xi, xi)
    se = find_span(patch.kv_eta, eta)
    return evaluate_grid(patch, sx, se, [xi], [eta])
