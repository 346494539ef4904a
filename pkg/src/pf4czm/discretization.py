"""Analysis mesh on a single spline patch.

Elements are the non-empty knot spans. Each control point carries three
unknowns ``(u_x, u_y, phi)``; the global vector stores all displacement
unknowns first (``2k, 2k+1`` for active control point ``k``) followed by the
phase-field block (``2n + k``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .splines import SplinePatch, _ders_1d, evaluate_grid, find_span, greville

__all__ = [
    "MeshError",
    "gauss_rule",
    "RefinementBand",
    "RectangleGeometry",
    "Region",
    "Mesh",
    "BoundaryConditions",
    "PointLocation",
    "graded_breaks",
    "build_mesh",
    "apply_notch",
    "locate_point_dof",
    "locate_point",
    "EDGES",
    "edge_control_points",
    "external_force",
    "greville_points",
]

EDGES = ("bottom", "right", "top", "left")
_GEOM_TOL = 1e-8


class MeshError(ValueError):
    """Invalid mesh, refinement or notch request."""


def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1] for 1 <= n <= 6."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= 6:
        raise ValueError(f"number of Gauss points must be in 1..6, got {n!r}")
    return np.polynomial.legendre.leggauss(int(n))


@dataclass(frozen=True)
class RefinementBand:
    """Axis-aligned strip ``lo <= coord <= hi`` meshed with spans <= ``h``."""

    axis: str
    lo: float
    hi: float
    h: float

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise MeshError(f"band axis must be 'x' or 'y', got {self.axis!r}")
        if not self.hi > self.lo:
            raise MeshError("band must have hi > lo")
        if not self.h > 0:
            raise MeshError("band span size h must be positive")


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]`` in mm."""

    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, x, y, tol: float = 1e-9):
        return ((x >= self.x0 - tol) & (x <= self.x1 + tol)
                & (y >= self.y0 - tol) & (y <= self.y1 + tol))

    @property
    def empty(self) -> bool:
        return self.x1 <= self.x0 or self.y1 <= self.y0


@dataclass(frozen=True)
class RectangleGeometry:
    """Rectangular domain meshed as one affine patch.

    ``features_x`` / ``features_y`` list coordinates that must coincide with
    knot lines (notch faces, load points, supports).
    """

    width: float
    height: float
    degree: int = 3
    max_span: float | tuple[float, float] = 20.0
    origin: tuple[float, float] = (0.0, 0.0)
    features_x: tuple[float, ...] = ()
    features_y: tuple[float, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise MeshError("rectangle dimensions must be positive")
        if self.degree < 2:
            raise MeshError("degree must be at least 2 (C1 basis)")

    def spans(self) -> tuple[float, float]:
        if isinstance(self.max_span, (int, float)):
            return float(self.max_span), float(self.max_span)
        return float(self.max_span[0]), float(self.max_span[1])


def graded_breaks(lo: float, hi: float, max_span: float,
                  bands: Sequence[tuple[float, float, float]] = (),
                  features: Sequence[float] = ()) -> np.ndarray:
    """Element boundaries on ``[lo, hi]``.

    Segments between consecutive feature points are divided uniformly, with
    spans no wider than the band size inside a band and ``max_span``
    elsewhere. Spans more than twice as wide as a neighbour are then bisected
    until adjacent widths differ by at most a factor of two.
    """
    if not max_span > 0:
        raise MeshError("max_span must be positive")
    length = hi - lo
    tol = 1e-9 * length
    pts = [lo, hi]
    for b_lo, b_hi, h in bands:
        if b_lo < lo - tol or b_hi > hi + tol:
            raise MeshError(f"refinement band [{b_lo}, {b_hi}] lies outside [{lo}, {hi}]")
        if not h > 0:
            raise MeshError("band span size must be positive")
        pts += [b_lo, b_hi]
    for f in features:
        if f < lo - tol or f > hi + tol:
            raise MeshError(f"feature coordinate {f} outside [{lo}, {hi}]")
        pts.append(min(max(f, lo), hi))
    pts = np.unique(np.round(np.asarray(pts, dtype=float), 12))
    merged = [pts[0]]
    for p in pts[1:]:
        if p - merged[-1] > tol:
            merged.append(p)
    merged[-1] = hi
    breaks = [merged[0]]
    for a, b in zip(merged[:-1], merged[1:]):
        mid = 0.5 * (a + b)
        target = max_span
        for b_lo, b_hi, h in bands:
            if b_lo - tol <= mid <= b_hi + tol:
                target = min(target, h)
        n = max(1, math.ceil((b - a) / target - 1e-9))
        breaks.extend(np.linspace(a, b, n + 1)[1:])
    breaks = np.asarray(breaks)

    while True:
        w = np.diff(breaks)
        left = np.r_[np.inf, w[:-1]]
        right = np.r_[w[1:], np.inf]
        bad = w > 2.0 * np.minimum(left, right) * (1 + 1e-9)
        if not bad.any():
            break
        mids = 0.5 * (breaks[:-1] + breaks[1:])[bad]
        breaks = np.sort(np.concatenate([breaks, mids]))
    return breaks


@dataclass
class BoundaryConditions:
    """Dirichlet data, edge tractions and body force.

    The value prescribed on ``dofs[k]`` at load level ``a`` is
    ``values[k] + driven[k] * a``; dofs with ``driven != 0`` are the
    displacement-controlled ones whose reactions form the load curve.
    Tractions are ``(edge, (t_x, t_y))`` pairs in N/mm^2 acting on the
    undeformed edge (force per unit thickness per unit length is ``t``).
    """

    dofs: np.ndarray
    values: np.ndarray
    driven: np.ndarray
    tractions: list = field(default_factory=list)
    body_force: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.driven = np.asarray(self.driven, dtype=float)
        if not (self.dofs.shape == self.values.shape == self.driven.shape):
            raise MeshError("dirichlet arrays must have matching shapes")
        if np.unique(self.dofs).size != self.dofs.size:
            raise MeshError("a dof is constrained more than once")
        for edge, _ in self.tractions:
            if edge not in EDGES:
                raise MeshError(f"unknown edge {edge!r}; expected one of {EDGES}")

    @classmethod
    def empty(cls) -> "BoundaryConditions":
        return cls(np.zeros(0, int), np.zeros(0), np.zeros(0))

    @property
    def driven_dofs(self) -> np.ndarray:
        return self.dofs[self.driven != 0]

    def prescribed(self, load: float) -> np.ndarray:
        return self.values + self.driven * load


@dataclass
class PointLocation:
    """Boundary point resolved on the patch."""

    point: np.ndarray
    edge: str
    xi: float
    eta: float
    indices: np.ndarray      # flat control-point indices with nonzero weight
    weights: np.ndarray      # basis values at the point
    nearest_cp: int          # flat index of the closest active control point
    dofs: np.ndarray         # (u_x, u_y, phi) dofs of ``nearest_cp``


class Mesh:
    """Elements, quadrature kernels and dof numbering of a patch.

    Per element ``e`` and quadrature point ``q`` the arrays ``N``, ``dN``
    (physical gradient), ``d2N`` (columns xx, yy, xy) and ``wdet`` (Gauss
    weight times Jacobian determinant) are precomputed once.
    """

    def __init__(self, patch: SplinePatch, span_xi, span_eta, kernels,
                 n_gauss: tuple[int, int], regions_removed=()):
        self.patch = patch
        self.degree = (patch.kv_xi.degree, patch.kv_eta.degree)
        self.n_gauss = n_gauss
        self.span_xi = np.asarray(span_xi, dtype=np.int64)
        self.span_eta = np.asarray(span_eta, dtype=np.int64)
        self.conn, self.N, self.dN, self.d2N, self.wdet, self.xq = kernels
        self.regions_removed = tuple(regions_removed)

        ncp = patch.n_control_points
        used = np.zeros(ncp, dtype=bool)
        used[self.conn.ravel()] = True
        self.active_cps = np.flatnonzero(used)
        n = self.active_cps.size
        self.n_active = n
        self.dof_map = -np.ones((ncp, 3), dtype=np.int64)
        k = np.arange(n)
        self.dof_map[self.active_cps, 0] = 2 * k
        self.dof_map[self.active_cps, 1] = 2 * k + 1
        self.dof_map[self.active_cps, 2] = 2 * n + k

        d = self.dof_map[self.conn]                      # (ne, nb, 3)
        self.elem_udofs = d[..., :2].reshape(len(self.conn), -1)
        self.elem_pdofs = d[..., 2]
        self.elem_dofs = np.concatenate([self.elem_udofs, self.elem_pdofs], axis=1)
        self._pattern = None
        self._bounds = None
        for a in (self.conn, self.N, self.dN, self.d2N, self.wdet, self.xq):
            a.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.conn.shape[0]

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_active

    @property
    def n_u(self) -> int:
        return 2 * self.n_active

    @property
    def n_qp(self) -> int:
        return self.wdet.shape[1]

    @property
    def h_min(self) -> float:
        b = self.element_bounds()
        return float(min((b[:, 1] - b[:, 0]).min(), (b[:, 3] - b[:, 2]).min()))

    def element_bounds(self) -> np.ndarray:
        """Physical bounding boxes ``(x0, x1, y0, y1)`` of every element."""
        if self._bounds is not None:
            return self._bounds
        kx, ke = self.patch.kv_xi.knots, self.patch.kv_eta.knots
        out = np.empty((self.n_elements, 4))
        # corners of an affine patch map to the bounding box
        P = self.patch
        for e, (sx, se) in enumerate(zip(self.span_xi, self.span_eta)):
            ev = evaluate_grid(P, sx, se, [kx[sx], kx[sx + 1]], [ke[se], ke[se + 1]])
            out[e] = (ev.x[:, 0].min(), ev.x[:, 0].max(),
                      ev.x[:, 1].min(), ev.x[:, 1].max())
        out.setflags(write=False)
        self._bounds = out
        return out

    def cp_coordinates(self) -> np.ndarray:
        """Physical positions of the active control points, shape (n, 2)."""
        return self.patch.flat_control_points()[self.active_cps]

    def area(self) -> float:
        return float(self.wdet.sum())

    def sparsity(self):
        """CSR pattern of the coupled matrix and the element scatter map.

        Returns ``(indptr, indices, scatter)`` where ``scatter`` has shape
        ``(ne, nd, nd)`` and holds the CSR data position of each element entry.
        """
        if self._pattern is None:
            ed = self.elem_dofs
            ne, nd = ed.shape
            nt = self.n_dofs
            rows = np.repeat(ed, nd, axis=1).ravel()
            cols = np.tile(ed, (1, nd)).ravel()
            keys = rows * nt + cols
            uniq, inv = np.unique(keys, return_inverse=True)
            r = uniq // nt
            indptr = np.zeros(nt + 1, dtype=np.int64)
            np.add.at(indptr, r + 1, 1)
            indptr = np.cumsum(indptr)
            indices = (uniq % nt).astype(np.int64)
            self._pattern = (indptr, indices, inv.reshape(ne, nd, nd))
        return self._pattern

    def element_index(self, x: float, y: float) -> int:
        """Index of the element containing the physical point, or -1."""
        b = self.element_bounds()
        hit = np.flatnonzero((b[:, 0] <= x + 1e-12) & (x <= b[:, 1] + 1e-12)
                             & (b[:, 2] <= y + 1e-12) & (y <= b[:, 3] + 1e-12))
        return int(hit[0]) if hit.size else -1

    def subset(self, keep: np.ndarray, regions_removed=()) -> "Mesh":
        keep = np.asarray(keep, dtype=bool)
        kernels = tuple(np.array(a[keep]) for a in
                        (self.conn, self.N, self.dN, self.d2N, self.wdet, self.xq))
        return Mesh(self.patch, self.span_xi[keep], self.span_eta[keep], kernels,
                    self.n_gauss, self.regions_removed + tuple(regions_removed))


def _mesh_from_patch(patch: SplinePatch, n_gauss=None) -> Mesh:
    px, pe = patch.kv_xi.degree, patch.kv_eta.degree
    if n_gauss is None:
        n_gauss = (px + 1, pe + 1)
    gx, wx = gauss_rule(n_gauss[0])
    ge, we = gauss_rule(n_gauss[1])
    Ux, Ue = patch.kv_xi.knots, patch.kv_eta.knots
    sxs, ses = patch.kv_xi.span_indices, patch.kv_eta.span_indices

    def tables(kv, spans, g, w):
        U = kv.knots
        out = {}
        for s in spans:
            a, b = U[s], U[s + 1]
            pts = 0.5 * (b - a) * g + 0.5 * (a + b)
            out[s] = (pts, 0.5 * (b - a) * w, _ders_1d(kv, s, pts))
        return out

    tx = tables(patch.kv_xi, sxs, gx, wx)
    te = tables(patch.kv_eta, ses, ge, we)
    span_xi, span_eta = [], []
    conn, N, dN, d2N, wdet, xq = [], [], [], [], [], []
    for se in ses:
        for sx in sxs:
            px_pts, px_w, Dx = tx[sx]
            pe_pts, pe_w, De = te[se]
            ev = evaluate_grid(patch, sx, se, px_pts, pe_pts, Dx, De)
            w2 = (pe_w[:, None] * px_w[None, :]).ravel()
            span_xi.append(sx)
            span_eta.append(se)
            conn.append(ev.indices)
            N.append(ev.N)
            dN.append(ev.dN)
            d2N.append(ev.d2N)
            wdet.append(w2 * ev.det_j)
            xq.append(ev.x)
    kernels = tuple(np.asarray(a) for a in (conn, N, dN, d2N, wdet, xq))
    return Mesh(patch, span_xi, span_eta, kernels, tuple(n_gauss))


def build_mesh(geometry: RectangleGeometry,
               bands: Sequence[RefinementBand] = ()) -> Mesh:
    """Graded single-patch mesh of a rectangle.

    Spans intersecting a band are no wider than the band's ``h``; outside,
    spans grow by at most a factor two per span up to ``max_span``.
    """
    x0, y0 = geometry.origin
    W, H = geometry.width, geometry.height
    sx, sy = geometry.spans()
    bx = [(b.lo, b.hi, b.h) for b in bands if b.axis == "x"]
    by = [(b.lo, b.hi, b.h) for b in bands if b.axis == "y"]
    xb = graded_breaks(x0, x0 + W, sx, bx, geometry.features_x)
    yb = graded_breaks(y0, y0 + H, sy, by, geometry.features_y)
    patch = SplinePatch.rectangle(geometry.degree, xb, yb, origin=(x0, y0), size=(W, H))
    return _mesh_from_patch(patch)


def apply_notch(mesh: Mesh, region: Region) -> Mesh:
    """Remove the elements inside an axis-aligned slit or cut-out.

    The region must reach the patch boundary and its edges must coincide with
    element boundaries. Control points left without a supporting element lose
    their dofs; the exposed faces are traction free.
    """
    if region.empty:
        return mesh
    b = mesh.element_bounds()
    xmin, xmax = b[:, 0].min(), b[:, 1].max()
    ymin, ymax = b[:, 2].min(), b[:, 3].max()
    tol = 1e-9 * max(xmax - xmin, ymax - ymin)
    touches = (abs(region.x0 - xmin) <= tol or abs(region.x1 - xmax) <= tol
               or abs(region.y0 - ymin) <= tol or abs(region.y1 - ymax) <= tol)
    if not touches:
        raise MeshError("notch region must reach the patch boundary")
    xs = np.unique(np.r_[b[:, 0], b[:, 1]])
    ys = np.unique(np.r_[b[:, 2], b[:, 3]])
    for name, v, lines in (("x0", region.x0, xs), ("x1", region.x1, xs),
                           ("y0", region.y0, ys), ("y1", region.y1, ys)):
        if np.min(np.abs(lines - v)) > tol:
            raise MeshError(
                f"notch edge {name}={v} does not lie on a knot line; refine the "
                "mesh with this coordinate as a feature first"
            )
    inside = ((b[:, 0] >= region.x0 - tol) & (b[:, 1] <= region.x1 + tol)
              & (b[:, 2] >= region.y0 - tol) & (b[:, 3] <= region.y1 + tol))
    if inside.all():
        raise MeshError("notch removes every element")
    return mesh.subset(~inside, (region,))


def _edge_param(edge: str, t: float) -> tuple[float, float]:
    return {"bottom": (t, 0.0), "top": (t, 1.0),
            "left": (0.0, t), "right": (1.0, t)}[edge]


def locate_point_dof(mesh: Mesh, point) -> PointLocation:
    """Resolve a physical point on the patch boundary.

    The parametric preimage is found by Newton inversion along each boundary
    curve; the point must lie on one of them within 1e-8 mm.
    """
    P = np.asarray(point, dtype=float)
    patch = mesh.patch
    lo_x, hi_x = patch.kv_xi.domain
    lo_e, hi_e = patch.kv_eta.domain
    best = None
    for edge in EDGES:
        kv = patch.kv_xi if edge in ("bottom", "top") else patch.kv_eta
        lo, hi = kv.domain
        fixed = {"bottom": lo_e, "top": hi_e, "left": lo_x, "right": hi_x}[edge]

        def curve(t):
            xi, eta = (t, fixed) if edge in ("bottom", "top") else (fixed, t)
            ev = evaluate_grid(patch, find_span(patch.kv_xi, xi),
                               find_span(patch.kv_eta, eta), [xi], [eta])
            tangent = ev.jacobian[0, :, 0 if edge in ("bottom", "top") else 1]
            return ev.x[0], tangent

        ts = np.linspace(lo, hi, 33)
        d = [np.linalg.norm(curve(t)[0] - P) for t in ts]
        t = ts[int(np.argmin(d))]
        for _ in range(50):
            c, dc = curve(t)
            step = np.dot(c - P, dc) / np.dot(dc, dc)
            t = min(max(t - step, lo), hi)
            if abs(step) < 1e-15 * max(1.0, abs(hi - lo)):
                break
        dist = np.linalg.norm(curve(t)[0] - P)
        if best is None or dist < best[0]:
            best = (dist, edge, t, fixed)
    dist, edge, t, fixed = best
    if dist > _GEOM_TOL:
        raise MeshError(f"point {P.tolist()} is not on the patch boundary "
                        f"(distance {dist:.3e} mm)")
    xi, eta = (t, fixed) if edge in ("bottom", "top") else (fixed, t)
    ev = evaluate_grid(patch, find_span(patch.kv_xi, xi), find_span(patch.kv_eta, eta),
                       [xi], [eta])
    w = ev.N[0]
    nz = np.abs(w) > 1e-14
    cps = mesh.cp_coordinates()
    k = int(np.argmin(np.linalg.norm(cps - P, axis=1)))
    cp = int(mesh.active_cps[k])
    return PointLocation(P, edge, float(xi), float(eta), ev.indices[nz], w[nz], cp,
                         mesh.dof_map[cp].copy())


def locate_point(mesh: Mesh, point) -> PointLocation:
    """Resolve any physical point of the analysis domain.

    Unlike :func:`locate_point_dof` the point may lie in the interior or on
    the face of a removed region; it only has to belong to an active
    element. ``edge`` is ``"interior"`` unless the point is on the patch
    boundary.
    """
    P = np.asarray(point, dtype=float)
    e = mesh.element_index(*P)
    if e < 0:
        raise MeshError(f"point {P.tolist()} lies outside the active elements")
    patch = mesh.patch
    sx, se = int(mesh.span_xi[e]), int(mesh.span_eta[e])
    kx, ke = patch.kv_xi.knots, patch.kv_eta.knots
    lo = np.array([kx[sx], ke[se]])
    hi = np.array([kx[sx + 1], ke[se + 1]])
    t = 0.5 * (lo + hi)
    for _ in range(50):
        ev = evaluate_grid(patch, sx, se, [t[0]], [t[1]])
        step = np.linalg.solve(ev.jacobian[0], ev.x[0] - P)
        t = np.clip(t - step, lo, hi)
        if np.abs(step).max() < 1e-15:
            break
    ev = evaluate_grid(patch, sx, se, [t[0]], [t[1]])
    dist = np.linalg.norm(ev.x[0] - P)
    if dist > _GEOM_TOL:
        raise MeshError(f"could not invert the geometry map at {P.tolist()}")
    (a0, a1), (b0, b1) = patch.kv_xi.domain, patch.kv_eta.domain
    edge = "interior"
    for name, on in (("bottom", t[1] <= b0), ("top", t[1] >= b1),
                     ("left", t[0] <= a0), ("right", t[0] >= a1)):
        if on:
            edge = name
            break
    w = ev.N[0]
    nz = np.abs(w) > 1e-14
    cps = mesh.cp_coordinates()
    k = int(np.argmin(np.linalg.norm(cps - P, axis=1)))
    cp = int(mesh.active_cps[k])
    return PointLocation(P, edge, float(t[0]), float(t[1]), ev.indices[nz], w[nz], cp,
                         mesh.dof_map[cp].copy())


def edge_control_points(mesh: Mesh, edge: str) -> np.ndarray:
    """Flat indices of the active control points on a patch edge."""
    nx, ny = mesh.patch.shape
    i = np.arange(nx)
    j = np.arange(ny)
    flat = {"bottom": i, "top": i + nx * (ny - 1),
            "left": nx * j, "right": nx - 1 + nx * j}[edge]
    return flat[np.isin(flat, mesh.active_cps)]


def external_force(mesh: Mesh, bcs: BoundaryConditions) -> np.ndarray:
    """Consistent nodal forces (per unit thickness) of tractions and body force."""
    f = np.zeros(mesh.n_u)
    bx, by = bcs.body_force
    if bx or by:
        w = (mesh.N * mesh.wdet[..., None]).sum(axis=1)   # (ne, nb)
        np.add.at(f, mesh.elem_udofs[:, 0::2], bx * w)
        np.add.at(f, mesh.elem_udofs[:, 1::2], by * w)
    if not bcs.tractions:
        return f
    patch = mesh.patch
    active = set(zip(mesh.span_xi.tolist(), mesh.span_eta.tolist()))
    for edge, (tx, ty) in bcs.tractions:
        along_xi = edge in ("bottom", "top")
        kv = patch.kv_xi if along_xi else patch.kv_eta
        other = patch.kv_eta if along_xi else patch.kv_xi
        fixed = other.domain[1] if edge in ("top", "right") else other.domain[0]
        s_other = find_span(other, fixed)
        g, gw = gauss_rule(kv.degree + 1)
        for s in kv.span_indices:
            key = (s, s_other) if along_xi else (s_other, s)
            if key not in active:
                continue
            a, b = kv.knots[s], kv.knots[s + 1]
            pts = 0.5 * (b - a) * g + 0.5 * (a + b)
            for t, wt in zip(pts, 0.5 * (b - a) * gw):
                xi, eta = (t, fixed) if along_xi else (fixed, t)
                ev = evaluate_grid(patch, key[0], key[1], [xi], [eta])
                tangent = ev.jacobian[0, :, 0 if along_xi else 1]
                ds = np.linalg.norm(tangent) * wt
                dofs = mesh.dof_map[ev.indices]
                np.add.at(f, dofs[:, 0], tx * ev.N[0] * ds)
                np.add.at(f, dofs[:, 1], ty * ev.N[0] * ds)
    return f


def greville_points(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    return greville(mesh.patch.kv_xi), greville(mesh.patch.kv_eta)
