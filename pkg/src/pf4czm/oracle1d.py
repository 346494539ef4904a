"""One-dimensional optimal crack profiles and the regularized crack length.

For a crack at ``x = 0`` the regularized length ``Gamma = int psi dx`` of the
optimal profile should be one. The second-order profiles follow in closed
form from the first integral ``alpha(phi) / l0 = l0 phi'^2``; the
fourth-order profile is computed by minimizing the discretized density with
a cubic B-spline on the half line.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import quad, simpson, solve_ivp

from .discretization import gauss_rule
from .material import Order, _c_alpha, _geometric
from .splines import KnotVector, _ders_1d, greville

__all__ = [
    "Profile1D",
    "OracleError",
    "UnderResolvedWarning",
    "crack_density",
    "profile_second_order",
    "profile_fourth_order",
    "fourth_order_brittle_exact",
    "gamma_integral",
    "MIN_POINTS_PER_L0",
    "GAMMA_FOURTH_CHI2",
    "GAMMA_FOURTH_CHI0",
]

MIN_POINTS_PER_L0 = 40

#: Mesh-converged regularized crack length of the fourth-order functional with
#: the quasi-brittle crack function (chi = 2); the coefficients l0/2 and
#: l0^3/16 do not normalise it to one. Successive 2x refinements from 10
#: elements per l0 change it by 3e-6, 3e-7 and 1e-8 (relative).
GAMMA_FOURTH_CHI2 = 0.96145
#: Same for chi = 0, where the optimal profile exp(-t)(1 + t) gives exactly one.
GAMMA_FOURTH_CHI0 = 1.0


class OracleError(RuntimeError):
    """The 1D minimization failed; ``trace`` holds the iteration log."""

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class UnderResolvedWarning(UserWarning):
    pass


@dataclass
class Profile1D:
    """Symmetric crack profile sampled on ``[-L, L]``.

    ``dphi`` and ``d2phi`` are the exact derivatives of the underlying
    representation; ``breaks`` lists abscissae where the profile is not
    smooth, so piecewise quadrature never straddles a kink.
    """

    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    l0: float
    chi: float
    order: Order
    breaks: tuple[float, ...] = ()
    gamma: float = float("nan")
    meta: dict = field(default_factory=dict)


def crack_density(phi, dphi, d2phi, l0: float, chi: float, order) -> np.ndarray:
    """Pointwise ``psi`` (per unit length) of the second- or fourth-order model."""
    order = Order(order)
    a = _geometric(np.asarray(phi, dtype=float), chi)[0]
    ca = _c_alpha(chi)
    if order is Order.SECOND:
        return (a / l0 + l0 * dphi ** 2) / ca
    return (a / l0 + 0.5 * l0 * dphi ** 2 + l0 ** 3 / 16.0 * d2phi ** 2) / ca


def gamma_integral(profile: Profile1D) -> float:
    """Composite Simpson quadrature of ``psi`` over the profile grid.

    Each smooth piece between consecutive ``breaks`` is integrated
    separately; a repeated abscissa marks a kink whose two copies hold the
    one-sided values. Grids coarser than 40 points per ``l0`` trigger an
    :class:`UnderResolvedWarning`.
    """
    x = np.asarray(profile.x, dtype=float)
    if x.size < 2:
        return 0.0
    density = (x.size - 1) * profile.l0 / (x[-1] - x[0])
    if density < MIN_POINTS_PER_L0:
        warnings.warn(f"profile grid has {density:.1f} points per l0 "
                      f"(< {MIN_POINTS_PER_L0}); Gamma is under-resolved",
                      UnderResolvedWarning, stacklevel=2)
    psi = crack_density(profile.phi, profile.dphi, profile.d2phi, profile.l0,
                        profile.chi, profile.order)
    cut = set(np.flatnonzero(np.diff(x) == 0) + 1)
    for b in profile.breaks:
        hit = np.flatnonzero(x == b)
        if hit.size == 1 and 0 < hit[0] < x.size - 1:
            cut.add(int(hit[0]))
    total = 0.0
    start = 0
    for c in sorted(cut) + [x.size]:
        # a kink splits [start, c-1] | [c, ...]; a shared break keeps c in both
        stop = c if c < x.size and x[c] == x[c - 1] else min(c + 1, x.size)
        if stop - start >= 2:
            total += simpson(psi[start:stop], x=x[start:stop])
        start = c
    return float(total)


def _grid(L: float, l0: float, per_l0: int, breaks, kinks=(0.0,)):
    """Uniform grid plus breakpoints; kinks appear twice (left, right copy).

    Returns ``(x, side)`` where ``side`` is the sign used for odd
    derivatives, so the two copies of a kink carry one-sided values.
    """
    n = max(2, int(math.ceil(2 * L / l0 * per_l0)))
    x = np.linspace(-L, L, n + 1)
    x = np.unique(np.concatenate([x, [b for b in breaks if -L <= b <= L]]))
    side = np.sign(x)
    for k in kinks:
        i = int(np.flatnonzero(x == k)[0])
        x = np.insert(x, i, k)
        side = np.insert(side, i, -1.0)
        side[i + 1] = 1.0
    return x, side


def profile_second_order(l0: float, chi: float = 2.0, points_per_l0: int = 400,
                         L: float | None = None) -> Profile1D:
    """Optimal second-order profile from the first integral.

    ``chi = 2`` gives ``1 - sin(|x| / l0)`` with support ``pi l0 / 2``,
    ``chi = 0`` gives ``exp(-|x| / l0)``; other ``chi`` are integrated
    numerically from ``phi' = -sqrt(alpha(phi)) / l0``.
    """
    if not l0 > 0:
        raise ValueError("l0 must be positive")
    if not 0.0 <= chi <= 2.0:
        raise ValueError("chi must lie in [0, 2]")
    if L is None:
        L = 4.0 * math.pi * l0
    if chi == 2.0:
        xs = 0.5 * math.pi * l0
        breaks = (-xs, 0.0, xs)
        x, side = _grid(L, l0, points_per_l0, breaks)
        r = np.abs(x) / l0
        inside = r <= 0.5 * math.pi
        phi = np.where(inside, 1.0 - np.sin(r), 0.0)
        dphi = np.where(inside, -side * np.cos(r) / l0, 0.0)
        d2phi = np.where(inside, np.sin(r) / l0 ** 2, 0.0)
    elif chi == 0.0:
        breaks = (0.0,)
        x, side = _grid(L, l0, points_per_l0, breaks)
        phi = np.exp(-np.abs(x) / l0)
        dphi = -side * phi / l0
        d2phi = phi / l0 ** 2
    else:
        # support edge where phi reaches zero: x* = l0 int_0^1 1/sqrt(alpha)
        xs = l0 * quad(lambda b: 1.0 / math.sqrt(_geometric(b, chi)[0]), 0.0, 1.0)[0]
        breaks = (-xs, 0.0, xs)
        x, side = _grid(L, l0, points_per_l0, breaks)

        def rhs(_, y):
            return [-math.sqrt(max(_geometric(max(y[0], 0.0), chi)[0], 0.0)) / l0]

        xp = np.unique(x[(x >= 0) & (x <= xs)])
        sol = solve_ivp(rhs, (0.0, xs), [1.0], t_eval=xp, rtol=1e-12, atol=1e-14,
                        method="DOP853")
        ph = np.interp(np.abs(x), xp, np.clip(sol.y[0], 0.0, 1.0), right=0.0)
        phi = ph
        a, da, _ = _geometric(ph, chi)
        dphi = -side * np.sqrt(np.maximum(a, 0.0)) / l0
        d2phi = np.where(ph > 0, da / (2 * l0 ** 2), 0.0)
    prof = Profile1D(x, phi, dphi, d2phi, l0, chi, Order.SECOND, breaks)
    prof.gamma = gamma_integral(prof)
    return prof


def fourth_order_brittle_exact(x, l0: float):
    """Closed-form fourth-order profile for ``alpha = phi^2``.

    The Euler-Lagrange operator factors as ``(1 - l0^2 D^2 / 4)^2``, so with
    ``t = 2|x| / l0`` the symmetric solution is ``(1 + t) exp(-t)``, for which
    ``Gamma = 1`` exactly. Returns ``(phi, phi', phi'')``.
    """
    x = np.asarray(x, dtype=float)
    t = 2.0 * np.abs(x) / l0
    e = np.exp(-t)
    phi = (1.0 + t) * e
    dphi = -np.sign(x) * (2.0 / l0) * t * e
    d2phi = (4.0 / l0 ** 2) * (t - 1.0) * e
    return phi, dphi, d2phi


def _half_line_operators(l0, chi, L, n_el, p=3):
    kv = KnotVector.from_breaks(p, np.linspace(0.0, L, n_el + 1))
    g, w = gauss_rule(p + 2)
    n = kv.n_basis
    M = np.zeros((n, n))
    K1 = np.zeros((n, n))
    K2 = np.zeros((n, n))
    f = np.zeros(n)
    U = kv.knots
    for s in kv.span_indices:
        a, b = U[s], U[s + 1]
        pts = 0.5 * (b - a) * g + 0.5 * (a + b)
        wt = 0.5 * (b - a) * w
        D = _ders_1d(kv, s, pts)                     # (nq, 3, p+1)
        idx = np.arange(s - p, s + 1)
        sl = np.ix_(idx, idx)
        M[sl] += np.einsum("q,qa,qb->ab", wt, D[:, 0], D[:, 0])
        K1[sl] += np.einsum("q,qa,qb->ab", wt, D[:, 1], D[:, 1])
        K2[sl] += np.einsum("q,qa,qb->ab", wt, D[:, 2], D[:, 2])
        f[idx] += wt @ D[:, 0]
    ca = _c_alpha(chi)
    # half-line energy  E(c) = 1/2 c^T Q c + b^T c  (alpha is quadratic in phi)
    Q = (2.0 * (1.0 - chi) / l0 * M + l0 * K1 + l0 ** 3 / 8.0 * K2) / ca
    bvec = chi / l0 * f / ca
    return kv, Q, bvec


def _projected_newton(Q, bvec, c0, free, tol, max_iter):
    """Minimize 1/2 c^T Q c + b^T c over the box 0 <= c <= 1 (free entries)."""
    c = c0.copy()
    trace = []

    def energy(v):
        return 0.5 * v @ Q @ v + bvec @ v

    scale = None
    for it in range(max_iter):
        grad = Q @ c + bvec
        gf = grad[free]
        cf = c[free]
        at_lo = (cf <= 0.0) & (gf > 0)
        at_hi = (cf >= 1.0) & (gf < 0)
        pg = np.where(at_lo | at_hi, 0.0, gf)
        res = float(np.abs(pg).max()) if pg.size else 0.0
        trace.append((it, energy(c), res))
        if scale is None:
            scale = max(res, 1.0)
        if res <= tol * scale:
            return c, trace
        inact = free[~(at_lo | at_hi)]
        H = Q[np.ix_(inact, inact)]
        shift = 0.0
        dmax = np.abs(np.diag(H)).max()
        while True:
            try:
                cf_ = sla.cho_factor(H + shift * np.eye(len(inact)))
                break
            except np.linalg.LinAlgError:
                shift = max(2.0 * shift, 1e-10 * dmax)
        d = np.zeros_like(c)
        d[inact] = -sla.cho_solve(cf_, grad[inact])
        E0 = energy(c)
        step = 1.0
        for _ in range(60):
            trial = c.copy()
            trial[free] = np.clip(c[free] + step * d[free], 0.0, 1.0)
            if energy(trial) <= E0 + 1e-4 * grad @ (trial - c):
                break
            step *= 0.5
        else:
            raise OracleError("line search failed in the 1D minimization", trace)
        c = trial
    raise OracleError(f"1D Newton did not converge in {max_iter} iterations", trace)


def profile_fourth_order(l0: float, chi: float = 2.0, elements_per_l0: int = 20,
                         L: float | None = None, samples_per_element: int = 8,
                         tol: float = 1e-10, max_iter: int = 200) -> Profile1D:
    """Minimizer of the fourth-order density with ``phi(0) = 1``.

    The half line ``[0, L]`` carries a cubic B-spline; the first two
    coefficients are pinned to one, which imposes ``phi(0) = 1`` and the
    symmetry condition ``phi'(0) = 0``. The other coefficients are bounded
    to ``[0, 1]`` (for ``chi > 0`` the density is unbounded below without the
    bounds) and found by projected Newton from the second-order profile,
    iterating until the projected gradient falls below ``tol`` times its
    initial value.
    ``gamma`` is the Gauss-quadrature value of ``2 E``; the sampled profile
    feeds :func:`gamma_integral` for an independent check.
    """
    if not l0 > 0:
        raise ValueError("l0 must be positive")
    if L is None:
        L = 4.0 * math.pi * l0
    if L < 4.0 * math.pi * l0 - 1e-12:
        raise ValueError("domain half-length must be at least 4*pi*l0")
    n_el = int(math.ceil(L / l0 * elements_per_l0))
    kv, Q, bvec = _half_line_operators(l0, chi, L, n_el)
    n = kv.n_basis
    xg = greville(kv)
    start = profile_second_order(l0, 2.0 if chi > 0 else 0.0, points_per_l0=50, L=L)
    c = np.interp(xg, start.x, start.phi)
    c[:2] = 1.0
    free = np.arange(2, n)
    c, trace = _projected_newton(Q, bvec, c, free, tol, max_iter)
    gamma = float(2.0 * (0.5 * c @ Q @ c + bvec @ c))

    U = kv.knots
    xs, ph, d1, d2 = [], [], [], []
    for s in kv.span_indices:
        pts = np.linspace(U[s], U[s + 1], samples_per_element + 1)[:-1]
        D = _ders_1d(kv, s, pts)
        cc = c[s - kv.degree:s + 1]
        xs.append(pts)
        ph.append(D[:, 0] @ cc)
        d1.append(D[:, 1] @ cc)
        d2.append(D[:, 2] @ cc)
    xs.append([L])
    Dl = _ders_1d(kv, kv.span_indices[-1], [L])
    cc = c[-kv.degree - 1:]
    ph.append(Dl[:, 0] @ cc)
    d1.append(Dl[:, 1] @ cc)
    d2.append(Dl[:, 2] @ cc)
    xh = np.concatenate(xs)
    phh, d1h, d2h = (np.concatenate(v) for v in (ph, d1, d2))
    x = np.concatenate([-xh[:0:-1], xh])
    phi = np.concatenate([phh[:0:-1], phh])
    dphi = np.concatenate([-d1h[:0:-1], d1h])
    d2phi = np.concatenate([d2h[:0:-1], d2h])
    prof = Profile1D(x, phi, dphi, d2phi, l0, chi, Order.FOURTH, (0.0,), gamma,
                     {"coefficients": c, "iterations": len(trace), "trace": trace,
                      "elements": n_el})
    return prof
