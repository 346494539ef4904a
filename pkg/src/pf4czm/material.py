"""Pointwise constitutive layer of the phase-field cohesive zone model.

Strains and stresses are stored in Voigt form ``(xx, yy, xy)``; strains use
the engineering shear ``gamma_xy = 2 eps_xy`` so that ``sigma . eps`` is the
energy product and the 3x3 tangent multiplies engineering strains. All
functions broadcast over leading axes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

__all__ = [
    "Softening",
    "Order",
    "StressState",
    "MaterialModel",
    "QuadPointState",
    "Constitutive",
    "to_tensor",
    "to_voigt",
    "split_strain",
    "energy_split",
    "stress",
    "geometric_fn",
    "degradation_fn",
    "softening_coeffs",
    "driving_force",
    "driving_force_derivative",
    "update_history",
    "material_tangent",
    "evaluate",
]


class Softening(str, enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    HYPERBOLIC = "hyperbolic"
    CORNELISSEN = "cornelissen"
    BRITTLE = "brittle"


class Order(str, enum.Enum):
    SECOND = "second"
    FOURTH = "fourth"


class StressState(str, enum.Enum):
    PLANE_STRESS = "plane_stress"
    PLANE_STRAIN = "plane_strain"


_SOFTENING_COEFFS = {
    Softening.LINEAR: (2.0, -0.5, 0.0),
    Softening.EXPONENTIAL: (2.5, 0.1748, 0.0),
    Softening.HYPERBOLIC: (4.0, 0.5397, 0.0),
    Softening.CORNELISSEN: (2.0, 1.3868, 0.9106),
}


def softening_coeffs(law) -> tuple[float, float, float]:
    """Exponent ``n`` and coefficients ``(a2, a3)`` of the rational degradation."""
    law = Softening(law)
    if law not in _SOFTENING_COEFFS:
        raise ValueError(f"{law.value!r} is not a cohesive softening law")
    return _SOFTENING_COEFFS[law]


@dataclass(frozen=True)
class MaterialModel:
    """Elastic, fracture and characteristic-function parameters (N, mm, MPa).

    ``chi`` defaults to 2 for the cohesive laws; ``Softening.BRITTLE`` forces
    ``chi = 0`` with ``g = (1 - phi)^2`` and disables the history floor.
    Fields ``n, a1, a2, a3`` override the law-derived values when given, which
    is how arbitrary rational degradation functions are built.
    """

    E0: float
    nu: float
    Gc: float
    ft: float
    l0: float
    softening: Softening = Softening.CORNELISSEN
    order: Order = Order.FOURTH
    chi: float | None = None
    stress_state: StressState = StressState.PLANE_STRESS
    n: float | None = field(default=None, repr=False)
    a1: float | None = field(default=None, repr=False)
    a2: float | None = field(default=None, repr=False)
    a3: float | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "softening", Softening(self.softening))
        object.__setattr__(self, "order", Order(self.order))
        object.__setattr__(self, "stress_state", StressState(self.stress_state))
        for name in ("E0", "Gc", "ft", "l0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu!r}")
        brittle = self.softening is Softening.BRITTLE
        if brittle:
            chi = 0.0
        else:
            chi = 2.0 if self.chi is None else float(self.chi)
        if not 0.0 <= chi <= 2.0:
            raise ValueError(f"chi must lie in [0, 2], got {chi!r}")
        object.__setattr__(self, "chi", chi)
        if not brittle:
            n, a2, a3 = softening_coeffs(self.softening)
            a1 = 4.0 * self.l_ch / (math.pi * self.l0)
            for name, v in (("n", n), ("a1", a1), ("a2", a2), ("a3", a3)):
                if getattr(self, name) is None:
                    object.__setattr__(self, name, v)
            if not self.a1 > 0:
                raise ValueError("a1 must be positive")

    @property
    def is_brittle(self) -> bool:
        return self.softening is Softening.BRITTLE

    @property
    def mu(self) -> float:
        return self.E0 / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        """Lame's first parameter, with the plane-stress substitution applied."""
        lam = self.E0 * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        if self.stress_state is StressState.PLANE_STRESS:
            mu = self.mu
            lam = 2.0 * lam * mu / (lam + 2.0 * mu)
        return lam

    @property
    def l_ch(self) -> float:
        """Irwin's characteristic length ``E0 Gc / ft^2``."""
        return self.E0 * self.Gc / self.ft ** 2

    @property
    def H0(self) -> float:
        """Damage threshold ``ft^2 / (2 E0)``."""
        return self.ft ** 2 / (2.0 * self.E0)

    @property
    def history_floor(self) -> float:
        return 0.0 if self.is_brittle else self.H0

    @cached_property
    def c_alpha(self) -> float:
        return geometric_fn(0.0, self.chi)[3]

    def elasticity(self) -> np.ndarray:
        """Isotropic 3x3 Voigt elasticity matrix."""
        lam, mu = self.lam, self.mu
        return np.array([[lam + 2 * mu, lam, 0.0],
                         [lam, lam + 2 * mu, 0.0],
                         [0.0, 0.0, mu]])


@dataclass
class QuadPointState:
    """History field and last strain at quadrature points (broadcastable)."""

    H: np.ndarray
    eps: np.ndarray

    @classmethod
    def fresh(cls, mat: MaterialModel, shape=()) -> "QuadPointState":
        return cls(np.full(shape, mat.history_floor), np.zeros(tuple(shape) + (3,)))


def to_tensor(eps_v) -> np.ndarray:
    """Voigt strain (engineering shear) to symmetric 2x2 tensor."""
    e = np.asarray(eps_v, dtype=float)
    t = np.empty(e.shape[:-1] + (2, 2))
    t[..., 0, 0] = e[..., 0]
    t[..., 1, 1] = e[..., 1]
    t[..., 0, 1] = t[..., 1, 0] = 0.5 * e[..., 2]
    return t


def to_voigt(eps_t) -> np.ndarray:
    """Symmetric 2x2 strain tensor to Voigt form with engineering shear."""
    t = np.asarray(eps_t, dtype=float)
    return np.stack([t[..., 0, 0], t[..., 1, 1], t[..., 0, 1] + t[..., 1, 0]], axis=-1)


def _eig(eps_v):
    """Closed-form eigenpairs of a Voigt strain; ``e1 >= e2``, ``n1 = (c, s)``."""
    exx, eyy, exy = eps_v[..., 0], eps_v[..., 1], 0.5 * eps_v[..., 2]
    m = 0.5 * (exx + eyy)
    r = np.hypot(0.5 * (exx - eyy), exy)
    theta = 0.5 * np.arctan2(2.0 * exy, exx - eyy)
    return m + r, m - r, np.cos(theta), np.sin(theta)


def _pos(x):
    return np.maximum(x, 0.0)


def _neg(x):
    return np.minimum(x, 0.0)


def split_strain(eps):
    """Spectral split ``eps = eps_plus + eps_minus``.

    Returns
    -------
    eps_plus, eps_minus : ndarray (..., 3)
    eigvals : ndarray (..., 2)
        Principal strains, largest first.
    eigvecs : ndarray (..., 2, 2)
        Columns are the corresponding unit eigenvectors.
    """
    eps = np.asarray(eps, dtype=float)
    e1, e2, c, s = _eig(eps)
    p1, p2 = _pos(e1), _pos(e2)
    # n1 = (c, s), n2 = (-s, c)
    plus = np.stack([p1 * c * c + p2 * s * s,
                     p1 * s * s + p2 * c * c,
                     2.0 * (p1 - p2) * c * s], axis=-1)
    minus = eps - plus
    vecs = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], axis=-1)
    return plus, minus, np.stack([e1, e2], axis=-1), vecs


def energy_split(eps, mat: MaterialModel):
    """Tensile and compressive elastic energy densities (MPa)."""
    eps = np.asarray(eps, dtype=float)
    e1, e2, _, _ = _eig(eps)
    tr = eps[..., 0] + eps[..., 1]
    lam, mu = mat.lam, mat.mu
    psi_p = 0.5 * lam * _pos(tr) ** 2 + mu * (_pos(e1) ** 2 + _pos(e2) ** 2)
    psi_m = 0.5 * lam * _neg(tr) ** 2 + mu * (_neg(e1) ** 2 + _neg(e2) ** 2)
    return psi_p, psi_m


def _split_stresses(eps, mat):
    plus, minus, _, _ = split_strain(eps)
    tr = eps[..., 0] + eps[..., 1]
    lam, mu = mat.lam, mat.mu
    unit = np.array([1.0, 1.0, 0.0])
    # Voigt stress from Voigt strain: shear stress = 2 mu eps_xy = mu gamma
    scale = np.array([2.0 * mu, 2.0 * mu, mu])
    sp = lam * _pos(tr)[..., None] * unit + scale * plus
    sm = lam * _neg(tr)[..., None] * unit + scale * minus
    return sp, sm


def stress(eps, phi, mat: MaterialModel):
    """Degraded stress ``g(phi) sigma_plus + sigma_minus`` and its parts (Voigt, MPa)."""
    eps = np.asarray(eps, dtype=float)
    sp, sm = _split_stresses(eps, mat)
    g = _degradation(np.asarray(phi, dtype=float), mat)[0]
    return g[..., None] * sp + sm, sp, sm


def _c_alpha(chi: float) -> float:
    if chi == 0.0:
        return 2.0
    if chi == 2.0:
        return math.pi
    val, _ = integrate.quad(lambda b: math.sqrt(chi * b + (1.0 - chi) * b * b), 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return 4.0 * val


def _geometric(phi, chi):
    a = chi * phi + (1.0 - chi) * phi * phi
    da = chi + 2.0 * (1.0 - chi) * phi
    dda = np.full_like(np.asarray(phi, dtype=float), 2.0 * (1.0 - chi))
    return a, da, dda


def geometric_fn(phi, chi: float):
    """Geometric crack function ``alpha = chi phi + (1 - chi) phi^2``.

    Returns ``(alpha, alpha', alpha'', c_alpha)`` where
    ``c_alpha = 4 int_0^1 sqrt(alpha)``.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0.0) or np.any(phi > 1.0):
        raise ValueError("phi must lie in [0, 1]")
    if not 0.0 <= chi <= 2.0:
        raise ValueError(f"chi must lie in [0, 2], got {chi!r}")
    a, da, dda = _geometric(phi, chi)
    return a, da, dda, _c_alpha(float(chi))


def _degradation(phi, mat: MaterialModel):
    if mat.is_brittle:
        s = 1.0 - phi
        return s * s, -2.0 * s, np.full_like(s, 2.0)
    n, a1, a2, a3 = mat.n, mat.a1, mat.a2, mat.a3
    s = 1.0 - phi
    if float(n).is_integer():
        k = int(n)
        P = s ** k
        dP = -k * s ** (k - 1)
        ddP = k * (k - 1) * s ** (k - 2) if k >= 2 else np.zeros_like(s)
    else:
        # (1 - phi)^n is undefined past full damage for fractional n
        sc = np.maximum(s, 0.0)
        P = sc ** n
        dP = -n * sc ** (n - 1.0)
        ddP = n * (n - 1.0) * sc ** (n - 2.0)
    Q = a1 * phi * (1.0 + a2 * phi + a3 * phi * phi)
    dQ = a1 * (1.0 + 2.0 * a2 * phi + 3.0 * a3 * phi * phi)
    ddQ = a1 * (2.0 * a2 + 6.0 * a3 * phi)
    D = P + Q
    if np.any(D <= 0.0):
        raise FloatingPointError("degradation denominator is not positive")
    num1 = dP * Q - P * dQ
    g = P / D
    dg = num1 / D ** 2
    ddg = ((ddP * Q - P * ddQ) * D - 2.0 * num1 * (dP + dQ)) / D ** 3
    return g, dg, ddg


def degradation_fn(phi, mat: MaterialModel):
    """Energetic degradation ``g`` and its first two derivatives."""
    phi = np.asarray(phi, dtype=float)
    return _degradation(phi, mat)


def driving_force(eps, mat: MaterialModel):
    """Rankine crack driving force ``<sigma_1(sigma_plus)>^2 / (2 E0)``."""
    eps = np.asarray(eps, dtype=float)
    s_eq = _sigma_eq(eps, mat)[0]
    return s_eq * s_eq / (2.0 * mat.E0)


def _sigma_eq(eps, mat):
    # sigma_plus shares the strain eigenvectors: its principal values are
    # lam <tr>+ + 2 mu <e_i>+, both nonnegative
    e1, _, c, s = _eig(eps)
    tr = eps[..., 0] + eps[..., 1]
    return mat.lam * _pos(tr) + 2.0 * mat.mu * _pos(e1), tr, e1, c, s


def driving_force_derivative(eps, mat: MaterialModel):
    """Gradient of the trial driving force w.r.t. the Voigt strain."""
    eps = np.asarray(eps, dtype=float)
    s_eq, tr, e1, c, s = _sigma_eq(eps, mat)
    ht = (tr > 0).astype(float) * mat.lam
    he = (e1 > 0).astype(float) * 2.0 * mat.mu
    ds = np.stack([ht + he * c * c, ht + he * s * s, he * c * s], axis=-1)
    return (s_eq / mat.E0)[..., None] * ds


def update_history(state: QuadPointState, H_trial, mat: MaterialModel | None = None,
                   floor: float | None = None) -> QuadPointState:
    """Return a new state with ``H = max(H, H_trial, floor)``."""
    if floor is None:
        floor = mat.history_floor if mat is not None else 0.0
    H = np.maximum(np.maximum(state.H, H_trial), floor)
    return QuadPointState(H, state.eps)


_VOIGT = ((0, 0), (1, 1), (0, 1))


def _plus_projector(eps):
    """Derivative of ``eps_plus`` w.r.t. ``eps`` as a (..., 3, 3) Voigt map.

    Rows give tensor components (xx, yy, xy); columns act on the engineering
    strain. In the principal frame the map is diagonal: ``H(e_a)`` on the
    normal components and ``(<e1>+ - <e2>+) / (e1 - e2)`` on the shear.
    """
    e1, e2, c, s = _eig(eps)
    h1 = (e1 > 0).astype(float)
    h2 = (e2 > 0).astype(float)
    de = e1 - e2
    close = np.abs(de) < 1e-9
    theta = np.where(close, h1, (_pos(e1) - _pos(e2)) / np.where(close, 1.0, de))
    n = np.empty(eps.shape[:-1] + (2, 2))  # n[..., a, i]
    n[..., 0, 0], n[..., 0, 1] = c, s
    n[..., 1, 0], n[..., 1, 1] = -s, c
    M = np.empty(eps.shape[:-1] + (2, 2))
    M[..., 0, 0], M[..., 1, 1] = h1, h2
    M[..., 0, 1] = M[..., 1, 0] = theta
    out = np.empty(eps.shape[:-1] + (3, 3))
    for I, (i, j) in enumerate(_VOIGT):
        for J, (k, l) in enumerate(_VOIGT):
            # sum_ab M_ab n_ai n_bj sym(n_ak n_bl); the engineering shear column
            # picks up the symmetric (k, l) pair, i.e. factor 1 on the xy entry
            t = 0.5 * (n[..., :, None, i] * n[..., None, :, j]
                       * (n[..., :, None, k] * n[..., None, :, l]
                          + n[..., :, None, l] * n[..., None, :, k]))
            val = (M * t).sum(axis=(-2, -1))
            out[..., I, J] = val
    return out


def _tangents(eps, g, mat):
    lam, mu = mat.lam, mat.mu
    tr = eps[..., 0] + eps[..., 1]
    hp = (tr > 0).astype(float)
    P = _plus_projector(eps)
    # tensor-to-Voigt for stresses: sigma_xy row equals the tensor xy entry;
    # columns act on gamma, so d(eps_xy)/d(gamma) = 1/2 on the identity
    Id = np.diag([1.0, 1.0, 0.5])
    vol = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    Cp = lam * hp[..., None, None] * vol + 2.0 * mu * P
    Cm = lam * (1.0 - hp)[..., None, None] * vol + 2.0 * mu * (Id - P)
    return g[..., None, None] * Cp + Cm, Cp


def material_tangent(eps, phi, mat: MaterialModel) -> np.ndarray:
    """Consistent tangent ``d sigma / d eps`` at fixed ``phi`` (Voigt, MPa)."""
    eps = np.asarray(eps, dtype=float)
    g = _degradation(np.asarray(phi, dtype=float) * np.ones(eps.shape[:-1]), mat)[0]
    return _tangents(eps, g, mat)[0]


@dataclass
class Constitutive:
    """Everything assembly needs at a batch of quadrature points."""

    sigma: np.ndarray
    sigma_plus: np.ndarray
    C: np.ndarray | None
    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray
    alpha: np.ndarray
    dalpha: np.ndarray
    ddalpha: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray


def evaluate(eps, phi, mat: MaterialModel, tangent: bool = True) -> Constitutive:
    """Batch constitutive update without range checks (used inside Newton)."""
    sp, sm = _split_stresses(eps, mat)
    g, dg, ddg = _degradation(phi, mat)
    a, da, dda = _geometric(phi, mat.chi)
    sigma = g[..., None] * sp + sm
    C = _tangents(eps, g, mat)[0] if tangent else None
    psi_p, psi_m = energy_split(eps, mat)
    return Constitutive(sigma, sp, C, g, dg, ddg, a, da, dda, psi_p, psi_m)
