"""Self-checks run by ``pf4czm verify``.

Each check is small (a few elements, a few thousand samples) and compares
the implementation against an independent reference: partition of unity,
closed-form reductions, finite differences, or the 1D oracle.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable

import numpy as np

from .assembly import assemble, assemble_residual
from .discretization import RectangleGeometry, build_mesh
from .material import (
    MaterialModel,
    degradation_fn,
    energy_split,
    geometric_fn,
    split_strain,
)
from .oracle1d import GAMMA_FOURTH_CHI2, gamma_integral, profile_fourth_order, profile_second_order
from .splines import KnotVector, SplinePatch, basis_and_derivs, geometry_map, insert_knot

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _concrete(**kw) -> MaterialModel:
    base = dict(E0=20000.0, nu=0.2, Gc=0.113, ft=2.4, l0=2.5)
    base.update(kw)
    return MaterialModel(**base)


def check_partition_of_unity():
    rng = np.random.default_rng(1)
    inner = np.sort(rng.uniform(0.0, 1.0, 6))
    kv = KnotVector.from_breaks(3, np.concatenate([[0.0], inner, [1.0]]))
    worst = 0.0
    for t in rng.uniform(0.0, 1.0, 200):
        d = basis_and_derivs(kv, float(t), 2)
        scale = [1.0, np.abs(d[1]).sum(), np.abs(d[2]).sum()]
        worst = max(worst, abs(d[0].sum() - 1.0) / scale[0],
                    abs(d[1].sum()) / scale[1], abs(d[2].sum()) / scale[2])
    return worst <= 1e-12, f"max relative |sum N - 1|, |sum N'|, |sum N''| = {worst:.1e}"


def check_knot_insertion():
    patch = SplinePatch.rectangle(3, [0.0, 0.5, 1.0], [0.0, 1.0], size=(2.0, 1.0))
    fine = insert_knot(insert_knot(patch, 0, 0.3), 1, 0.7)
    worst = 0.0
    for xi, eta in np.random.default_rng(2).uniform(0.0, 1.0, (50, 2)):
        a = geometry_map(patch, xi, eta).x
        b = geometry_map(fine, xi, eta).x
        worst = max(worst, float(np.abs(a - b).max()))
    return worst <= 1e-12, f"max geometry change {worst:.1e}"


def check_energy_split():
    rng = np.random.default_rng(3)
    eps = rng.normal(scale=1e-3, size=(2000, 3))
    mat = _concrete()
    psi_p, psi_m = energy_split(eps, mat)
    C = mat.elasticity()
    full = 0.5 * np.einsum("ni,ij,nj->n", eps, C, eps)
    rel = float(np.max(np.abs(psi_p + psi_m - full) / np.maximum(np.abs(full), 1e-300)))
    ep, em = split_strain(eps)[:2]
    err = float(np.abs(ep + em - eps).max())
    return rel <= 1e-10 and err <= 1e-12, f"energy rel {rel:.1e}, strain abs {err:.1e}"


def check_degradation_reduction():
    mat = _concrete(n=2.0, a1=2.0, a2=-0.5, a3=0.0)
    phi = np.linspace(0.0, 1.0, 1001)
    err = float(np.abs(degradation_fn(phi, mat)[0] - (1.0 - phi) ** 2).max())
    return err <= 1e-12, f"max |g - (1-phi)^2| = {err:.1e}"


def check_normalisation():
    e2 = abs(geometric_fn(0.0, 2.0)[3] - math.pi)
    e0 = abs(geometric_fn(0.0, 0.0)[3] - 2.0)
    return max(e2, e0) <= 1e-10, f"c_alpha errors {e2:.1e} (chi=2), {e0:.1e} (chi=0)"


def _small_mesh(n=3):
    return build_mesh(RectangleGeometry(float(n), float(n), degree=3, max_span=1.0))


def _state(mesh, mat, u, phi, H=None):
    if H is None:
        H = np.full(mesh.wdet.shape, mat.history_floor)
    return SimpleNamespace(u=u, phi=phi, H=H)


def check_rest_identity():
    mesh = _small_mesh(2)
    mat = _concrete()
    r = assemble_residual(mesh, _state(mesh, mat, np.zeros(mesh.n_u),
                                       np.zeros(mesh.n_active)), None, mat)
    err = float(np.abs(r).max())
    return err <= 1e-12, f"max |r| at rest = {err:.1e}"


def check_tangent():
    mesh = _small_mesh(2)
    mat = _concrete(l0=0.5)
    rng = np.random.default_rng(4)
    u = rng.normal(scale=2e-4, size=mesh.n_u)
    phi = rng.uniform(0.05, 0.6, size=mesh.n_active)
    H = mat.H0 * rng.uniform(1.0, 3.0, size=mesh.wdet.shape)
    K = assemble(mesh, _state(mesh, mat, u, phi, H), None, mat).K.toarray()
    x0 = np.concatenate([u, phi])
    Kfd = np.empty_like(K)
    for j in range(x0.size):
        h = 1e-7 if j < mesh.n_u else 1e-6
        cols = []
        for s in (1.0, -1.0):
            x = x0.copy()
            x[j] += s * h
            cols.append(assemble_residual(
                mesh, _state(mesh, mat, x[:mesh.n_u], x[mesh.n_u:], H), None, mat))
        Kfd[:, j] = (cols[0] - cols[1]) / (2.0 * h)
    nu = mesh.n_u
    worst = 0.0
    for blk in ((slice(0, nu), slice(0, nu)), (slice(0, nu), slice(nu, None)),
                (slice(nu, None), slice(0, nu)), (slice(nu, None), slice(nu, None))):
        a, b = K[blk], Kfd[blk]
        scale = max(np.abs(b).max(), np.abs(a).max(), 1e-30)
        worst = max(worst, float(np.abs(a - b).max() / scale))
    return worst <= 1e-5, f"max blockwise relative FD error {worst:.1e}"


def check_oracle_second_order():
    errs = [abs(gamma_integral(profile_second_order(1.0, chi)) - 1.0) for chi in (0.0, 2.0)]
    return max(errs) <= 1e-6, "Gamma - 1 = %.1e (chi=0), %.1e (chi=2)" % tuple(errs)


def check_oracle_fourth_order():
    g = profile_fourth_order(1.0, 2.0, elements_per_l0=20).gamma
    err = abs(g - GAMMA_FOURTH_CHI2) / GAMMA_FOURTH_CHI2
    return err <= 1e-3, f"Gamma = {g:.7f}, baseline {GAMMA_FOURTH_CHI2:.7f}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "splines.partition_of_unity": check_partition_of_unity,
    "splines.knot_insertion": check_knot_insertion,
    "material.energy_split": check_energy_split,
    "material.degradation_reduction": check_degradation_reduction,
    "material.normalisation": check_normalisation,
    "assembly.rest_identity": check_rest_identity,
    "assembly.tangent_fd": check_tangent,
    "oracle1d.second_order": check_oracle_second_order,
    "oracle1d.fourth_order": check_oracle_fourth_order,
}


def run_checks(names=None) -> list[CheckResult]:
    """Run the named checks (all by default); exceptions count as failures."""
    out = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
