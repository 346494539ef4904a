"""Element kernels and global assembly of the coupled residual and tangent.

Element unknowns are ordered ``[u_x0, u_y0, u_x1, u_y1, ..., phi_0, phi_1, ...]``
which matches :attr:`Mesh.elem_dofs`. Everything is evaluated in batches of
elements; the global scatter is a fixed-order ``bincount`` over a CSR pattern
computed once per mesh, so repeated assemblies are bitwise reproducible.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretization import BoundaryConditions, Mesh, external_force
from .material import MaterialModel, Order, driving_force, driving_force_derivative, evaluate

__all__ = [
    "HISTORY_MODES",
    "ElementKernels",
    "AssembledSystem",
    "element_kernels",
    "element_residuals",
    "element_tangents",
    "assemble",
    "assemble_residual",
    "energy_terms",
    "strains",
    "phase_field_coefficients",
]

HISTORY_MODES = ("per_step", "per_iteration")


@dataclass
class ElementKernels:
    """Discrete operators of one element at its quadrature points."""

    N: np.ndarray       # (nq, nb)
    Bu: np.ndarray      # (nq, 3, 2nb), rows (eps_xx, eps_yy, gamma_xy)
    Bphi: np.ndarray    # (nq, 2, nb)
    Dphi: np.ndarray    # (nq, nb), N_xx + N_yy
    wdet: np.ndarray    # (nq,)


def _strain_operator(dN: np.ndarray) -> np.ndarray:
    shape = dN.shape[:-2]
    nb = dN.shape[-2]
    B = np.zeros(shape + (3, 2 * nb))
    B[..., 0, 0::2] = dN[..., 0]
    B[..., 1, 1::2] = dN[..., 1]
    B[..., 2, 0::2] = dN[..., 1]
    B[..., 2, 1::2] = dN[..., 0]
    return B


def element_kernels(mesh: Mesh, e: int) -> ElementKernels:
    dN = mesh.dN[e]
    return ElementKernels(
        N=mesh.N[e],
        Bu=_strain_operator(dN),
        Bphi=dN.transpose(0, 2, 1),
        Dphi=mesh.d2N[e, :, :, 0] + mesh.d2N[e, :, :, 1],
        wdet=mesh.wdet[e],
    )


def phase_field_coefficients(mat: MaterialModel) -> tuple[float, float, float]:
    """Weights ``(local, gradient, laplacian)`` of the crack-density variation.

    The local weight multiplies ``alpha'``; second order uses the weak form of
    ``(alpha / l0 + l0 |grad phi|^2) / c_alpha`` and fourth order the
    ``l0 / 2`` and ``l0^3 / 16`` density whose variation carries ``l0`` and
    ``l0^3 / 8``.
    """
    Gc, l0, ca = mat.Gc, mat.l0, mat.c_alpha
    if mat.order is Order.FOURTH:
        return Gc / (ca * l0), Gc * l0 / ca, Gc * l0 ** 3 / (8.0 * ca)
    return Gc / (ca * l0), 2.0 * Gc * l0 / ca, 0.0


def _gather(mesh: Mesh, x: np.ndarray, sl):
    xe = x[mesh.elem_dofs[sl]]
    nb = mesh.conn.shape[1]
    return xe[:, :2 * nb].reshape(-1, nb, 2), xe[:, 2 * nb:]


def _fields(dN, d2N, N, ue, pe):
    eps = np.empty(dN.shape[:2] + (3,))
    eps[..., 0] = np.einsum("eqb,eb->eq", dN[..., 0], ue[..., 0])
    eps[..., 1] = np.einsum("eqb,eb->eq", dN[..., 1], ue[..., 1])
    eps[..., 2] = (np.einsum("eqb,eb->eq", dN[..., 1], ue[..., 0])
                   + np.einsum("eqb,eb->eq", dN[..., 0], ue[..., 1]))
    phi = np.einsum("eqb,eb->eq", N, pe)
    grad = np.einsum("eqbi,eb->eqi", dN, pe)
    lap = np.einsum("eqb,eb->eq", d2N[..., 0] + d2N[..., 1], pe)
    return eps, phi, grad, lap


def strains(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Voigt strain at every quadrature point, shape (ne, nq, 3)."""
    x = np.zeros(mesh.n_dofs)
    x[:mesh.n_u] = u
    ue, pe = _gather(mesh, x, slice(None))
    return _fields(mesh.dN, mesh.d2N, mesh.N, ue, pe)[0]


def _effective_history(eps, H, mat, history_mode):
    if history_mode == "per_step":
        return H, None
    if history_mode != "per_iteration":
        raise ValueError(f"unknown history mode {history_mode!r}")
    Ht = driving_force(eps, mat)
    active = Ht > H
    return np.where(active, Ht, H), active


def _batch(mesh: Mesh, sl, x, H, mat: MaterialModel, history_mode: str,
           tangent: bool):
    """Element residuals (and matrices) for the elements selected by ``sl``."""
    N, dN, d2N, w = mesh.N[sl], mesh.dN[sl], mesh.d2N[sl], mesh.wdet[sl]
    ue, pe = _gather(mesh, x, sl)
    Hs = H[sl]
    eps, phi, grad, lap = _fields(dN, d2N, N, ue, pe)
    c = evaluate(eps, phi, mat, tangent=tangent)
    Heff, active = _effective_history(eps, Hs, mat, history_mode)
    k_loc, k_grad, k_lap = phase_field_coefficients(mat)
    D = d2N[..., 0] + d2N[..., 1]

    ne, nq, nb = N.shape
    ws = w[..., None] * c.sigma
    r_u = np.empty((ne, nb, 2))
    r_u[..., 0] = (np.einsum("eqb,eq->eb", dN[..., 0], ws[..., 0])
                   + np.einsum("eqb,eq->eb", dN[..., 1], ws[..., 2]))
    r_u[..., 1] = (np.einsum("eqb,eq->eb", dN[..., 1], ws[..., 1])
                   + np.einsum("eqb,eq->eb", dN[..., 0], ws[..., 2]))
    src = w * (k_loc * c.dalpha + c.dg * Heff)
    r_p = (np.einsum("eqb,eq->eb", N, src)
           + k_grad * np.einsum("eqbi,eqi->eb", dN, w[..., None] * grad))
    if k_lap:
        r_p += k_lap * np.einsum("eqb,eq->eb", D, w * lap)
    r_e = np.concatenate([r_u.reshape(ne, 2 * nb), r_p], axis=1)
    if not tangent:
        return r_e, None

    B = _strain_operator(dN)                                   # (ne,nq,3,2nb)
    Bw = (B * w[..., None, None]).reshape(ne, nq * 3, 2 * nb)
    CB = np.matmul(c.C, B).reshape(ne, nq * 3, 2 * nb)
    Kuu = np.matmul(Bw.transpose(0, 2, 1), CB)

    v = np.einsum("eqim,eqi->eqm", B, (w * c.dg)[..., None] * c.sigma_plus)
    Kup = np.matmul(v.transpose(0, 2, 1), N)

    if active is not None:
        dH = driving_force_derivative(eps, mat) * active[..., None]
        t = np.einsum("eqi,eqim->eqm", (w * c.dg)[..., None] * dH, B)
        Kpu = np.matmul(N.transpose(0, 2, 1), t)
    else:
        Kpu = np.zeros((ne, nb, 2 * nb))

    m = w * (c.ddg * Heff + k_loc * c.ddalpha)
    Kpp = np.matmul(N.transpose(0, 2, 1), m[..., None] * N)
    dNw = dN * (k_grad * w)[..., None, None]
    Kpp += np.matmul(dNw[..., 0].transpose(0, 2, 1), dN[..., 0])
    Kpp += np.matmul(dNw[..., 1].transpose(0, 2, 1), dN[..., 1])
    if k_lap:
        Kpp += np.matmul((D * (k_lap * w)[..., None]).transpose(0, 2, 1), D)

    K_e = np.empty((ne, 3 * nb, 3 * nb))
    K_e[:, :2 * nb, :2 * nb] = Kuu
    K_e[:, :2 * nb, 2 * nb:] = Kup
    K_e[:, 2 * nb:, :2 * nb] = Kpu
    K_e[:, 2 * nb:, 2 * nb:] = Kpp
    return r_e, K_e


def _element_arrays(mesh, x, H, mat, history_mode, tangent, threads=None):
    ne = mesh.n_elements
    nd = mesh.elem_dofs.shape[1]
    if threads is None:
        threads = int(os.environ.get("PF4_THREADS", "1") or 1)
    threads = max(1, threads)
    chunk = 256
    bounds = [(s, min(s + chunk, ne)) for s in range(0, ne, chunk)]
    r_e = np.empty((ne, nd))
    K_e = np.empty((ne, nd, nd)) if tangent else None

    def work(b):
        r, K = _batch(mesh, slice(*b), x, H, mat, history_mode, tangent)
        r_e[b[0]:b[1]] = r
        if tangent:
            K_e[b[0]:b[1]] = K

    if threads == 1 or len(bounds) == 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds))
    return r_e, K_e


def _single(mesh, e, u_e, phi_e, H_e, mat, history_mode, tangent):
    x = np.zeros(mesh.n_dofs)
    d = mesh.elem_dofs[e]
    nb = mesh.conn.shape[1]
    x[d[:2 * nb]] = np.asarray(u_e, dtype=float).ravel()
    x[d[2 * nb:]] = phi_e
    H = np.zeros_like(mesh.wdet)
    H[e] = H_e
    return _batch(mesh, slice(e, e + 1), x, H, mat, history_mode, tangent)


def element_residuals(mesh: Mesh, e: int, u_e, phi_e, H_e, mat: MaterialModel,
                      history_mode: str = "per_step"):
    """Internal residual vectors ``(r_u, r_phi)`` of element ``e`` (no external load).

    ``u_e`` holds ``(u_x, u_y)`` pairs of the element's control points in
    local order, ``H_e`` the history value at each quadrature point.
    """
    r, _ = _single(mesh, e, u_e, phi_e, H_e, mat, history_mode, False)
    nb = mesh.conn.shape[1]
    return r[0, :2 * nb], r[0, 2 * nb:]


def element_tangents(mesh: Mesh, e: int, u_e, phi_e, H_e, mat: MaterialModel,
                     history_mode: str = "per_step"):
    """Dense blocks ``(K_uu, K_uphi, K_phiu, K_phiphi)`` of element ``e``."""
    _, K = _single(mesh, e, u_e, phi_e, H_e, mat, history_mode, True)
    n2 = 2 * mesh.conn.shape[1]
    K = K[0]
    return K[:n2, :n2], K[:n2, n2:], K[n2:, :n2], K[n2:, n2:]


@dataclass
class AssembledSystem:
    """Global coupled tangent and residual with the Dirichlet partition."""

    K: sp.csr_matrix
    r: np.ndarray
    n_u: int
    free: np.ndarray
    fixed: np.ndarray

    @property
    def Kuu(self):
        return self.K[:self.n_u, :self.n_u]

    @property
    def Kuphi(self):
        return self.K[:self.n_u, self.n_u:]

    @property
    def Kphiu(self):
        return self.K[self.n_u:, :self.n_u]

    @property
    def Kphiphi(self):
        return self.K[self.n_u:, self.n_u:]

    @property
    def r_u(self) -> np.ndarray:
        return self.r[:self.n_u]

    @property
    def r_phi(self) -> np.ndarray:
        return self.r[self.n_u:]

    def condensed(self):
        """Tangent and residual restricted to the free dofs."""
        K = self.K[self.free][:, self.free]
        return K.tocsc(), self.r[self.free]

    def residual_norms(self) -> tuple[float, float]:
        """Infinity norms of the free-dof displacement and phase-field residuals."""
        rf = np.zeros_like(self.r)
        rf[self.free] = self.r[self.free]
        ru, rp = rf[:self.n_u], rf[self.n_u:]
        return (float(np.abs(ru).max()) if ru.size else 0.0,
                float(np.abs(rp).max()) if rp.size else 0.0)


def _check(mesh: Mesh, state):
    if state.u.shape != (mesh.n_u,) or state.phi.shape != (mesh.n_active,):
        raise ValueError(
            f"state vectors ({state.u.shape}, {state.phi.shape}) do not match the "
            f"dof partition ({mesh.n_u}, {mesh.n_active})"
        )
    if state.H.shape != mesh.wdet.shape:
        raise ValueError("history array does not match the quadrature layout")


def assemble_residual(mesh: Mesh, state, bcs: BoundaryConditions | None,
                      mat: MaterialModel, history_mode: str = "per_step",
                      f_ext: np.ndarray | None = None) -> np.ndarray:
    """Global residual ``[r_u; r_phi]`` without forming the tangent."""
    _check(mesh, state)
    x = np.concatenate([state.u, state.phi])
    r_e, _ = _element_arrays(mesh, x, state.H, mat, history_mode, False)
    r = np.bincount(mesh.elem_dofs.ravel(), weights=r_e.ravel(), minlength=mesh.n_dofs)
    if f_ext is None and bcs is not None:
        f_ext = external_force(mesh, bcs)
    if f_ext is not None:
        r[:mesh.n_u] -= f_ext
    return r


def assemble(mesh: Mesh, state, bcs: BoundaryConditions | None, mat: MaterialModel,
             history_mode: str = "per_step", f_ext: np.ndarray | None = None,
             threads: int | None = None) -> AssembledSystem:
    """Assemble the coupled tangent and residual at ``state``.

    ``state`` needs ``u`` (2n), ``phi`` (n) and ``H`` (ne, nq). Residual
    entries at constrained dofs are kept, so reactions are read off ``r``
    directly; :meth:`AssembledSystem.condensed` gives the free-dof system.
    """
    _check(mesh, state)
    x = np.concatenate([state.u, state.phi])
    r_e, K_e = _element_arrays(mesh, x, state.H, mat, history_mode, True, threads)
    indptr, indices, scatter = mesh.sparsity()
    data = np.bincount(scatter.ravel(), weights=K_e.ravel(), minlength=indices.size)
    nt = mesh.n_dofs
    K = sp.csr_matrix((data, indices, indptr), shape=(nt, nt))
    r = np.bincount(mesh.elem_dofs.ravel(), weights=r_e.ravel(), minlength=nt)
    if f_ext is None and bcs is not None:
        f_ext = external_force(mesh, bcs)
    if f_ext is not None:
        r[:mesh.n_u] -= f_ext
    fixed = np.zeros(0, dtype=np.int64) if bcs is None else np.sort(bcs.dofs)
    free = np.setdiff1d(np.arange(nt), fixed)
    return AssembledSystem(K, r, mesh.n_u, free, fixed)


def energy_terms(mesh: Mesh, u: np.ndarray, phi: np.ndarray, H: np.ndarray,
                 mat: MaterialModel) -> dict[str, float]:
    """Integrated energies per unit thickness.

    ``elastic`` is the split strain energy ``int g psi+ + psi-``;
    ``fracture`` is ``int Gc psi_phi``; ``history`` is ``int g H``. At frozen
    ``H`` the displacement residual is the variation of ``elastic`` and the
    phase-field residual the variation of ``fracture + history``.
    """
    x = np.concatenate([u, phi])
    ue, pe = _gather(mesh, x, slice(None))
    eps, ph, grad, lap = _fields(mesh.dN, mesh.d2N, mesh.N, ue, pe)
    c = evaluate(eps, ph, mat, tangent=False)
    w = mesh.wdet
    ca, l0 = mat.c_alpha, mat.l0
    g2 = (grad ** 2).sum(-1)
    if mat.order is Order.FOURTH:
        dens = (c.alpha / l0 + 0.5 * l0 * g2 + l0 ** 3 / 16.0 * lap ** 2) / ca
    else:
        dens = (c.alpha / l0 + l0 * g2) / ca
    return {
        "elastic": float((w * (c.g * c.psi_plus + c.psi_minus)).sum()),
        "fracture": float((w * mat.Gc * dens).sum()),
        "history": float((w * c.g * H).sum()),
    }
