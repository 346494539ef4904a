from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pf4czm.assembly import (
    assemble,
    assemble_residual,
    element_kernels,
    element_residuals,
    element_tangents,
    energy_terms,
    phase_field_coefficients,
    strains,
)
from pf4czm.discretization import (
    BoundaryConditions,
    RectangleGeometry,
    build_mesh,
    edge_control_points,
)
from pf4czm.material import MaterialModel, Softening, degradation_fn, geometric_fn
from pf4czm.solver import SimState, newton_step


def concrete(**kw):
    base = dict(E0=20000.0, nu=0.2, Gc=0.113, ft=2.4, l0=1.0)
    base.update(kw)
    return MaterialModel(**base)


def mesh3(p=3, n=3):
    return build_mesh(RectangleGeometry(float(n), float(n), degree=p, max_span=1.0))


def state(mesh, u, phi, H):
    return SimpleNamespace(u=u, phi=phi, H=H)


def random_state(mesh, mat, rng):
    u = rng.normal(scale=3e-4, size=mesh.n_u)
    phi = rng.uniform(0.0, 0.8, size=mesh.n_active)
    H = mat.H0 * rng.uniform(1.0, 4.0, size=mesh.wdet.shape)
    return u, phi, H


def fd_jacobian(mesh, mat, u, phi, H, history_mode="per_step"):
    x0 = np.concatenate([u, phi])
    J = np.empty((x0.size, x0.size))
    nu = mesh.n_u
    for j in range(x0.size):
        h = 1e-8 if j < nu else 1e-6
        rp, rm = [assemble_residual(mesh, state(mesh, x[:nu], x[nu:], H), None, mat,
                                    history_mode)
                  for x in (x0 + h * np.eye(1, x0.size, j)[0], x0 - h * np.eye(1, x0.size, j)[0])]
        J[:, j] = (rp - rm) / (2 * h)
    return J


def blocks(A, nu):
    return {"uu": A[:nu, :nu], "uphi": A[:nu, nu:], "phiu": A[nu:, :nu], "phiphi": A[nu:, nu:]}


# --- coefficients -------------------------------------------------------------

def test_coefficients_by_order():
    m4 = concrete()
    m2 = concrete(order="second")
    ca = np.pi
    assert_allclose(phase_field_coefficients(m4), (0.113 / ca, 0.113 / ca, 0.113 / (8 * ca)))
    assert_allclose(phase_field_coefficients(m2), (0.113 / ca, 2 * 0.113 / ca, 0.0))


def test_kernels_layout():
    mesh = mesh3()
    k = element_kernels(mesh, 4)
    nb = mesh.conn.shape[1]
    assert k.Bu.shape == (mesh.n_qp, 3, 2 * nb)
    assert_allclose(k.Dphi, mesh.d2N[4, :, :, 0] + mesh.d2N[4, :, :, 1])
    # Voigt rows: a pure x-stretch u_x = x has eps = (1, 0, 0)
    xy = mesh.patch.flat_control_points()[mesh.conn[4]]
    ue = np.zeros(2 * nb)
    ue[0::2] = xy[:, 0]
    assert_allclose(k.Bu @ ue, np.tile([1.0, 0.0, 0.0], (mesh.n_qp, 1)), atol=1e-12)


# --- residual identities ------------------------------------------------------

@pytest.mark.parametrize("order", ["fourth", "second"])
@pytest.mark.parametrize("law", [Softening.CORNELISSEN, Softening.LINEAR])
def test_rest_state_is_equilibrium(order, law):
    mat = concrete(order=order, softening=law, l0=2.5)
    mesh = mesh3()
    H = np.full(mesh.wdet.shape, mat.H0)
    r = assemble_residual(mesh, state(mesh, np.zeros(mesh.n_u), np.zeros(mesh.n_active), H),
                          None, mat)
    assert np.abs(r).max() <= 1e-12


def test_brittle_rest_state():
    mat = concrete(softening=Softening.BRITTLE)
    mesh = mesh3()
    _, rp = element_residuals(mesh, 0, np.zeros(2 * 16), np.zeros(16),
                              np.zeros(mesh.n_qp), mat)
    assert_allclose(rp, 0.0, atol=1e-15)
    # with a floor the brittle model would crack at rest
    _, rp = element_residuals(mesh, 0, np.zeros(32), np.zeros(16),
                              np.full(mesh.n_qp, mat.H0), mat)
    assert np.all(rp < 0)


def test_uniform_phase_field_keeps_local_terms_only():
    mat = concrete()
    mesh = mesh3()
    c = 0.3
    H = np.full(mesh.wdet.shape, 2 * mat.H0)
    r = assemble_residual(mesh, state(mesh, np.zeros(mesh.n_u), np.full(mesh.n_active, c), H),
                          None, mat)[mesh.n_u:]
    k_loc = phase_field_coefficients(mat)[0]
    src = k_loc * geometric_fn(c, mat.chi)[1] + degradation_fn(c, mat)[1] * 2 * mat.H0
    expected = np.bincount(mesh.elem_pdofs.ravel() - mesh.n_u,
                           weights=np.einsum("eqb,eq->eb", mesh.N, mesh.wdet * src).ravel())
    assert_allclose(r, expected, rtol=1e-12, atol=1e-15)


# --- tangents -----------------------------------------------------------------

@pytest.mark.parametrize("order", ["fourth", "second"])
def test_tangent_blocks_match_finite_differences(order):
    mat = concrete(order=order)
    mesh = mesh3()
    rng = np.random.default_rng(7)
    u, phi, H = random_state(mesh, mat, rng)
    K = assemble(mesh, state(mesh, u, phi, H), None, mat).K.toarray()
    J = fd_jacobian(mesh, mat, u, phi, H)
    ref = blocks(J, mesh.n_u)
    for name, a in blocks(K, mesh.n_u).items():
        b = ref[name]
        scale = max(np.abs(b).max(), np.abs(a).max())
        if scale == 0:
            continue
        assert np.abs(a - b).max() <= 1e-5 * scale, name


def test_per_iteration_history_coupling_block():
    mat = concrete()
    mesh = mesh3(n=2)
    rng = np.random.default_rng(3)
    u, phi, _ = random_state(mesh, mat, rng)
    H = np.zeros(mesh.wdet.shape)          # every point on the active branch
    K = assemble(mesh, state(mesh, u, phi, H), None, mat, history_mode="per_iteration")
    Kpu = K.Kphiu.toarray()
    assert np.abs(Kpu).max() > 0
    J = fd_jacobian(mesh, mat, u, phi, H, "per_iteration")
    ref = J[mesh.n_u:, :mesh.n_u]
    assert np.abs(Kpu - ref).max() <= 1e-5 * np.abs(ref).max()
    frozen = assemble(mesh, state(mesh, u, phi, H), None, mat)
    assert frozen.Kphiu.nnz == 0 or np.abs(frozen.Kphiu.toarray()).max() == 0


def test_symmetry_and_nonsymmetry():
    mat = concrete()
    mesh = mesh3()
    u, phi, H = random_state(mesh, mat, np.random.default_rng(5))
    A = assemble(mesh, state(mesh, u, phi, H), None, mat)
    for blk in (A.Kuu.toarray(), A.Kphiphi.toarray()):
        assert np.abs(blk - blk.T).max() <= 1e-9 * np.abs(blk).max()
    Kup, Kpu = A.Kuphi.toarray(), A.Kphiu.toarray()
    assert np.abs(Kup - Kpu.T).max() > 1e-3 * np.abs(Kup).max()


def test_laplacian_block_is_gram_matrix():
    mesh = mesh3()
    k = element_kernels(mesh, 0)
    G = np.einsum("qa,q,qb->ab", k.Dphi, k.wdet, k.Dphi)
    assert np.linalg.eigvalsh(G).min() >= -1e-12 * np.abs(G).max()


def test_undamaged_stiffness_is_elasticity():
    mat = concrete()
    mesh = mesh3()
    Kuu, _, _, _ = element_tangents(mesh, 2, np.zeros(32), np.zeros(16),
                                    np.full(mesh.n_qp, mat.H0), mat)
    k = element_kernels(mesh, 2)
    ref = np.einsum("qim,ij,qjn,q->mn", k.Bu, mat.elasticity(), k.Bu, k.wdet)
    assert_allclose(Kuu, ref, rtol=1e-12, atol=1e-9)


def test_dense_mirror_assembly():
    mat = concrete()
    mesh = build_mesh(RectangleGeometry(2.0, 1.0, degree=3, max_span=1.0))
    assert mesh.n_elements == 2
    u, phi, H = random_state(mesh, mat, np.random.default_rng(9))
    A = assemble(mesh, state(mesh, u, phi, H), None, mat)
    K = np.zeros((mesh.n_dofs, mesh.n_dofs))
    r = np.zeros(mesh.n_dofs)
    for e in range(mesh.n_elements):
        d = mesh.elem_dofs[e]
        n2 = 2 * mesh.conn.shape[1]
        ue, pe = u[d[:n2]], phi[d[n2:] - mesh.n_u]
        Kuu, Kup, Kpu, Kpp = element_tangents(mesh, e, ue, pe, H[e], mat)
        Ke = np.block([[Kuu, Kup], [Kpu, Kpp]])
        K[np.ix_(d, d)] += Ke
        ru, rp = element_residuals(mesh, e, ue, pe, H[e], mat)
        r[d] += np.r_[ru, rp]
    assert_allclose(A.K.toarray(), K, rtol=1e-13, atol=1e-9)
    assert_allclose(A.r, r, rtol=1e-13, atol=1e-15)


def test_assembly_is_bitwise_deterministic():
    mat = concrete()
    mesh = build_mesh(RectangleGeometry(30.0, 20.0, degree=3, max_span=1.0))   # > 1 chunk
    u, phi, H = random_state(mesh, mat, np.random.default_rng(1))
    s = state(mesh, u, phi, H)
    a = assemble(mesh, s, None, mat)
    b = assemble(mesh, s, None, mat)
    c = assemble(mesh, s, None, mat, threads=3)
    for other in (b, c):
        assert a.K.data.tobytes() == other.K.data.tobytes()
        assert a.r.tobytes() == other.r.tobytes()
        assert np.array_equal(a.K.indices, other.K.indices)


# --- energy consistency ---------------------------------------------------------

@pytest.mark.parametrize("order", ["fourth", "second"])
def test_residual_is_energy_variation(order):
    # with H frozen, r_u is the variation of the elastic energy and r_phi that of
    # the fracture plus history energy (g H replaces g psi+ in the phi equation)
    mat = concrete(order=order)
    mesh = mesh3()
    rng = np.random.default_rng(21)
    u, phi, H = random_state(mesh, mat, rng)
    r = assemble_residual(mesh, state(mesh, u, phi, H), None, mat)
    h = 1e-6
    for _ in range(20):
        du = rng.normal(size=mesh.n_u) * 1e-4
        dp = rng.normal(size=mesh.n_active) * 0.1
        E_u = lambda s: energy_terms(mesh, u + s * du, phi, H, mat)["elastic"]  # noqa: E731
        d_u = (E_u(h) - E_u(-h)) / (2 * h)
        assert_allclose(r[:mesh.n_u] @ du, d_u, rtol=1e-5)
        E_p = lambda s: sum(v for k, v in energy_terms(mesh, u, phi + s * dp, H, mat).items()  # noqa: E731
                            if k != "elastic")
        d_p = (E_p(h) - E_p(-h)) / (2 * h)
        assert_allclose(r[mesh.n_u:] @ dp, d_p, rtol=1e-5)


# --- patch test ---------------------------------------------------------------

@pytest.mark.parametrize("p", [2, 3])
def test_uniaxial_patch_test(p):
    mat = concrete()
    L, W = 10.0, 4.0
    mesh = build_mesh(RectangleGeometry(L, W, degree=p, max_span=max(L, W)))
    assert mesh.n_elements == 1
    left = edge_control_points(mesh, "left")
    right = edge_control_points(mesh, "right")
    corner = left[0]
    dofs = list(mesh.dof_map[left, 0]) + [mesh.dof_map[corner, 1]] + list(mesh.dof_map[right, 0])
    driven = [0.0] * (len(left) + 1) + [1.0] * len(right)
    bcs = BoundaryConditions(dofs, np.zeros(len(dofs)), driven)
    delta = 1e-3
    st = SimState.initial(mesh, mat)
    new, iters, _ = newton_step(st, bcs, mat, mesh, load=delta)
    eps = delta / L
    xy = mesh.cp_coordinates()
    ux = eps * xy[:, 0]
    uy = -mat.nu * eps * xy[:, 1]
    assert_allclose(new.u[0::2], ux, rtol=1e-10, atol=1e-10 * delta)
    assert_allclose(new.u[1::2], uy, rtol=1e-10, atol=1e-10 * delta)
    assert_allclose(new.phi, 0.0, atol=1e-14)
    e = strains(mesh, new.u)
    assert_allclose(e[..., 0], eps, rtol=1e-10)
    assert_allclose(e[..., 2], 0.0, atol=1e-10 * eps)
