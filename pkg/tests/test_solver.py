import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from numpy.testing import assert_allclose

import pf4czm.solver as solver_mod
from pf4czm.assembly import assemble
from pf4czm.config import apply_overrides
from pf4czm.presets import get_preset
from pf4czm.solver import (
    CurveRow,
    LoadCurve,
    NewtonFailure,
    Schedule,
    SimState,
    SingularSystemError,
    SolverSettings,
    cmod,
    linear_solve,
    newton_step,
    reaction_force,
    run_simulation,
)


def bar(**over):
    cfg = get_preset("bar_tension")
    items = [f"{k}={v}" for k, v in over.items()]
    return apply_overrides(cfg, items).build_problem() if items else cfg.build_problem()


@pytest.fixture(scope="module")
def bar_problem():
    return bar()


# --- linear solve -------------------------------------------------------------

def test_identity_solve():
    b = np.arange(5.0)
    assert_allclose(linear_solve(sp.identity(5, format="csc"), b), b)


def test_solve_against_dense_lu(bar_problem):
    p = bar_problem
    mesh = build_small_mesh()
    st = SimState.initial(mesh, p.mat)
    K = assemble(mesh, st, None, p.mat).Kuu.tocsc()
    # clamp a few dofs to make the elastic block regular
    keep = np.arange(6, K.shape[0])
    Kf = K[keep][:, keep]
    assert Kf.shape[0] <= 300
    rhs = np.random.default_rng(0).normal(size=Kf.shape[0])
    x = linear_solve(Kf, rhs)
    ref = sla.lu_solve(sla.lu_factor(Kf.toarray()), rhs)
    assert np.abs(x - ref).max() <= 1e-10 * np.abs(ref).max()
    assert np.abs(Kf @ x - rhs).max() <= 1e-9 * np.abs(rhs).max()


def build_small_mesh():
    from pf4czm.discretization import RectangleGeometry, build_mesh
    return build_mesh(RectangleGeometry(4.0, 3.0, degree=3, max_span=1.0))


def test_singular_system_reports_diagnostics():
    K = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SingularSystemError, match="n=2|pivot"):
        linear_solve(K, np.ones(2))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        linear_solve(sp.identity(3, format="csc"), np.ones(2))


# --- Newton ------------------------------------------------------------------

def test_elastic_step_one_iteration_then_zero(bar_problem):
    p = bar_problem
    st = SimState.initial(p.mesh, p.mat)
    new, iters, hist = newton_step(st, p.bcs, p.mat, p.mesh, load=1e-3)
    assert iters == 1
    assert max(hist[-1]) <= 1e-4
    again, iters2, _ = newton_step(new, p.bcs, p.mat, p.mesh, load=1e-3)
    assert iters2 == 0
    assert np.array_equal(again.u, new.u)


def test_frozen_history_makes_first_step_linear(bar_problem):
    # with zero history the phase field has no driving force, whatever the load
    p = bar_problem
    st = SimState.initial(p.mesh, p.mat)
    new, iters, _ = newton_step(st, p.bcs, p.mat, p.mesh, load=0.05)
    assert iters == 1
    assert np.abs(new.phi).max() <= 1e-10


def test_superlinear_convergence_near_equilibrium(bar_problem):
    p = bar_problem
    states = []
    prob = bar(**{"schedule.max_steps": 64})
    curve, _ = run_simulation(prob, on_state=states.append)
    assert curve.column("iters").max() > 1          # damage is growing
    st = states[-1]
    _, iters, hist = newton_step(st, prob.bcs, prob.mat, prob.mesh,
                                 load=st.applied + prob.schedule.du,
                                 settings=SolverSettings(tol=1e-11))
    norms = np.array([max(h) for h in hist])
    assert iters >= 3
    tail = norms[-4:]
    assert np.all(tail[1:] <= 0.5 * tail[:-1])


# --- reactions and gauges -------------------------------------------------------

def test_reaction_equilibrium(bar_problem):
    p = bar_problem
    st = SimState.initial(p.mesh, p.mat)
    new, _, _ = newton_step(st, p.bcs, p.mat, p.mesh, load=5e-3)
    A = assemble(p.mesh, new, p.bcs, p.mat)
    R = reaction_force(p.mesh, new, p.bcs, p.mat, system=A)
    ux_fixed = [d for d in p.bcs.dofs if d < p.mesh.n_u and d % 2 == 0]
    driven = p.bcs.driven_dofs
    support = np.setdiff1d(ux_fixed, driven)
    assert_allclose(A.r[driven].sum(), -A.r[support].sum(), rtol=1e-6)
    # uniform bar: R = E A eps
    assert_allclose(R, p.mat.E0 * 5.0 * 5e-3 / 100.0, rtol=1e-6)


def test_cmod_from_gauges():
    prob = get_preset("l_panel").build_problem()
    assert np.isnan(cmod(np.zeros(prob.mesh.n_u), prob.mesh, None))


# --- run_simulation -----------------------------------------------------------

def test_zero_step_schedule(bar_problem):
    p = bar(**{"schedule.max_steps": 0})
    curve, snaps = run_simulation(p)
    assert len(curve) == 0
    assert len(snaps) == 1 and snaps[0].step == 0
    assert not snaps[0].u.any()


def test_elastic_run_is_linear():
    p = bar(**{"schedule.max_steps": 20})
    states = []
    curve, snaps = run_simulation(p, on_state=states.append)
    assert [r.status for r in curve.rows] == ["converged"] * 20
    k = curve.reaction / curve.applied
    assert np.abs(k / k[0] - 1).max() <= 1e-8
    assert max(np.abs(s.phi).max() for s in states) <= 1e-6
    assert snaps[-1].step == 20


def test_curve_rows_validated():
    c = LoadCurve()
    c.append(CurveRow(1, 0.1, 1.0, 0.0, 1, "converged"))
    with pytest.raises(ValueError):
        c.append(CurveRow(1, 0.2, 1.0, 0.0, 1, "converged"))
    with pytest.raises(ValueError):
        c.append(CurveRow(2, 0.2, 1.0, 0.0, 1, "ok"))


def test_halving_on_forced_failure(monkeypatch):
    p = bar(**{"schedule.max_steps": 4})
    du = p.schedule.du
    real = solver_mod._newton

    def flaky(state, bcs, mat, mesh, load, settings, f_ext):
        # the third increment only converges in quarter steps
        if 2 * du < load <= 3 * du + 1e-12 and load - state.applied > 0.3 * du:
            raise NewtonFailure("forced")
        return real(state, bcs, mat, mesh, load, settings, f_ext)

    monkeypatch.setattr(solver_mod, "_newton", flaky)
    curve, _ = run_simulation(p)
    status = [r.status for r in curve.rows]
    assert status == ["converged", "converged", "halved", "halved", "halved", "halved",
                      "converged"]
    assert_allclose(curve.applied[2:6], 2 * du + du * np.array([0.25, 0.5, 0.75, 1.0]))
    assert_allclose(curve.applied[-1], 4 * du)


def test_exhausted_halvings_stop_gracefully(monkeypatch):
    p = bar(**{"schedule.max_steps": 5})
    du = p.schedule.du
    real = solver_mod._newton

    def broken(state, bcs, mat, mesh, load, settings, f_ext):
        if load > 2 * du + 1e-12:
            raise NewtonFailure("forced")
        return real(state, bcs, mat, mesh, load, settings, f_ext)

    monkeypatch.setattr(solver_mod, "_newton", broken)
    rows, snaps = [], []
    curve, out = run_simulation(p, on_row=rows.append, on_snapshot=snaps.append)
    assert [r.status for r in curve.rows] == ["converged", "converged", "failed"]
    assert rows == curve.rows
    assert_allclose(curve.rows[-1].applied_mm, 2 * du + du / 16)
    assert out[-1].step == 2


def test_schedule_and_settings_validation():
    with pytest.raises(ValueError):
        Schedule(du=0.0, max_steps=3)
    with pytest.raises(ValueError):
        SolverSettings(history_mode="sometimes")
