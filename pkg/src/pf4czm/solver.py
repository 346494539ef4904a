"""Displacement-controlled monolithic Newton driver.

Each load step prescribes the driven dofs, iterates full coupled Newton
updates until the infinity norms of both residual blocks drop below the
tolerance, and then folds the converged driving force into the history
field. Steps that fail to converge are retried with halved increments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import HISTORY_MODES, AssembledSystem, assemble, strains
from .discretization import BoundaryConditions, Mesh, PointLocation, external_force
from .material import MaterialModel, QuadPointState, driving_force, update_history

__all__ = [
    "SolverSettings",
    "Schedule",
    "SimState",
    "CurveRow",
    "LoadCurve",
    "Snapshot",
    "Problem",
    "NewtonFailure",
    "SingularSystemError",
    "STATUSES",
    "linear_solve",
    "newton_step",
    "reaction_force",
    "cmod",
    "run_simulation",
]

log = logging.getLogger(__name__)

STATUSES = ("converged", "halved", "failed")


class NewtonFailure(RuntimeError):
    """Newton iteration did not reach the tolerance."""

    def __init__(self, message: str, history: Sequence[tuple[float, float]] = ()):
        super().__init__(message)
        self.history = list(history)


class SingularSystemError(RuntimeError):
    """The condensed tangent could not be factorized."""


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-4
    max_iter: int = 50
    history_mode: str = "per_step"
    max_halvings: int = 4

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.history_mode not in HISTORY_MODES:
            raise ValueError(f"history_mode must be one of {HISTORY_MODES}")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be nonnegative")


@dataclass(frozen=True)
class Schedule:
    """Monotonic displacement schedule.

    The run stops after ``max_steps`` full increments or as soon as the
    crack mouth opening reaches ``cmod_stop`` (when given).
    """

    du: float
    max_steps: int
    cmod_stop: float | None = None

    def __post_init__(self):
        if not self.du > 0:
            raise ValueError("du must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class SimState:
    u: np.ndarray
    phi: np.ndarray
    states: QuadPointState
    step_index: int = 0
    applied: float = 0.0

    @property
    def H(self) -> np.ndarray:
        return self.states.H

    @classmethod
    def initial(cls, mesh: Mesh, mat: MaterialModel) -> "SimState":
        return cls(np.zeros(mesh.n_u), np.zeros(mesh.n_active),
                   QuadPointState.fresh(mat, mesh.wdet.shape))

    def copy(self) -> "SimState":
        return SimState(self.u.copy(), self.phi.copy(),
                        QuadPointState(self.states.H.copy(), self.states.eps.copy()),
                        self.step_index, self.applied)


@dataclass(frozen=True)
class CurveRow:
    step: int
    applied_mm: float
    reaction_N: float
    cmod_mm: float
    iters: int
    status: str


@dataclass
class LoadCurve:
    rows: list[CurveRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: CurveRow) -> None:
        if row.status not in STATUSES:
            raise ValueError(f"invalid status {row.status!r}")
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError("curve rows must have increasing step indices")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def applied(self) -> np.ndarray:
        return self.column("applied_mm")

    @property
    def reaction(self) -> np.ndarray:
        return self.column("reaction_N")

    @property
    def accepted(self) -> "LoadCurve":
        return LoadCurve([r for r in self.rows if r.status != "failed"])


@dataclass
class Snapshot:
    step: int
    applied: float
    u: np.ndarray
    phi: np.ndarray


@dataclass
class Problem:
    """Everything the step loop needs; built from a run configuration."""

    mesh: Mesh
    bcs: BoundaryConditions
    mat: MaterialModel
    schedule: Schedule
    settings: SolverSettings = field(default_factory=SolverSettings)
    thickness: float = 1.0
    gauges: tuple[PointLocation, PointLocation] | None = None
    snapshot_interval: int = 0


def linear_solve(system, rhs: np.ndarray) -> np.ndarray:
    """Solve ``K x = rhs`` with a sparse LU factorization.

    ``system`` is a sparse matrix or an :class:`AssembledSystem`, in which
    case its condensed free-dof tangent is used.
    """
    K = system.condensed()[0] if isinstance(system, AssembledSystem) else system
    K = sp.csc_matrix(K)
    rhs = np.asarray(rhs, dtype=float)
    if K.shape[0] != K.shape[1] or K.shape[0] != rhs.shape[0]:
        raise ValueError(f"shape mismatch: K {K.shape}, rhs {rhs.shape}")
    if K.shape[0] == 0:
        return np.zeros(0)
    try:
        # minimum degree on A^T + A suits the structurally symmetric pattern;
        # threshold pivoting keeps the nonsymmetric coupled blocks stable
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        d = np.abs(K.diagonal())
        zero_rows = np.flatnonzero(np.asarray(abs(K).sum(axis=1)).ravel() == 0)
        raise SingularSystemError(
            f"factorization failed ({exc}); n={K.shape[0]}, min |diag|={d.min():.3e} "
            f"at row {int(d.argmin())}, empty rows={zero_rows[:10].tolist()}"
        ) from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        piv = np.abs(lu.U.diagonal())
        raise SingularSystemError(
            f"non-finite solution; smallest pivot {piv.min():.3e} at {int(piv.argmin())}"
        )
    return x


def _apply_dirichlet(state: SimState, mesh: Mesh, bcs: BoundaryConditions, load: float):
    x = np.concatenate([state.u, state.phi])
    x[bcs.dofs] = bcs.prescribed(load)
    return x[:mesh.n_u].copy(), x[mesh.n_u:].copy()


def _newton(state, bcs, mat, mesh, load, settings, f_ext):
    u, phi = _apply_dirichlet(state, mesh, bcs, load)
    trial = SimState(u, phi, state.states, state.step_index, load)
    hist = []
    for it in range(settings.max_iter + 1):
        A = assemble(mesh, trial, bcs, mat, settings.history_mode, f_ext)
        nu, np_ = A.residual_norms()
        hist.append((nu, np_))
        if not (np.isfinite(nu) and np.isfinite(np_)):
            raise NewtonFailure(f"non-finite residual at iteration {it}", hist)
        if max(nu, np_) <= settings.tol:
            return trial, it, hist, A
        if it == settings.max_iter:
            break
        K, r = A.condensed()
        dx = linear_solve(K, -r)
        x = np.concatenate([trial.u, trial.phi])
        x[A.free] += dx
        trial.u, trial.phi = x[:mesh.n_u], x[mesh.n_u:]
    raise NewtonFailure(
        f"no convergence in {settings.max_iter} iterations "
        f"(last |r_u|={hist[-1][0]:.3e}, |r_phi|={hist[-1][1]:.3e})", hist)


def newton_step(state: SimState, bcs: BoundaryConditions, mat: MaterialModel, mesh: Mesh,
                load: float | None = None, settings: SolverSettings = SolverSettings(),
                f_ext: np.ndarray | None = None):
    """Converge the coupled system at load level ``load`` with history frozen.

    Returns ``(state', iterations, residual_history)`` where the history lists
    ``(|r_u|_inf, |r_phi|_inf)`` before every linear solve and at exit. The
    history field of ``state'`` is not updated.
    """
    if load is None:
        load = state.applied
    if f_ext is None:
        f_ext = external_force(mesh, bcs)
    trial, it, hist, _ = _newton(state, bcs, mat, mesh, load, settings, f_ext)
    return trial, it, hist


def reaction_force(mesh: Mesh, state: SimState, bcs: BoundaryConditions,
                   mat: MaterialModel, thickness: float = 1.0,
                   history_mode: str = "per_step", system: AssembledSystem | None = None):
    """Work-conjugate force at the driven dofs, ``t * sum_k r_k * driven_k``."""
    if system is None:
        system = assemble(mesh, state, bcs, mat, history_mode)
    mask = bcs.driven != 0
    return float(thickness * np.dot(system.r[bcs.dofs[mask]], bcs.driven[mask]))


def cmod(u: np.ndarray, mesh: Mesh, gauges) -> float:
    """Relative horizontal displacement ``u_x(B) - u_x(A)`` of two boundary points."""
    if gauges is None:
        return float("nan")
    vals = []
    for g in gauges:
        dofs = mesh.dof_map[g.indices, 0]
        vals.append(float(np.dot(g.weights, u[dofs])))
    return vals[1] - vals[0]


def _accept(state: SimState, mesh: Mesh, mat: MaterialModel) -> SimState:
    eps = strains(mesh, state.u)
    new = update_history(state.states, driving_force(eps, mat), mat)
    out = state.copy()
    out.states = QuadPointState(new.H, eps)
    # control coefficients of barely supported functions next to a cut-out can
    # stray far from the field they represent, so judge the field itself
    pq = np.einsum("eqb,eb->eq", mesh.N, state.phi[mesh.elem_pdofs - mesh.n_u])
    lo, hi = float(pq.min(initial=0.0)), float(pq.max(initial=0.0))
    if lo < -0.01 or hi > 1.01:
        log.warning("phase field left [-0.01, 1.01]: min %.4f, max %.4f", lo, hi)
    return out


def run_simulation(problem, on_row: Callable[[CurveRow], None] | None = None,
                   on_snapshot: Callable[[Snapshot], None] | None = None,
                   on_state: Callable[[SimState], None] | None = None):
    """Execute the load schedule.

    Parameters
    ----------
    problem : Problem or object with ``build_problem()``
        Discretized boundary value problem and schedule.
    on_row, on_snapshot : callable, optional
        Invoked after every recorded step / snapshot so callers can flush
        output incrementally.
    on_state : callable, optional
        Receives every accepted state (after its history update).

    Returns
    -------
    curve : LoadCurve
    snapshots : list of Snapshot
        Initial state plus one every ``snapshot_interval`` accepted steps and
        the final state.
    """
    if not isinstance(problem, Problem):
        problem = problem.build_problem()
    mesh, bcs, mat = problem.mesh, problem.bcs, problem.mat
    sched, settings = problem.schedule, problem.settings
    f_ext = external_force(mesh, bcs)
    state = SimState.initial(mesh, mat)
    curve = LoadCurve()
    snaps = [Snapshot(0, 0.0, state.u.copy(), state.phi.copy())]
    if on_snapshot:
        on_snapshot(snaps[0])

    def record(row):
        curve.append(row)
        if on_row:
            on_row(row)

    row_index = 0
    stop = False
    for step in range(1, sched.max_steps + 1):
        target = step * sched.du
        du = sched.du
        halvings = 0
        while state.applied < target - 1e-9 * sched.du and not stop:
            load = state.applied + du
            if load >= target - 1e-9 * sched.du:
                load = target
            try:
                new, iters, _, system = _newton(state, bcs, mat, mesh, load, settings, f_ext)
            except NewtonFailure as exc:
                if halvings < settings.max_halvings:
                    halvings += 1
                    du *= 0.5
                    log.info("step %d: %s; halving to du=%.3e", step, exc, du)
                    continue
                row_index += 1
                record(CurveRow(row_index, load, float("nan"), float("nan"),
                                settings.max_iter, "failed"))
                log.warning("step %d failed after %d halvings: %s", step, halvings, exc)
                stop = True
                break
            R = reaction_force(mesh, new, bcs, mat, problem.thickness, system=system)
            c = cmod(new.u, mesh, problem.gauges)
            state = _accept(new, mesh, mat)
            row_index += 1
            state.step_index = row_index
            if on_state:
                on_state(state)
            record(CurveRow(row_index, load, R, c, iters,
                            "halved" if halvings else "converged"))
            if sched.cmod_stop is not None and c >= sched.cmod_stop:
                stop = True
        if stop:
            break
        if problem.snapshot_interval and step % problem.snapshot_interval == 0:
            snaps.append(Snapshot(row_index, state.applied, state.u.copy(), state.phi.copy()))
            if on_snapshot:
                on_snapshot(snaps[-1])
    if snaps[-1].step != state.step_index:
        snaps.append(Snapshot(state.step_index, state.applied, state.u.copy(), state.phi.copy()))
        if on_snapshot:
            on_snapshot(snaps[-1])
    return curve, snaps
