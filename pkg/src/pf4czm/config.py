"""Run configuration: JSON schema, validation and problem construction.

A :class:`RunConfig` is a plain JSON document. Unknown keys are rejected and
validation errors carry the dotted path of the offending field. The
``build_problem`` method turns a config into the discretized boundary value
problem consumed by :func:`pf4czm.solver.run_simulation`.
"""

from __future__ import annotations

import json
import warnings
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .discretization import (
    BoundaryConditions,
    MeshError,
    RectangleGeometry,
    RefinementBand,
    Region,
    apply_notch,
    build_mesh,
    edge_control_points,
    locate_point,
    locate_point_dof,
)
from .material import MaterialModel, Order, Softening, StressState
from .solver import Problem, Schedule, SolverSettings

__all__ = [
    "ConfigError",
    "RunConfig",
    "BeamGeometry",
    "LPanelGeometry",
    "BarGeometry",
    "parse_config",
    "config_schema",
    "apply_overrides",
]

Pos = Annotated[float, Field(gt=0)]


class ConfigError(ValueError):
    """Configuration is malformed or physically inadmissible."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MaterialConfig(_Strict):
    E0: Pos
    nu: Annotated[float, Field(gt=0, lt=0.5)]
    Gc: Pos
    ft: Pos
    l0: Pos
    softening: Softening = Softening.CORNELISSEN
    order: Order = Order.FOURTH
    chi: Annotated[float, Field(ge=0, le=2)] | None = None
    stress_state: StressState = StressState.PLANE_STRESS
    thickness: Pos = 1.0

    def model(self) -> MaterialModel:
        return MaterialModel(E0=self.E0, nu=self.nu, Gc=self.Gc, ft=self.ft, l0=self.l0,
                             softening=self.softening, order=self.order, chi=self.chi,
                             stress_state=self.stress_state)


class BandConfig(_Strict):
    axis: Literal["x", "y"]
    lo: float
    hi: float
    h: Pos | None = None


class MeshConfig(_Strict):
    degree: Annotated[int, Field(ge=2, le=5)] = 3
    h: Pos | None = None
    max_span: Pos | tuple[Pos, Pos] = 20.0
    bands: tuple[BandConfig, ...] = ()


class ScheduleConfig(_Strict):
    du: Pos
    max_steps: Annotated[int, Field(ge=0)]
    cmod_stop: Pos | None = None


class OutputConfig(_Strict):
    directory: str = "out"
    snapshot_interval: Annotated[int, Field(ge=0)] = 10
    vtk_samples: Annotated[int, Field(ge=2, le=8)] = 2


class SolverConfig(_Strict):
    tol: Pos = 1e-4
    max_iter: Annotated[int, Field(ge=1)] = 50
    history_mode: Literal["per_step", "per_iteration"] = "per_step"
    max_halvings: Annotated[int, Field(ge=0, le=10)] = 4


class BeamGeometry(_Strict):
    """Notched beam in three-point bending.

    Supports sit on the bottom edge at ``(length -+ span) / 2``; the load is
    applied downward at the top of midspan. The notch rises from the bottom
    edge at ``notch_offset`` from midspan. ``notch_width`` defaults to
    ``degree`` spans of the band size so the faces are decoupled.
    """

    kind: Literal["beam_3pb"] = "beam_3pb"
    length: Pos
    height: Pos
    span: Pos | None = None
    notch_depth: Pos
    notch_offset: float = 0.0
    notch_width: Pos | None = None
    band_halfwidth: Pos = 10.0
    platen_halfwidth: Annotated[float, Field(ge=0)] = 0.0


class LPanelGeometry(_Strict):
    """L-shaped panel: a square with its lower-right quadrant cut away.

    The bottom edge of the remaining leg is clamped and the vertical
    displacement is applied upward on the underside of the arm,
    ``load_offset`` from the right edge.
    """

    kind: Literal["l_panel"] = "l_panel"
    size: Pos = 500.0
    cut: Pos = 250.0
    load_offset: Pos = 30.0
    band: tuple[float, float] = (200.0, 330.0)


class BarGeometry(_Strict):
    """Thin strip pulled along its axis (quasi-1D verification case)."""

    kind: Literal["bar"] = "bar"
    length: Pos = 100.0
    height: Pos = 5.0


Geometry = Annotated[Union[BeamGeometry, LPanelGeometry, BarGeometry],
                     Field(discriminator="kind")]


class RunConfig(_Strict):
    name: str = "run"
    description: str = ""
    geometry: Geometry
    material: MaterialConfig
    mesh: MeshConfig = MeshConfig()
    schedule: ScheduleConfig
    solver: SolverConfig = SolverConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _check(self):
        g = self.geometry
        if isinstance(g, BeamGeometry):
            span = g.span if g.span is not None else g.length
            if span > g.length:
                raise ValueError("geometry.span exceeds geometry.length")
            if g.notch_depth >= g.height:
                raise ValueError("geometry.notch_depth must be below the beam height")
            if abs(g.notch_offset) >= 0.5 * span:
                raise ValueError("geometry.notch_offset places the notch outside the supports")
        if isinstance(g, LPanelGeometry) and g.cut >= g.size:
            raise ValueError("geometry.cut must be smaller than geometry.size")
        for i, b in enumerate(self.mesh.bands):
            if b.hi <= b.lo:
                raise ValueError(f"mesh.bands.{i}: hi must exceed lo")
        if self.effective_h > 2.0 * self.material.l0:
            warnings.warn(f"effective element size {self.effective_h:g} mm exceeds 2*l0; "
                          "the crack band is under-resolved", stacklevel=2)
        return self

    @property
    def effective_h(self) -> float:
        return self.mesh.h if self.mesh.h is not None else 0.5 * self.material.l0

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def build_problem(self) -> Problem:
        builder = {"beam_3pb": _beam, "l_panel": _l_panel, "bar": _bar}[self.geometry.kind]
        try:
            mesh, bcs, gauges = builder(self)
        except MeshError as exc:
            raise ConfigError(f"geometry: {exc}") from exc
        s = self.solver
        return Problem(
            mesh=mesh, bcs=bcs, mat=self.material.model(),
            schedule=Schedule(self.schedule.du, self.schedule.max_steps, self.schedule.cmod_stop),
            settings=SolverSettings(s.tol, s.max_iter, s.history_mode, s.max_halvings),
            thickness=self.material.thickness, gauges=gauges,
            snapshot_interval=self.output.snapshot_interval,
        )


def _bands(cfg: RunConfig, extra=()):
    h = cfg.effective_h
    out = [RefinementBand(b.axis, b.lo, b.hi, b.h if b.h is not None else h)
           for b in cfg.mesh.bands]
    return out + [RefinementBand(a, lo, hi, h) for a, lo, hi in extra]


def _dirichlet(pairs):
    """``pairs`` of (dof, value, driven) -> BoundaryConditions (first wins)."""
    seen = {}
    for d, v, k in pairs:
        seen.setdefault(int(d), (v, k))
    dofs = np.array(sorted(seen), dtype=np.int64)
    return BoundaryConditions(dofs, np.array([seen[d][0] for d in dofs]),
                              np.array([seen[d][1] for d in dofs]))


def _beam(cfg: RunConfig):
    g: BeamGeometry = cfg.geometry
    p, h = cfg.mesh.degree, cfg.effective_h
    L, H = g.length, g.height
    span = g.span if g.span is not None else L
    xc = 0.5 * L
    xs = (xc - 0.5 * span, xc + 0.5 * span)
    xn = xc + g.notch_offset
    w = g.notch_width if g.notch_width is not None else p * h
    n0, n1 = xn - 0.5 * w, xn + 0.5 * w
    lo = max(0.0, min(n0, xc) - g.band_halfwidth)
    hi = min(L, max(n1, xc) + g.band_halfwidth)
    fx = {0.0, L, *xs, xc, n0, n1, xn}
    if g.platen_halfwidth:
        fx |= {xc - g.platen_halfwidth, xc + g.platen_halfwidth}
    geo = RectangleGeometry(L, H, p, cfg.mesh.max_span, features_x=tuple(sorted(fx)),
                            features_y=(g.notch_depth,))
    mesh = build_mesh(geo, _bands(cfg, [("x", lo, hi), ("y", 0.0, H)]))
    mesh = apply_notch(mesh, Region(n0, n1, 0.0, g.notch_depth))

    left = locate_point_dof(mesh, (xs[0], 0.0))
    right = locate_point_dof(mesh, (xs[1], 0.0))
    pairs = [(left.dofs[0], 0.0, 0.0), (left.dofs[1], 0.0, 0.0), (right.dofs[1], 0.0, 0.0)]
    top = edge_control_points(mesh, "top")
    cps = mesh.patch.flat_control_points()
    if g.platen_halfwidth:
        loaded = top[np.abs(cps[top, 0] - xc) <= g.platen_halfwidth + 1e-9]
    else:
        loaded = [locate_point_dof(mesh, (xc, H)).nearest_cp]
    pairs += [(mesh.dof_map[c, 1], 0.0, -1.0) for c in loaded]
    gauges = (locate_point_dof(mesh, (n0, 0.0)), locate_point_dof(mesh, (n1, 0.0)))
    return mesh, _dirichlet(pairs), gauges


def _l_panel(cfg: RunConfig):
    g: LPanelGeometry = cfg.geometry
    p = cfg.mesh.degree
    S, c = g.size, g.cut
    xl = S - g.load_offset
    geo = RectangleGeometry(S, S, p, cfg.mesh.max_span,
                            features_x=(S - c, xl), features_y=(c,))
    mesh = build_mesh(geo, _bands(cfg, [("y", g.band[0], g.band[1])]))
    mesh = apply_notch(mesh, Region(S - c, S, 0.0, c))
    bottom = edge_control_points(mesh, "bottom")
    pairs = []
    for k in bottom:
        pairs += [(mesh.dof_map[k, 0], 0.0, 0.0), (mesh.dof_map[k, 1], 0.0, 0.0)]
    load = locate_point(mesh, (xl, c))
    pairs.append((mesh.dof_map[load.nearest_cp, 1], 0.0, 1.0))
    return mesh, _dirichlet(pairs), None


def _bar(cfg: RunConfig):
    g: BarGeometry = cfg.geometry
    h = cfg.effective_h
    ms = cfg.mesh.max_span
    sy = ms[1] if isinstance(ms, tuple) else min(ms, 0.5 * g.height)
    geo = RectangleGeometry(g.length, g.height, cfg.mesh.degree, (h, sy))
    mesh = build_mesh(geo, _bands(cfg))
    left = edge_control_points(mesh, "left")
    right = edge_control_points(mesh, "right")
    pairs = [(mesh.dof_map[k, 0], 0.0, 0.0) for k in left]
    pairs.append((mesh.dof_map[left[0], 1], 0.0, 0.0))
    pairs += [(mesh.dof_map[k, 0], 0.0, 1.0) for k in right]
    return mesh, _dirichlet(pairs), None


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str | dict) -> RunConfig:
    """Validate a JSON document (or already-decoded dict) into a RunConfig."""
    try:
        data = json.loads(text) if isinstance(text, str) else text
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_schema() -> dict:
    return RunConfig.model_json_schema()


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key.path=value`` overrides; values are parsed as JSON when possible."""
    data = cfg.model_dump(mode="json")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"override path {key!r} does not exist")
            node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} does not exist")
        node[parts[-1]] = _coerce(value)
    return parse_config(data)
