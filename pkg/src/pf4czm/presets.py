"""Built-in benchmark configurations (N, mm, MPa).

``beam_3pb_symmetric``
    Notched concrete beam in three-point bending, crack growing straight up
    from a midspan notch.
``l_panel`` (and ``l_panel_l0_<value>``)
    Concrete L-shaped panel under mixed-mode loading; variants differ only in
    the length scale.
``beam_3pb_mixed`` (and ``beam_3pb_mixed_H<H>_a<a>``)
    Three-point bending beam with an eccentric notch, stopped at a crack
    mouth opening of 0.6 mm. Geometry assumptions: length 4H, supports at
    0.5H from each end (span 3H), notch depth H/2, notch centre ``a*H``
    from midspan.
``bar_tension``
    Quasi-1D strip under uniaxial tension used to check the nucleation
    stress.
"""

from __future__ import annotations

from .config import (
    BarGeometry,
    BeamGeometry,
    LPanelGeometry,
    MaterialConfig,
    MeshConfig,
    OutputConfig,
    RunConfig,
    ScheduleConfig,
)

__all__ = ["PRESETS", "get_preset", "preset_names",
           "L_PANEL_L0", "MIXED_HEIGHTS", "MIXED_OFFSETS"]

L_PANEL_L0 = (2.5, 5.0, 7.5, 10.0)
MIXED_HEIGHTS = (80.0, 160.0, 320.0)
MIXED_OFFSETS = (0.0, 0.3125, 0.625)


def beam_3pb_symmetric() -> RunConfig:
    return RunConfig(
        name="beam_3pb_symmetric",
        description="440 x 100 mm concrete beam, 50 mm midspan notch, supports at the "
                    "bottom corners, displacement applied at top midspan through a "
                    "10 mm rigid platen",
        geometry=BeamGeometry(length=440.0, height=100.0, notch_depth=50.0,
                              band_halfwidth=10.0, platen_halfwidth=5.0),
        material=MaterialConfig(E0=20000.0, nu=0.2, Gc=0.113, ft=2.4, l0=2.5,
                                thickness=100.0),
        mesh=MeshConfig(degree=3, max_span=20.0),
        schedule=ScheduleConfig(du=0.01, max_steps=100),
    )


def l_panel(l0: float = 7.5) -> RunConfig:
    return RunConfig(
        name="l_panel" if l0 == 7.5 else f"l_panel_l0_{l0:g}",
        description="500 x 500 mm L-shaped panel (250 mm cut-out), bottom of the leg "
                    "clamped, upward displacement 30 mm from the right edge",
        geometry=LPanelGeometry(),
        material=MaterialConfig(E0=20000.0, nu=0.18, Gc=0.13, ft=2.5, l0=l0,
                                thickness=100.0),
        mesh=MeshConfig(degree=3, max_span=25.0),
        schedule=ScheduleConfig(du=0.02, max_steps=50),
    )


def beam_3pb_mixed(H: float = 80.0, a: float = 0.0) -> RunConfig:
    l0 = 0.001 * H
    default = H == 80.0 and a == 0.0
    return RunConfig(
        name="beam_3pb_mixed" if default else f"beam_3pb_mixed_H{H:g}_a{a:g}",
        description=f"H = {H:g} mm beam, length 4H, span 3H, notch depth H/2 at "
                    f"{a:g}*H from midspan; stops at CMOD = 0.6 mm",
        geometry=BeamGeometry(length=4.0 * H, height=H, span=3.0 * H,
                              notch_depth=0.5 * H, notch_offset=-a * H,
                              band_halfwidth=0.1 * H, platen_halfwidth=0.05 * H),
        material=MaterialConfig(E0=33800.0, nu=0.2, Gc=0.08, ft=3.5, l0=l0,
                                thickness=50.0),
        mesh=MeshConfig(degree=3, max_span=0.1 * H),
        schedule=ScheduleConfig(du=0.001, max_steps=5000, cmod_stop=0.6),
        output=OutputConfig(snapshot_interval=100),
    )


def bar_tension(l0: float = 2.5) -> RunConfig:
    return RunConfig(
        name="bar_tension",
        description="100 x 5 mm strip, left end held, right end pulled",
        geometry=BarGeometry(length=100.0, height=5.0),
        material=MaterialConfig(E0=20000.0, nu=0.2, Gc=0.113, ft=2.4, l0=l0),
        mesh=MeshConfig(degree=3, max_span=(20.0, 2.5)),
        schedule=ScheduleConfig(du=2e-4, max_steps=100),
        output=OutputConfig(snapshot_interval=0),
    )


def _registry():
    out = {"beam_3pb_symmetric": beam_3pb_symmetric, "l_panel": l_panel,
           "beam_3pb_mixed": beam_3pb_mixed, "bar_tension": bar_tension}
    for l0 in L_PANEL_L0:
        out[f"l_panel_l0_{l0:g}"] = (lambda v=l0: l_panel(v))
    for H in MIXED_HEIGHTS:
        for a in MIXED_OFFSETS:
            out[f"beam_3pb_mixed_H{H:g}_a{a:g}"] = (lambda h=H, b=a: beam_3pb_mixed(h, b))
    return out


PRESETS = _registry()


def preset_names() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
