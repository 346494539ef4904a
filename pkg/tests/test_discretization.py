import numpy as np
import pytest
from numpy.testing import assert_allclose

from pf4czm.discretization import (
    BoundaryConditions,
    MeshError,
    RectangleGeometry,
    RefinementBand,
    Region,
    apply_notch,
    build_mesh,
    edge_control_points,
    external_force,
    gauss_rule,
    graded_breaks,
    locate_point,
    locate_point_dof,
)


# --- quadrature -------------------------------------------------------------

def test_gauss_rule_small_cases():
    x, w = gauss_rule(1)
    assert_allclose(x, [0.0])
    assert_allclose(w, [2.0])
    x, w = gauss_rule(2)
    assert_allclose(np.sort(x), [-1 / np.sqrt(3), 1 / np.sqrt(3)], rtol=1e-15)
    assert_allclose(w, [1.0, 1.0], rtol=1e-15)


@pytest.mark.parametrize("n", range(1, 7))
def test_gauss_rule_exactness(n):
    x, w = gauss_rule(n)
    assert_allclose(w.sum(), 2.0, rtol=1e-14)
    for k in range(2 * n):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert abs(np.dot(w, x ** k) - exact) <= 1e-14


def test_gauss_three_points_integrates_x4():
    x, w = gauss_rule(3)
    assert abs(np.dot(w, x ** 4) - 0.4) <= 1e-14


@pytest.mark.parametrize("n", [0, 7, 2.5])
def test_gauss_rule_range(n):
    with pytest.raises(ValueError):
        gauss_rule(n)


# --- mesh construction ------------------------------------------------------

def test_unit_square_counts():
    mesh = build_mesh(RectangleGeometry(1.0, 1.0, degree=2, max_span=0.5))
    assert mesh.n_elements == 4
    assert mesh.n_active == 16
    assert mesh.n_dofs == 48
    assert mesh.conn.shape == (4, 9)
    assert mesh.n_qp == 9


def test_dof_map_is_bijection():
    mesh = build_mesh(RectangleGeometry(3.0, 2.0, degree=3, max_span=1.0))
    d = mesh.dof_map[mesh.active_cps].ravel()
    assert np.array_equal(np.sort(d), np.arange(mesh.n_dofs))


@pytest.mark.parametrize("degree", [2, 3, 4])
def test_area_from_quadrature(degree):
    mesh = build_mesh(RectangleGeometry(440.0, 100.0, degree=degree, max_span=20.0),
                      [RefinementBand("x", 210.0, 230.0, 2.5)])
    assert_allclose(mesh.area(), 44000.0, rtol=1e-9)


def test_beam_band_resolution_and_grading():
    bands = [RefinementBand("x", 210.0, 230.0, 1.25)]
    mesh = build_mesh(RectangleGeometry(440.0, 100.0, max_span=20.0,
                                        features_x=(210.0, 230.0)), bands)
    b = mesh.element_bounds()
    hit = (b[:, 1] > 210.0 + 1e-6) & (b[:, 0] < 230.0 - 1e-6)
    assert np.all(b[hit, 1] - b[hit, 0] <= 1.25 + 1e-9)
    xb = mesh.patch.kv_xi.breaks * 440.0
    w = np.diff(xb)
    assert np.all(w[1:] <= 2 * w[:-1] * (1 + 1e-9))
    assert np.all(w[:-1] <= 2 * w[1:] * (1 + 1e-9))


def test_refinement_no_op_when_h_is_span():
    a = graded_breaks(0.0, 10.0, 5.0)
    b = graded_breaks(0.0, 10.0, 5.0, [(0.0, 10.0, 5.0)])
    assert_allclose(a, b)


def test_band_outside_domain():
    with pytest.raises(MeshError):
        graded_breaks(0.0, 10.0, 5.0, [(8.0, 12.0, 1.0)])


def test_features_become_knot_lines():
    b = graded_breaks(0.0, 100.0, 30.0, features=(17.0, 61.5))
    assert np.min(np.abs(b - 17.0)) < 1e-12
    assert np.min(np.abs(b - 61.5)) < 1e-12


# --- notches ----------------------------------------------------------------

def _beam():
    bands = [RefinementBand("x", 200.0, 240.0, 2.5)]
    return build_mesh(RectangleGeometry(440.0, 100.0, max_span=20.0,
                                        features_x=(218.75, 221.25),
                                        features_y=(50.0,)), bands)


def test_zero_depth_notch_is_noop():
    mesh = _beam()
    assert apply_notch(mesh, Region(218.75, 221.25, 0.0, 0.0)) is mesh


def test_notch_removes_quadrature_points_and_orphans():
    mesh = _beam()
    region = Region(218.75, 221.25, 0.0, 50.0)
    notched = apply_notch(mesh, region)
    removed = mesh.n_elements - notched.n_elements
    assert removed > 0
    xq = notched.xq.reshape(-1, 2)
    inside = ((xq[:, 0] > 218.75 + 1e-9) & (xq[:, 0] < 221.25 - 1e-9) & (xq[:, 1] < 50.0))
    assert not inside.any()
    # dof count drops by 3 x control points that lost every element
    used = np.zeros(mesh.patch.n_control_points, bool)
    used[notched.conn.ravel()] = True
    orphans = mesh.n_active - used.sum()
    assert mesh.n_dofs - notched.n_dofs == 3 * orphans
    d = notched.dof_map[notched.active_cps].ravel()
    assert np.array_equal(np.sort(d), np.arange(notched.n_dofs))
    assert_allclose(notched.area(), 44000.0 - 2.5 * 50.0, rtol=1e-9)


def test_notch_must_align_with_knots():
    with pytest.raises(MeshError, match="knot line"):
        apply_notch(_beam(), Region(219.0, 221.25, 0.0, 50.0))


def test_notch_must_reach_boundary():
    with pytest.raises(MeshError):
        apply_notch(_beam(), Region(218.75, 221.25, 10.0, 50.0))


# --- point location ---------------------------------------------------------

def test_corner_interpolation():
    mesh = build_mesh(RectangleGeometry(4.0, 2.0, max_span=1.0))
    loc = locate_point_dof(mesh, (4.0, 2.0))
    assert loc.indices.size == 1
    assert_allclose(loc.weights, [1.0])


def test_edge_midpoint_preimage():
    mesh = build_mesh(RectangleGeometry(1.0, 1.0, max_span=0.25))
    loc = locate_point_dof(mesh, (0.5, 0.0))
    assert loc.edge == "bottom"
    assert abs(loc.xi - 0.5) <= 1e-10
    assert_allclose(loc.weights.sum(), 1.0)


def test_point_off_boundary_rejected():
    mesh = build_mesh(RectangleGeometry(1.0, 1.0, max_span=0.25))
    with pytest.raises(MeshError):
        locate_point_dof(mesh, (0.5, 0.5))
    assert locate_point(mesh, (0.5, 0.5)).edge == "interior"


def test_l_panel_load_point_resolves_on_leg_edge():
    # horizontal arm underside at y = 250 after the cut-out, 30 mm from x = 500
    mesh = build_mesh(RectangleGeometry(500.0, 500.0, max_span=25.0,
                                        features_x=(250.0, 470.0), features_y=(250.0,)))
    mesh = apply_notch(mesh, Region(250.0, 500.0, 0.0, 250.0))
    loc = locate_point(mesh, (470.0, 250.0))
    assert_allclose(loc.point, [470.0, 250.0])
    x = mesh.patch.flat_control_points()[loc.nearest_cp]
    assert abs(x[0] - 470.0) <= 12.5 and abs(x[1] - 250.0) <= 12.5


# --- loads ------------------------------------------------------------------

def test_uniform_traction_resultant():
    mesh = build_mesh(RectangleGeometry(3.0, 2.0, max_span=0.5))
    bcs = BoundaryConditions.empty()
    bcs.tractions = [("right", (2.0, -1.0))]
    f = external_force(mesh, bcs)
    assert_allclose([f[0::2].sum(), f[1::2].sum()], [4.0, -2.0], rtol=1e-12)
    right = edge_control_points(mesh, "right")
    loaded = np.flatnonzero(np.abs(f[0::2]) > 0)
    assert set(mesh.active_cps[loaded]) <= set(right)


def test_body_force_resultant():
    mesh = build_mesh(RectangleGeometry(3.0, 2.0, max_span=0.5))
    bcs = BoundaryConditions(np.zeros(0, int), np.zeros(0), np.zeros(0), body_force=(0.0, -3.0))
    f = external_force(mesh, bcs)
    assert_allclose(f[1::2].sum(), -18.0, rtol=1e-12)


def test_duplicate_dirichlet_rejected():
    with pytest.raises(MeshError):
        BoundaryConditions([1, 1], [0.0, 0.0], [0.0, 1.0])
