import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from artifit.geometry import (
    CORNER_SIGNS, Cuboid, GeometryError, HingeSpec, assemble, axis_angle_to_matrix, box_triangles,
    canonical_axis_angle, matrix_to_axis_angle, max_dimension, rotate_about_axis, sample_surface,
)
from conftest import make_model

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


@pytest.mark.parametrize("angle, expected", [
    (np.pi / 2, (0.0, 1.0, 0.0)),
    (0.0, (1.0, 0.0, 0.0)),
    (np.pi, (-1.0, 0.0, 0.0)),
])
def test_rotate_about_z(angle, expected):
    p = rotate_about_axis(np.array([1.0, 0, 0]), np.zeros(3), np.array([0, 0, 1.0]), angle)
    np.testing.assert_allclose(p, expected, atol=1e-12)


def test_rotate_rejects_non_unit_axis():
    with pytest.raises(GeometryError):
        rotate_about_axis(np.ones(3), np.zeros(3), np.array([0, 0, 2.0]), 0.3)


@given(st.lists(vec3, min_size=3, max_size=3), vec3, vec3, st.floats(-7, 7))
def test_rotation_is_isometry(points, origin, axis, angle):
    d = np.asarray(axis)
    if np.linalg.norm(d) < 1e-3:
        d = np.array([0.0, 0, 1])
    d = d / np.linalg.norm(d)
    p = np.asarray(points)
    q = rotate_about_axis(p, np.asarray(origin), d, angle)
    dp = np.linalg.norm(p[:, None] - p[None], axis=-1)
    dq = np.linalg.norm(q[:, None] - q[None], axis=-1)
    np.testing.assert_allclose(dq, dp, atol=1e-9)
    # distance to the axis line is preserved too
    def line_dist(x):
        v = x - np.asarray(origin)
        return np.linalg.norm(v - np.outer(v @ d, d), axis=1)
    np.testing.assert_allclose(line_dist(q), line_dist(p), atol=1e-9)


@given(st.floats(1e-6, np.pi - 1e-3), vec3)
def test_axis_angle_round_trip(theta, axis):
    a = np.asarray(axis)
    if np.linalg.norm(a) < 1e-3:
        a = np.array([1.0, 0, 0])
    r = a / np.linalg.norm(a) * theta
    back = matrix_to_axis_angle(axis_angle_to_matrix(r))
    np.testing.assert_allclose(back, r, atol=1e-7)


def test_canonical_axis_angle_magnitude():
    r = np.array([0.0, 0.0, 1.5 * np.pi])
    c = canonical_axis_angle(r)
    assert np.linalg.norm(c) <= np.pi
    np.testing.assert_allclose(axis_angle_to_matrix(c), axis_angle_to_matrix(r), atol=1e-12)


def test_closed_state_is_flush_with_front_face():
    m = make_model(angles=(0.0,), translation=(0, 0, 0))
    base, moving = assemble(m, 0)
    front = base[:, 2].min()
    inner = np.sort(moving[:, 2])[-4:]
    np.testing.assert_allclose(inner, front, atol=1e-12)
    # moving part covers the face in x/y
    assert moving[:, 0].min() == pytest.approx(base[:, 0].min())
    assert moving[:, 0].max() == pytest.approx(base[:, 0].max())


def test_quarter_turn_is_perpendicular_to_face():
    m = make_model(edge_id=0, angles=(np.pi / 2,), translation=(0, 0, 0))
    _, moving = assemble(m, 0)
    # hinged on the left edge: the part now spans depth, at constant x
    assert np.ptp(moving[:, 0]) == pytest.approx(0.04)
    assert np.ptp(moving[:, 2]) == pytest.approx(1.0)
    # and it swings out towards the camera
    assert moving[:, 2].max() == pytest.approx(-0.3)


def test_half_extent_segment():
    m = make_model(base=(1.0, 1.0, 1.0), extent=0.5, offset=0.0, translation=(0, 0, 0))
    o, d = m.hinge_line()
    _, moving = assemble(m, 0)
    along = moving @ d
    assert np.ptp(along) == pytest.approx(0.5)
    assert along.min() == pytest.approx(o @ d)


@settings(max_examples=30)
@given(st.integers(0, 3), st.floats(-3, 3), vec3, st.floats(0, 0.5), st.floats(0.1, 0.5))
def test_open_state_is_rotation_of_closed_state(edge, alpha, rot, offset, extent):
    m = make_model(edge_id=edge, offset=offset, extent=extent, angles=(0.0, alpha), rotation=rot)
    o, d = m.hinge_line()
    _, closed = assemble(m, 0)
    _, opened = assemble(m, 1)
    back = rotate_about_axis(opened, o, d, -alpha)
    np.testing.assert_allclose(back, closed, atol=1e-9)


@settings(max_examples=30)
@given(st.integers(0, 3), vec3, vec3)
def test_hinge_line_lies_on_base_edge(edge, rot, trans):
    m = make_model(edge_id=edge, rotation=rot, translation=trans)
    base, _ = assemble(m, 0)
    o, d = m.hinge_line()
    # the hinge passes through two corners of the posed base
    v = base - o
    off_line = np.linalg.norm(v - np.outer(v @ d, d), axis=1)
    assert np.sum(off_line < 1e-9) == 2


def test_hinge_spec_validation():
    with pytest.raises(GeometryError):
        HingeSpec(4)
    with pytest.raises(GeometryError):
        HingeSpec(0, 0.6, 0.5)
    with pytest.raises(GeometryError):
        Cuboid((1.0, 0.0, 1.0))


def test_surface_samples_lie_on_unit_cube():
    pts = sample_surface(Cuboid((1.0, 1.0, 1.0)).corners(), 10000, seed=0)
    on_face = np.isclose(np.abs(pts), 0.5, atol=1e-12)
    assert np.all(on_face.sum(axis=1) >= 1)
    assert np.all(np.abs(pts) <= 0.5 + 1e-12)


def test_surface_sampling_is_area_weighted():
    dims = np.array([3.0, 1.0, 0.5])
    pts = sample_surface(Cuboid(tuple(dims)).corners(), 20000, seed=3)
    # face index: axis with |coordinate| at its half-extent
    axis = np.argmax(np.abs(pts) / (dims / 2), axis=1)
    counts = np.bincount(axis, minlength=3)
    areas = np.array([dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]]) * 2
    expected = areas / areas.sum() * len(pts)
    assert chisquare(counts, expected).pvalue > 0.01


def test_surface_sampling_deterministic():
    c = Cuboid((1.0, 2.0, 3.0)).corners()
    assert np.array_equal(sample_surface(c, 500, seed=9), sample_surface(c, 500, seed=9))


def test_zero_area_surface_rejected():
    with pytest.raises(GeometryError):
        sample_surface(np.zeros((8, 3)), 10)


@pytest.mark.parametrize("points, expected", [
    (Cuboid((1.0, 1.0, 1.0)).corners(), 1.0),
    (Cuboid((2.0, 1.0, 1.0)).corners(), 2.0),
    (np.array([[0.3, 0.1, 0.2]]), 0.0),
])
def test_max_dimension(points, expected):
    assert max_dimension(points) == pytest.approx(expected)


def test_max_dimension_empty():
    with pytest.raises(GeometryError):
        max_dimension(np.zeros((0, 3)))


def test_box_triangles_cover_surface():
    c = CORNER_SIGNS * 0.5
    tris = box_triangles(c)
    area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    assert area.sum() == pytest.approx(6.0)
