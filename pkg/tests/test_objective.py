import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from artifit import diffgeom
from artifit.geometry import Cuboid, assemble, axis_angle_to_matrix
from artifit.objective import (
    HumanObservation, LossBreakdown, LossConfig, Objective, contact_residual, loss_contact, loss_depth,
    loss_dice, loss_overlap, loss_sil, loss_total, object_mean_z, penetration_depth, soft_iou,
)
from artifit.render import RenderConfig, SoftMask
from artifit.synth import MASK_TAU
from conftest import make_model
from gradcheck import check_term

unit = Cuboid((1.0, 1.0, 1.0)).corners()


def _masks(n, shape, fill):
    return [SoftMask(np.full(shape, fill)) for _ in range(n)]


def test_sil_examples():
    assert loss_sil(_masks(1, (2, 2), 1.0), _masks(1, (2, 2), 0.0)) == 4.0
    a = _masks(3, (4, 5), 0.3)
    assert loss_sil(a, a) == 0.0


def test_sil_matches_double_loop(rng):
    gt = [rng.uniform(0, 1, (7, 9)) for _ in range(3)]
    pr = [rng.uniform(0, 1, (7, 9)) for _ in range(3)]
    total = 0.0
    for g, p in zip(gt, pr):
        for i in range(7):
            for j in range(9):
                total += (g[i, j] - p[i, j]) ** 2
    assert loss_sil(gt, pr) == pytest.approx(total / 3, abs=1e-9)


@pytest.mark.parametrize("gt, proj", [
    (_masks(2, (2, 2), 1.0), _masks(3, (2, 2), 1.0)),
    (_masks(1, (2, 2), 1.0), _masks(1, (2, 3), 1.0)),
    ([], []),
])
def test_sil_rejects_mismatch(gt, proj):
    with pytest.raises(ValueError):
        loss_sil(gt, proj)


def test_sil_sums_parts():
    gt = {k: _masks(1, (2, 2), 1.0) for k in ("object", "base", "moving")}
    pr = {k: _masks(1, (2, 2), 0.0) for k in ("object", "base", "moving")}
    assert loss_sil(gt, pr) == 12.0


def test_soft_iou_examples():
    a = np.zeros((4, 4))
    a[:, :2] = 1
    b = np.zeros((4, 4))
    b[:, 1:3] = 1
    assert soft_iou(a, a) == 1.0
    assert soft_iou(a, 1 - a) == 0.0
    assert soft_iou(a, b) == pytest.approx(1 / 3)
    assert soft_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_dice_examples():
    parts = ("object", "base", "moving")
    a = np.zeros((4, 4))
    a[:2] = 1
    gt = {k: [a, a] for k in parts}
    assert loss_dice(gt, gt) == 0.0
    assert loss_dice(gt, {k: [1 - a, 1 - a] for k in parts}) == pytest.approx(3.0)


m23 = arrays(np.float64, (2, 3, 4), elements=st.floats(0, 1))


@settings(max_examples=50)
@given(m23, m23)
def test_mask_losses_flip_invariant_and_bounded(g, p):
    flip = lambda x: x[:, :, ::-1]  # noqa: E731
    assert loss_sil(flip(g), flip(p)) == pytest.approx(loss_sil(g, p), abs=1e-12)
    assert loss_dice(flip(g), flip(p)) == pytest.approx(loss_dice(g, p), abs=1e-12)
    assert loss_sil(g, p) >= 0
    assert 0 <= loss_dice(g, p) <= 1 + 1e-12


@pytest.mark.parametrize("offset, expected", [
    ((2.0, 0, 0), 0.0),
    ((0.0, 0, 0), 1.0),
    ((0.5, 0, 0), 0.5),
    ((0.2, 0.3, 0.0), 0.7),
])
def test_penetration_depth_examples(offset, expected):
    assert penetration_depth(unit, unit + np.asarray(offset)) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=40)
@given(st.tuples(*[st.floats(-1, 1)] * 3), st.tuples(*[st.floats(-0.8, 0.8)] * 3),
       st.tuples(*[st.floats(-3, 3)] * 3), st.tuples(*[st.floats(-5, 5)] * 3))
def test_penetration_depth_symmetric_and_rigid_invariant(rot_b, off_b, rot, trans):
    a = Cuboid((1.0, 0.6, 0.8)).corners()
    b = Cuboid((0.7, 0.5, 0.2)).corners() @ axis_angle_to_matrix(rot_b).T + np.asarray(off_b)
    d = penetration_depth(a, b)
    assert d >= 0
    assert penetration_depth(b, a) == pytest.approx(d, abs=1e-9)
    R, T = axis_angle_to_matrix(rot), np.asarray(trans)
    assert penetration_depth(a @ R.T + T, b @ R.T + T) == pytest.approx(d, abs=1e-9)


def test_overlap_examples():
    assert loss_overlap(make_model(angles=(np.pi / 2,), thickness=0.04)) == 0.0
    # closed and flush: the part sits outside the base, touching the front face
    closed = make_model(angles=(0.0,))
    base, moving = assemble(closed, 0)
    assert penetration_depth(base, moving) == pytest.approx(0.0, abs=1e-12)
    assert loss_overlap(closed) == 0.0
    assert loss_overlap(make_model(angles=(-np.pi / 2,))) > 0


def _human(n, z, hands=None):
    hands = np.zeros((n, 3)) if hands is None else hands
    return HumanObservation(hands, hands, np.full(n, z))


@pytest.mark.parametrize("dz, expected", [(0.0, 0.0), (0.05, 0.0), (-0.05, 0.0), (0.6, 0.5), (-0.6, 0.5)])
def test_depth_examples(dz, expected):
    m = make_model(angles=(0.3,))
    z = object_mean_z(m, 0)
    assert loss_depth(m, _human(1, z + dz)) == pytest.approx(expected, abs=1e-12)


def test_depth_requires_matching_frames():
    with pytest.raises(ValueError):
        loss_depth(make_model(angles=(0.3, 0.4)), _human(1, 3.0))


def test_human_validation():
    with pytest.raises(ValueError):
        HumanObservation(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        HumanObservation(np.full((1, 3), np.nan), np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        _human(1, 0.0).hand("middle")


def test_contact_zero_for_rigid_copy(rng):
    m = make_model(angles=np.linspace(0, 1.2, 6))
    v = np.array([assemble(m, t)[1].mean(0) for t in range(6)])
    R = Rotation.random(random_state=3).as_matrix()
    h = v @ R.T + rng.normal(0, 1, 3)
    human = HumanObservation(h, np.zeros((6, 3)), np.zeros(6))
    assert loss_contact(m, human, "left") == pytest.approx(0.0, abs=1e-12)


def _grid_oracle(v, h):
    """Minimum of the rigid residual by multi-start local refinement over SO(3) x R^3."""
    def f(p):
        R = axis_angle_to_matrix(p[:3])
        return np.sum((v @ R.T + p[3:] - h) ** 2)
    best = np.inf
    grid = np.linspace(-np.pi, np.pi, 4, endpoint=False)
    for a in grid:
        for b in grid:
            for c in grid:
                p0 = np.r_[a, b, c, h.mean(0) - v.mean(0)]
                best = min(best, minimize(f, p0, method="BFGS", options={"gtol": 1e-12}).fun)
    return best


def test_contact_matches_brute_force_minimum(rng):
    v = rng.normal(0, 1, (5, 3))
    h = v @ Rotation.random(random_state=5).as_matrix().T + 0.3 + rng.normal(0, 0.1, (5, 3))
    assert contact_residual(v, h) == pytest.approx(_grid_oracle(v, h), rel=1e-6, abs=1e-10)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31))
def test_contact_invariant_to_rigid_hand_motion(seed):
    r = np.random.default_rng(seed)
    v, h = r.normal(0, 1, (6, 3)), r.normal(0, 1, (6, 3))
    Q = Rotation.random(random_state=seed % 1000).as_matrix()
    assert contact_residual(v, h @ Q.T + r.normal(0, 3, 3)) == pytest.approx(contact_residual(v, h), rel=1e-7, abs=1e-9)


def test_contact_degenerate_falls_back_to_translation():
    v = np.zeros((4, 3))
    h = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
    # a static part can only be translated onto the mean hand position
    assert contact_residual(v, h) == pytest.approx(np.sum((h - h.mean(0)) ** 2))


def test_contact_needs_three_frames():
    with pytest.raises(ValueError):
        loss_contact(make_model(angles=(0.1, 0.2)), _human(2, 3.0))


def test_breakdown_weighted_sum():
    assert LossBreakdown.combine(0, 0, 0, 0, 0).total == 0
    assert LossBreakdown.combine(1, 2, 3, 4, 5).total == 15
    cfg = LossConfig(w_sil=2, w_dice=0, w_over=1, w_depth=0.5, w_contact=0)
    assert LossBreakdown.combine(1, 2, 3, 4, 5, cfg).total == 2 + 3 + 2


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(w_dice=-1)
    with pytest.raises(ValueError):
        LossConfig(lambda_depth=-0.1)
    only = LossConfig().only("contact")
    assert (only.w_sil, only.w_contact) == (0.0, 1.0)


def test_zero_at_truth(small_scene):
    rc = RenderConfig(tau=MASK_TAU)
    ref = loss_total(small_scene.gt, small_scene, hand="left", render_cfg=rc)
    assert ref.sil + ref.dice < 1e-6
    assert ref.over == 0 and ref.depth == 0
    assert ref.contact < 1e-12
    obj = Objective(small_scene, small_scene.gt.hinge.edge_id, "left", render_cfg=rc)
    fast, _ = obj.evaluate(diffgeom.pack(small_scene.gt))
    assert fast.sil + fast.dice < 1e-6


def test_fast_path_matches_reference(small_scene, rng):
    x = np.asarray(diffgeom.pack(small_scene.gt)) + rng.normal(0, 0.02, 16)
    model = diffgeom.unpack(x, small_scene.gt.hinge.edge_id)
    ref = loss_total(model, small_scene, hand="right")
    fast, _ = Objective(small_scene, small_scene.gt.hinge.edge_id, "right").evaluate(x, grad=False)
    for k in ("sil", "dice", "over", "depth", "contact", "total"):
        assert getattr(fast, k) == pytest.approx(getattr(ref, k), rel=1e-7, abs=1e-9), k


def test_behind_camera_penalty(small_scene):
    x = np.asarray(diffgeom.pack(small_scene.gt), dtype=float)
    x[5] = 0.05  # base straddles the camera plane
    loss, g = Objective(small_scene, small_scene.gt.hinge.edge_id).evaluate(x)
    assert loss.sil >= 1e4
    assert np.all(np.isfinite(g))


@pytest.mark.parametrize("term", ["sil", "dice", "over", "depth", "contact", "total"])
def test_gradient_matches_finite_differences(small_scene, term):
    errors = check_term(small_scene, term, np.random.default_rng(7), n_points=4)
    assert len(errors) == 4
    assert max(errors) < 1e-3


def test_contact_collinear_path_attains_minimum():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 0, 0]], float)
    R = Rotation.from_euler("xyz", (10, 40, -20), degrees=True).as_matrix()
    assert contact_residual(v, v @ R.T + 2.0) == pytest.approx(0.0, abs=1e-20)
