import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifit import synth
from artifit.metrics import video_eval
from artifit.objective import loss_total
from artifit.render import RenderConfig
from artifit.synth import (
    CATEGORIES, MASK_TAU, DatasetError, SceneError, SceneSpec, gen_scene, gen_suite, gen_trajectory,
    read_dataset, read_sample, write_dataset,
)


@pytest.fixture(scope="module")
def samples(small_camera):
    return [gen_scene(SceneSpec(seed=s, n_frames=4, camera=small_camera), video_id=f"v{s}") for s in range(4)]


@pytest.mark.parametrize("n, max_angle, shape, expected", [
    (3, 90.0, "open", (0, 45, 90)),
    (5, 80.0, "open-close", (0, 40, 80, 40, 0)),
    (2, 170.0, "open", (0, 170)),
])
def test_trajectory_examples(n, max_angle, shape, expected):
    np.testing.assert_allclose(gen_trajectory(n, max_angle, shape), expected, atol=1e-12)


@given(st.integers(2, 60), st.floats(1e-3, 170.0), st.sampled_from(["open", "open-close"]))
def test_trajectory_range(n, max_angle, shape):
    a = gen_trajectory(n, max_angle, shape)
    assert len(a) == n and a[0] == 0.0
    assert np.all((a >= 0) & (a <= max_angle + 1e-12))


@pytest.mark.parametrize("args", [(1, 90.0, "open"), (5, 0.0, "open"), (5, 171.0, "open"), (5, 90.0, "wave")])
def test_trajectory_errors(args):
    with pytest.raises(ValueError):
        gen_trajectory(*args)


@pytest.mark.parametrize("kwargs", [
    dict(n_frames=1), dict(category="boat"), dict(edge_id=4), dict(extent_mode="third"),
    dict(shape="spin"), dict(max_angle_deg=(0.0, 10.0)), dict(thickness=(0.05, 0.01)),
])
def test_scene_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SceneSpec(**kwargs)


def test_scene_placement_failure(small_camera):
    # a base filling 99% of the image cannot satisfy the margin
    spec = SceneSpec(seed=0, n_frames=3, camera=small_camera, fill=(0.99, 0.99), margin_px=20.0)
    with pytest.raises(SceneError):
        gen_scene(spec, max_retries=5)


def test_masks_binary_and_contained(samples):
    for s in samples:
        for part in ("object", "base", "moving"):
            v = s.masks[part]
            assert v.shape == (4, 64, 64)
            assert set(np.unique(v)) <= {0.0, 1.0}
        assert np.all(s.masks["moving"] <= s.masks["object"])
        assert np.all(s.masks["base"] <= s.masks["object"])


def test_rerendering_reproduces_masks(samples):
    for s in samples:
        again = synth.render_masks(s.gt, s.camera)
        for part in again:
            assert np.array_equal(again[part], s.masks[part])


def test_annotation_is_self_consistent(samples):
    for s in samples:
        lb = loss_total(s.gt, s, hand="left", render_cfg=RenderConfig(tau=MASK_TAU))
        assert lb.sil + lb.dice < 1e-6
        assert lb.over == 0.0 and lb.depth == 0.0 and lb.contact < 1e-12
        for f in video_eval(s.gt, s.gt, n_points=2000):
            assert np.all(f.as_array() < 1e-3)


def test_fixed_seed_is_bit_identical(small_camera, tmp_path):
    a = gen_suite(2, seed=3, n_frames=3, camera=small_camera)
    b = gen_suite(2, seed=3, n_frames=3, camera=small_camera)
    write_dataset(a, tmp_path / "a")
    write_dataset(b, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_suite_mixes_categories_and_edges(small_camera):
    suite = gen_suite(8, seed=0, n_frames=3, camera=small_camera)
    assert {s.category for s in suite} == set(CATEGORIES)
    for s in suite:
        assert s.gt.hinge.edge_id in CATEGORIES[s.category]["edges"]
    assert len({(s.category, s.gt.hinge.edge_id) for s in suite}) == 8


def test_human_depth_within_jitter(samples):
    from artifit.objective import object_mean_z
    for s in samples:
        dz = [abs(object_mean_z(s.gt, t) - s.human.mean_z[t]) for t in range(s.n_frames)]
        assert max(dz) <= 0.05


def test_dataset_round_trip(samples, tmp_path):
    write_dataset(samples, tmp_path)
    back = read_dataset(tmp_path)
    assert [s.video_id for s in back] == [s.video_id for s in samples]
    for a, b in zip(samples, back):
        for part in a.masks:
            assert np.array_equal(a.masks[part], b.masks[part])
        assert a.camera == b.camera and a.category == b.category
        np.testing.assert_allclose(a.human.left_hand, b.human.left_hand, atol=1e-9)
        np.testing.assert_allclose(a.human.mean_z, b.human.mean_z, atol=1e-9)
        np.testing.assert_allclose(a.gt.angles, b.gt.angles, atol=1e-9)
        np.testing.assert_allclose(a.gt.pose.translation, b.gt.pose.translation, atol=1e-9)
        assert a.gt.hinge == b.gt.hinge


def test_gt_json_contents(samples, tmp_path):
    d = synth.write_sample(samples[0], tmp_path)
    gt = json.loads((d / "gt.json").read_text())
    assert len(gt["angles_deg"]) == 4
    assert np.linalg.norm(gt["motion"]["direction"]) == pytest.approx(1.0)
    meta = json.loads((d / "meta.json").read_text())
    assert meta["n_frames"] == 4 and meta["category"] == samples[0].category


def _broken(samples, tmp_path):
    write_dataset(samples[:1], tmp_path)
    return tmp_path / samples[0].video_id


def test_missing_camera_file(samples, tmp_path):
    d = _broken(samples, tmp_path)
    (d / "camera.json").unlink()
    with pytest.raises(DatasetError, match="camera.json"):
        read_sample(d)


def test_truncated_mask_names_frame(samples, tmp_path):
    d = _broken(samples, tmp_path)
    p = d / "masks" / "moving_0002.png"
    p.write_bytes(p.read_bytes()[:20])
    with pytest.raises(DatasetError, match="frame 2"):
        read_sample(d)


def test_missing_field_is_named(samples, tmp_path):
    d = _broken(samples, tmp_path)
    gt = json.loads((d / "gt.json").read_text())
    del gt["hinge"]
    (d / "gt.json").write_text(json.dumps(gt))
    with pytest.raises(DatasetError, match="gt.json.*hinge"):
        read_sample(d)


def test_human_record_count_checked(samples, tmp_path):
    d = _broken(samples, tmp_path)
    h = json.loads((d / "human.json").read_text())
    h["frames"] = h["frames"][:2]
    (d / "human.json").write_text(json.dumps(h))
    with pytest.raises(DatasetError, match="human.json"):
        read_sample(d)


def test_missing_dataset_directory(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        read_dataset(tmp_path / "nope")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_random_scenes_are_in_frame(small_camera, seed):
    s = gen_scene(SceneSpec(seed=seed, n_frames=3, camera=small_camera))
    assert s.masks["object"].sum(axis=(1, 2)).min() > 0
    # nothing touches the image border
    border = s.masks["object"][:, [0, -1], :].sum() + s.masks["object"][:, :, [0, -1]].sum()
    assert border == 0
