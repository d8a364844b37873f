import json
import shutil

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nerfaug import scene as S
from nerfaug.field import VoxelRadianceField
from nerfaug.geometry import PinholeCamera, Se3Pose
from nerfaug.pipeline import (AugmentConfig, FrameCountError, MissingFileError, NoiseConfig, SchemaVersionError,
                              Step, Trajectory, TrajectoryError, area_resize, augment_trajectory, detect_t_grasp,
                              evaluate_augmentation, noisy_camera_to_object, read_trajectory, write_trajectory)
from nerfaug.render import RenderConfig
from oracles import voxelize

CAM = PinholeCamera.from_fov(64, 64, 60)
FAST = RenderConfig(samples_per_ray=48)


def object_field(preset="workspace-novel", res=32, h=0.07):
    obj = S.preset(preset).only(S.OBJECT)
    prims = [(p.shape, p.params, p.rgb) for p in obj.primitives]
    d, c = voxelize(prims, (-h,) * 3, (h,) * 3, (res,) * 3)
    c[:] = c[d > 0][0]  # one colour everywhere so edges do not blend towards grey
    return VoxelRadianceField((res,) * 3, (-h,) * 3, (h,) * 3, d, c)


def background_field(res=(64, 64, 12)):
    bg = S.preset("workspace").without(S.OBJECT)
    prims = [(p.shape, p.params, p.rgb) for p in bg.primitives]
    lo, hi = (-0.6, -0.6, -0.05), (0.6, 0.6, 0.17)
    d, c = voxelize(prims, lo, hi, res)
    return VoxelRadianceField(res, lo, hi, d, c)


@pytest.fixture(scope="module")
def demo():
    return S.generate_demo_trajectory(S.preset("workspace"), S.default_demo_spec(), CAM)


@pytest.fixture(scope="module")
def fields():
    return object_field(), background_field()


def cfg(**kw):
    base = dict(render=FAST, background_render=FAST, output_size=None)
    base.update(kw)
    return AugmentConfig(**base)


# --- data model ----------------------------------------------------------------

def test_trajectory_validation(demo):
    steps = demo.steps
    with pytest.raises(TrajectoryError):
        Trajectory(CAM, demo.camera_offset, demo.object_to_world, 0, steps[:1])
    with pytest.raises(TrajectoryError):
        Trajectory(CAM, demo.camera_offset, demo.object_to_world, len(steps), steps)
    bad = [Step(np.zeros((8, 8, 3)), s.gripper_pose, s.action) for s in steps]
    with pytest.raises(TrajectoryError):
        Trajectory(CAM, demo.camera_offset, demo.object_to_world, 1, bad)


def test_detect_t_grasp():
    acts = np.zeros((6, 7))
    acts[3:, 6] = 0.8
    assert detect_t_grasp(acts) == 3
    with pytest.raises(TrajectoryError):
        detect_t_grasp(np.zeros((3, 7)))


# --- I/O -----------------------------------------------------------------------

def test_round_trip(demo, tmp_path):
    write_trajectory(demo, tmp_path / "d")
    back = read_trajectory(tmp_path / "d")
    assert back.cam == demo.cam and back.t_grasp == demo.t_grasp and len(back) == len(demo)
    assert back.camera_offset == demo.camera_offset and back.object_to_world == demo.object_to_world
    assert back.actions.tobytes() == demo.actions.tobytes()
    for a, b in zip(demo.steps, back.steps):
        assert a.gripper_pose == b.gripper_pose
        assert np.max(np.abs(a.frame - b.frame)) <= 0.5 / 255 + 1e-12
        assert np.array_equal(a.mask, b.mask)


def test_layout(demo, tmp_path):
    write_trajectory(demo, tmp_path / "d")
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["schema_version"] == 1 and meta["n_steps"] == len(demo)
    assert len(meta["camera_offset"]) == 16 and len(meta["object_to_world"]) == 16
    head = (tmp_path / "d" / "actions.csv").read_text().splitlines()[0]
    assert head == "t,dx,dy,dz,droll,dpitch,dyaw,grip"
    poses = json.loads((tmp_path / "d" / "poses.json").read_text())["frames"]
    assert poses[3]["index"] == 3 and len(poses[3]["gripper_to_world"]) == 16
    assert (tmp_path / "d" / "frames" / "000000.png").exists()
    assert (tmp_path / "d" / "masks" / "000024.png").exists()


def short(demo, n=10):
    return Trajectory(demo.cam, demo.camera_offset, demo.object_to_world, 2, demo.steps[:n])


def test_missing_frame_named(demo, tmp_path):
    write_trajectory(short(demo), tmp_path / "d")
    (tmp_path / "d" / "frames" / "000006.png").unlink()
    with pytest.raises(FrameCountError, match="6"):
        read_trajectory(tmp_path / "d")


def test_unknown_schema(demo, tmp_path):
    write_trajectory(short(demo), tmp_path / "d")
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    meta["schema_version"] = 2
    (tmp_path / "d" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(SchemaVersionError):
        read_trajectory(tmp_path / "d")


def test_missing_files(demo, tmp_path):
    write_trajectory(short(demo), tmp_path / "d")
    shutil.copytree(tmp_path / "d", tmp_path / "e")
    (tmp_path / "d" / "actions.csv").unlink()
    with pytest.raises(MissingFileError):
        read_trajectory(tmp_path / "d")
    (tmp_path / "e" / "masks" / "000002.png").unlink()
    with pytest.raises(MissingFileError, match="000002"):
        read_trajectory(tmp_path / "e")


def test_action_row_count(demo, tmp_path):
    write_trajectory(short(demo), tmp_path / "d")
    lines = (tmp_path / "d" / "actions.csv").read_text().splitlines()
    (tmp_path / "d" / "actions.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FrameCountError):
        read_trajectory(tmp_path / "d")


# --- augmentation --------------------------------------------------------------

@pytest.fixture(scope="module")
def augmented(demo, fields):
    results = []
    out = augment_trajectory(demo, *fields, cfg(), results=results)
    return out, results


def test_preserves_everything_but_frames(demo, augmented):
    out, _ = augmented
    assert len(out) == len(demo) and out.cam == demo.cam and out.t_grasp == demo.t_grasp
    assert out.actions.tobytes() == demo.actions.tobytes()
    assert all(a.gripper_pose == b.gripper_pose for a, b in zip(out.steps, demo.steps))


def test_background_bit_identical(demo, augmented):
    out, results = augmented
    for src, dst, r in zip(demo.steps, out.steps, results):
        outside = (r.original_mask == 0) & (r.m_nerf == 0)
        assert outside.sum() > 0.5 * outside.size
        assert dst.frame[outside].tobytes() == src.frame[outside].tobytes()


def test_novel_object_is_pasted(augmented):
    out, results = augmented
    blue = np.array(S.preset("workspace-novel").only(S.OBJECT).primitives[0].rgb)
    for step, r in zip(out.steps, results):
        m = r.m_nerf > 0
        assert m.any()
        assert np.max(np.abs(step.frame[m].mean(axis=0) - blue)) < 0.1


def test_post_grasp_mask_frozen(demo, augmented):
    _, results = augmented
    ref = results[demo.t_grasp].m_nerf
    assert all(np.array_equal(r.m_nerf, ref) for r in results[demo.t_grasp:])


def test_deterministic_across_runs_and_threads(demo, fields):
    a = augment_trajectory(demo, *fields, cfg(threads=1))
    b = augment_trajectory(demo, *fields, cfg(threads=8))
    assert all(x.frame.tobytes() == y.frame.tobytes() for x, y in zip(a.steps, b.steps))


def test_segmentation_path(demo, fields):
    results = []
    short_demo = Trajectory(demo.cam, demo.camera_offset, demo.object_to_world, 2,
                            [Step(s.frame, s.gripper_pose, s.action) for s in demo.steps[:4]])
    augment_trajectory(short_demo, *fields, cfg(use_ground_truth_masks=False), results=results)
    for s, r in zip(demo.steps, results):
        # the dilated mask must cover the true object; the coarse background field adds some slack
        assert np.all(r.original_mask[s.mask > 0] == 1)


def test_output_resize(demo, fields):
    small = Trajectory(demo.cam, demo.camera_offset, demo.object_to_world, 1, demo.steps[:3])
    out = augment_trajectory(small, *fields, cfg(output_size=(32, 32)))
    assert out.steps[0].frame.shape == (32, 32, 3) and out.cam.width == 32
    assert out.actions.tobytes() == small.actions.tobytes()


def test_noise_modes(demo):
    off = NoiseConfig()
    base = noisy_camera_to_object(demo, off)
    per_traj = noisy_camera_to_object(demo, NoiseConfig("per-trajectory", 0.05, 0.005, 3))
    per_step = noisy_camera_to_object(demo, NoiseConfig("per-timestep", 0.05, 0.005, 3))
    tg = demo.t_grasp
    for t in range(tg):
        assert per_traj[t] == base[t] and per_step[t] == base[t]
    assert all(per_traj[t] == per_traj[tg] for t in range(tg, len(demo)))
    assert per_traj[tg] != base[tg]
    assert len({tuple(per_step[t].to_list()) for t in range(tg, len(demo))}) == len(demo) - tg
    again = noisy_camera_to_object(demo, NoiseConfig("per-timestep", 0.05, 0.005, 3))
    assert all(a == b for a, b in zip(per_step, again))
    with pytest.raises(ValueError):
        NoiseConfig("sometimes")


# --- evaluation ----------------------------------------------------------------

def test_evaluate_examples(demo):
    rep = evaluate_augmentation(demo, demo)
    assert all(f["psnr_db"] == 99.0 for f in rep["frames"]) and rep["mean_iou"] == 1.0
    steps = [Step(np.clip(s.frame, 0, 0.9) + 0.1, s.gripper_pose, s.action, 1 - s.mask) for s in demo.steps]
    ref = [Step(np.clip(s.frame, 0, 0.9), s.gripper_pose, s.action, s.mask) for s in demo.steps]
    shifted = Trajectory(demo.cam, demo.camera_offset, demo.object_to_world, demo.t_grasp, steps)
    base = Trajectory(demo.cam, demo.camera_offset, demo.object_to_world, demo.t_grasp, ref)
    rep = evaluate_augmentation(shifted, base)
    assert all(abs(f["psnr_db"] - 20.0) < 1e-9 for f in rep["frames"])
    assert all(f["iou"] == 0.0 for f in rep["frames"])
    with pytest.raises(TrajectoryError):
        evaluate_augmentation(short(demo), demo)


# --- resize --------------------------------------------------------------------

@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 100))
def test_area_resize_integer_factor(fy, fx, seed):
    img = np.random.default_rng(seed).uniform(size=(3 * fy, 2 * fx, 3))
    out = area_resize(img, 2, 3)
    oracle = img.reshape(3, fy, 2, fx, 3).mean(axis=(1, 3))
    assert np.allclose(out, oracle, atol=1e-12)


@given(st.integers(1, 20), st.integers(1, 20))
def test_area_resize_preserves_constants(w, h):
    img = np.full((7, 11, 3), 0.37)
    assert np.allclose(area_resize(img, w, h), 0.37, atol=1e-12)
