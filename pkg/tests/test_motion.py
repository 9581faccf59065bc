import json

import numpy as np
import pytest

from marionette import geom, motion
from marionette.model import (
    Body,
    FootSpec,
    HumanoidModel,
    Joint,
    forward_kinematics,
    mini_biped_model,
    reference_config,
)


def chain_model() -> HumanoidModel:
    """Floating-base 2-DoF arm whose keypoints fully determine the solve."""
    y = np.array([0.0, 1.0, 0.0])
    bodies = [
        Body("base", -1, np.zeros(3), -1, 2.0, np.zeros(3), np.array([0.02, 0.02, 0.02])),
        Body("link1", 0, np.array([0.0, 0.0, 0.2]), 0, 1.0, np.array([0.0, 0.0, 0.15]), np.array([0.01, 0.01, 0.001])),
        Body("link2", 1, np.array([0.0, 0.0, 0.3]), 1, 0.8, np.array([0.0, 0.0, 0.15]), np.array([0.01, 0.01, 0.001])),
        Body("hand", 2, np.array([0.0, 0.0, 0.3]), -1, 0.2, np.zeros(3), np.array([0.001, 0.001, 0.001])),
    ]
    joints = [
        Joint("shoulder", 1, y, (-2.4, 2.4), 12.0, 60.0, 40.0, 2.0),
        Joint("elbow", 2, y, (-2.4, 2.4), 12.0, 40.0, 30.0, 1.0),
    ]
    return HumanoidModel(
        name="chain",
        bodies=bodies,
        joints=joints,
        keypoints={"base": 0, "elbow": 2, "hand": 3},
        points3=["base", "elbow", "hand"],
        points8=["base", "elbow", "hand", "base", "elbow", "hand", "base", "hand"],
        upper_dofs=np.array([0, 1]),
        lower_dofs=np.array([], dtype=np.int64),
        feet=[],
        default_pose=np.array([0.3, -0.3]),
        default_root_height=0.5,
    )


def chain_track(model, T=24, fps=30.0):
    t = np.arange(T)
    dof = np.stack([
        0.5 + 0.4 * np.sin(2 * np.pi * t / T),
        -0.4 + 0.3 * np.cos(2 * np.pi * t / T),
    ], axis=-1)
    root_pos = np.stack([0.01 * t, 0.02 * np.sin(2 * np.pi * t / T), np.full(T, 0.5)], axis=-1)
    yaw = 0.4 + 0.2 * np.sin(2 * np.pi * t / T)
    root_quat = geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    pose = forward_kinematics(model, root_pos, root_quat, dof)
    names = ["base", "elbow", "hand"]
    pos = pose.pos[:, [model.keypoints[n] for n in names], :]
    track = motion.SourceKeypointTrack(fps=fps, names=names, pos=pos)
    return track, root_pos, yaw, dof


def wiggle_clip(model, T=30, fps=50.0, amp=0.1, tags=None):
    t = np.arange(T)
    span = model.joint_limit_hi - model.joint_limit_lo
    dof = model.default_pose + amp * np.minimum(span / 2, 1.0) * np.sin(
        2 * np.pi * t[:, None] / T + np.arange(model.dof_count)
    )
    dof = np.clip(dof, model.joint_limit_lo, model.joint_limit_hi)
    root_pos = np.stack([0.01 * t, np.zeros(T), np.full(T, model.default_root_height)], axis=-1)
    root_quat = geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.1 * np.sin(2 * np.pi * t / T))
    return motion.clip_from_kinematics(model, fps, root_pos, root_quat, dof, name="wiggle", tags=tags or [])


# ---- retargeting ----


def test_retarget_recovers_known_trajectory():
    model = chain_model()
    track, root_pos, yaw, dof = chain_track(model)
    clip = motion.retarget(model, track)
    assert clip.length == track.pos.shape[0]
    assert not clip.flags.any()
    assert np.max(clip.residuals) < 1e-3
    dof_rms = np.sqrt(np.mean((clip.dof_pos - dof) ** 2))
    assert dof_rms < 1e-3
    assert np.max(np.linalg.norm(clip.body_pos[:, 0, :] - root_pos, axis=-1)) < 1e-3
    yaw_err = geom.wrap_angle(geom.yaw_from_quat(clip.body_quat[:, 0, :]) - yaw)
    assert np.max(np.abs(yaw_err)) < 2e-3


def test_retarget_static_source_has_zero_velocity():
    model = chain_model()
    q = geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.3)
    pose = forward_kinematics(model, np.array([0.1, 0.0, 0.5]), q, np.array([0.6, -0.5]))
    pos = np.repeat(pose.pos[None, [0, 2, 3], :], 20, axis=0)
    clip = motion.retarget(model, motion.SourceKeypointTrack(fps=30.0, names=["base", "elbow", "hand"], pos=pos))
    assert not clip.flags.any()
    assert np.max(np.abs(clip.dof_vel)) < 1e-6
    assert np.max(np.abs(clip.body_lin_vel)) < 1e-6
    assert np.max(np.abs(clip.body_ang_vel)) < 1e-6


def test_retarget_flags_unreachable_frames():
    model = chain_model()
    track, _, _, _ = chain_track(model, T=16)
    pos = track.pos.copy()
    pos[8:, 1:, :] = np.array([5.0, 0.0, 0.5])  # beyond the 0.8 m reach
    clip = motion.retarget(model, motion.SourceKeypointTrack(fps=30.0, names=track.names, pos=pos))
    assert not clip.flags[:8].any()
    assert clip.flags[8:].all()
    assert np.min(clip.residuals[8:]) > motion.IkConfig().residual_cap


def test_retarget_rejects_unknown_keypoint():
    model = chain_model()
    with pytest.raises(KeyError):
        motion.retarget(model, motion.SourceKeypointTrack(fps=30.0, names=["nose"], pos=np.zeros((4, 1, 3))))


def test_retarget_respects_joint_limits():
    model = chain_model()
    track, _, _, _ = chain_track(model, T=10)
    pos = track.pos.copy()
    pos[:, 1:, :] = np.array([0.0, 0.0, -0.8])  # directly below base, forces big bend
    clip = motion.retarget(model, motion.SourceKeypointTrack(fps=30.0, names=track.names, pos=pos))
    assert (clip.dof_pos >= model.joint_limit_lo - 1e-12).all()
    assert (clip.dof_pos <= model.joint_limit_hi + 1e-12).all()


# ---- feasibility filter ----


def test_filter_keeps_clean_clip():
    model = mini_biped_model()
    clip = wiggle_clip(model, amp=0.05)
    kept, reasons = motion.filter_infeasible(clip, model)
    assert kept and reasons == []


def test_filter_rejects_joint_limit_violations():
    model = mini_biped_model()
    clip = wiggle_clip(model)
    bad = clip.dof_pos.copy()
    k = model.joint_index("left_knee")
    bad[::4, k] = model.joint_limit_hi[k] + 0.3  # 25% of frames outside
    clip2 = motion.clip_from_kinematics(model, clip.fps, clip.body_pos[:, 0], clip.body_quat[:, 0], bad, name="bad")
    kept, reasons = motion.filter_infeasible(clip2, model)
    assert not kept and "joint-limit" in reasons


def test_filter_rejects_velocity_spikes():
    model = mini_biped_model()
    clip = wiggle_clip(model)
    bad = clip.dof_pos.copy()
    a = model.joint_index("left_ankle")
    bad[:, a] = -0.5
    bad[15:, a] = 0.3  # 0.8 rad step at 50 fps: ~20 rad/s vs 12 rad/s limit
    clip2 = motion.clip_from_kinematics(model, clip.fps, clip.body_pos[:, 0], clip.body_quat[:, 0], bad, name="bad")
    kept, reasons = motion.filter_infeasible(clip2, model)
    assert not kept and "velocity" in reasons


def test_filter_rejects_root_speed():
    model = mini_biped_model()
    T = 30
    t = np.arange(T)
    root = np.stack([0.12 * t, np.zeros(T), np.full(T, model.default_root_height)], axis=-1)  # 6 m/s
    clip = motion.clip_from_kinematics(
        model, 50.0, root, geom.quat_identity((T,)), np.tile(model.default_pose, (T, 1)), name="sprint"
    )
    kept, reasons = motion.filter_infeasible(clip, model)
    assert not kept and "root-speed" in reasons


def test_filter_rejects_heavily_flagged_retarget():
    model = mini_biped_model()
    clip = wiggle_clip(model, amp=0.05)
    flags = np.zeros(clip.length, dtype=bool)
    flags[:: 4] = True
    clip2 = motion.clip_from_kinematics(
        model, clip.fps, clip.body_pos[:, 0], clip.body_quat[:, 0], clip.dof_pos, name="flagged", flags=flags
    )
    kept, reasons = motion.filter_infeasible(clip2, model)
    assert not kept and reasons == ["retarget-residual"]


# ---- stable variants ----


def sole_clearance(model, clip, frame):
    lowest = np.inf
    for foot in model.feet:
        world = clip.body_pos[frame, foot.body] + geom.quat_rotate(clip.body_quat[frame, foot.body], foot.points)
        lowest = min(lowest, float(world[:, 2].min()))
    return lowest


@pytest.mark.parametrize("lower", ["standing", "squatting"])
def test_stable_variant_freezes_root_and_feet(lower):
    model = mini_biped_model()
    clip = wiggle_clip(model, amp=0.3)
    var = motion.make_stable_variant(clip, model, lower)
    assert np.ptp(var.body_pos[:, 0, :], axis=0).max() == 0.0
    assert np.ptp(var.body_quat[:, 0, :], axis=0).max() == 0.0
    assert np.abs(var.dof_vel[:, model.lower_dofs]).max() == 0.0
    assert abs(sole_clearance(model, var, 0)) < 1e-6
    assert var.category() == ("stable-standing" if lower == "standing" else "stable-squat")


def test_stable_variant_squat_lowers_root():
    model = mini_biped_model()
    clip = wiggle_clip(model)
    stand = motion.make_stable_variant(clip, model, "standing")
    squat = motion.make_stable_variant(clip, model, "squatting")
    assert squat.body_pos[0, 0, 2] < stand.body_pos[0, 0, 2] - 0.05
    k = model.joint_index("left_knee")
    assert np.allclose(squat.dof_pos[:, k], 1.6)


def test_stable_variant_idempotent():
    model = mini_biped_model()
    clip = wiggle_clip(model, amp=0.3)
    once = motion.make_stable_variant(clip, model, "squatting")
    twice = motion.make_stable_variant(once, model, "squatting")
    assert twice.name == once.name and twice.tags == once.tags
    for field in ("body_pos", "body_quat", "body_lin_vel", "body_ang_vel", "dof_pos", "dof_vel"):
        assert np.allclose(getattr(twice, field), getattr(once, field), atol=1e-12), field


def test_stable_variant_is_noop_on_standing_clip():
    model = mini_biped_model()
    T = 20
    root = np.tile([0.3, -0.2, model.default_root_height], (T, 1))
    clip = motion.clip_from_kinematics(
        model, 50.0, root, geom.quat_identity((T,)), np.tile(model.default_pose, (T, 1)), name="idle"
    )
    var = motion.make_stable_variant(clip, model, "standing")
    assert np.allclose(var.body_pos, clip.body_pos, atol=1e-8)
    assert np.allclose(var.body_quat, clip.body_quat, atol=1e-8)
    assert np.allclose(var.dof_pos, clip.dof_pos, atol=1e-12)


def test_stable_variant_keeps_upper_body():
    model = reference_config()
    clip = wiggle_clip(model, T=25, amp=0.4)
    var = motion.make_stable_variant(clip, model, "standing")
    assert np.array_equal(var.dof_pos[:, model.upper_dofs], clip.dof_pos[:, model.upper_dofs])
    assert not np.allclose(var.dof_vel[:, model.upper_dofs], 0.0)


# ---- sampling ----


def test_sample_mix_frequencies():
    model = mini_biped_model()
    base = wiggle_clip(model, T=40)
    stand = motion.make_stable_variant(base, model, "standing")
    squat = motion.make_stable_variant(base, model, "squatting")
    dataset = [base, stand, squat]
    rng = np.random.default_rng(0)
    counts = {"original": 0, "stable-standing": 0, "stable-squat": 0}
    n = 100_000
    for _ in range(n):
        clip, start = motion.sample_training_clip(dataset, rng, min_horizon_frames=10)
        counts[clip.category()] += 1
        assert 0 <= start <= clip.length - 10
    assert abs(counts["original"] / n - 0.5) < 0.02
    assert abs(counts["stable-standing"] / n - 0.25) < 0.02
    assert abs(counts["stable-squat"] / n - 0.25) < 0.02


def test_sample_renormalizes_missing_categories():
    model = mini_biped_model()
    base = wiggle_clip(model, T=40)
    stand = motion.make_stable_variant(base, model, "standing")
    rng = np.random.default_rng(1)
    n = 30_000
    orig = sum(motion.sample_training_clip([base, stand], rng)[0].category() == "original" for _ in range(n))
    assert abs(orig / n - 2 / 3) < 0.02


# ---- file formats ----


def test_clip_file_roundtrip(tmp_path):
    model = mini_biped_model()
    clip = wiggle_clip(model, tags=["retargeted"])
    clip.flags[3] = True
    clip.residuals[3] = 0.12
    path = tmp_path / "clip.jsonl"
    motion.save_clip(clip, path)
    back = motion.load_clip(path)
    for field in ("body_pos", "body_quat", "body_lin_vel", "body_ang_vel", "dof_pos", "dof_vel", "flags", "residuals"):
        assert np.array_equal(getattr(back, field), getattr(clip, field)), field
    assert back.name == clip.name and back.tags == clip.tags
    assert back.fps == clip.fps and back.model_hash == model.hash()


def test_clip_file_version_rejected(tmp_path):
    model = mini_biped_model()
    clip = wiggle_clip(model)
    path = tmp_path / "clip.jsonl"
    motion.save_clip(clip, path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["clip_version"] = 99
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(ValueError, match="clip_version"):
        motion.load_clip(path)


def test_source_file_roundtrip(tmp_path):
    model = chain_model()
    track, _, _, _ = chain_track(model, T=8)
    path = tmp_path / "track.jsonl"
    motion.save_source(track, path)
    back = motion.load_source(path)
    assert back.fps == track.fps and back.names == track.names
    assert np.array_equal(back.pos, track.pos)


def test_resample_preserves_path():
    model = mini_biped_model()
    clip = wiggle_clip(model, T=30, fps=30.0)
    up = motion.resample_clip(clip, model, 50.0)
    assert up.fps == 50.0
    assert abs(up.duration - clip.duration) < 2 / 30.0
    # root x is linear in time in the source, so any resample must match it
    t_new = np.arange(up.length) / 50.0
    expect = np.interp(np.clip(t_new, 0, (clip.length - 1) / 30.0), np.arange(30) / 30.0, clip.body_pos[:, 0, 0])
    assert np.allclose(up.body_pos[:, 0, 0], expect, atol=1e-9)


def test_frame_accessor_clamps():
    model = mini_biped_model()
    clip = wiggle_clip(model, T=10)
    assert np.array_equal(clip.frame(-5).body_pos, clip.body_pos[0])
    assert np.array_equal(clip.frame(999).dof_pos, clip.dof_pos[-1])
    f = clip.frame(4)
    assert np.array_equal(f.root_pos, clip.body_pos[4, 0])
    assert np.array_equal(f.root_quat, clip.body_quat[4, 0])
