import numpy as np
import pytest

from marionette import geom

from marionette import randomize
from marionette.model import mini_biped_model, toy_arm_model
from marionette.motion import MotionGoalFrame
from marionette.sim import Simulator


def test_draws_within_ranges_and_uniform_moments():
    ranges = randomize.RandomizationRanges()
    rng = np.random.default_rng(0)
    n = 100_000
    frictions = np.empty(n)
    for i in range(n):
        ep = randomize.sample_episode(ranges, rng)
        frictions[i] = ep.friction
        if i < 2_000:  # full-field range audit on a large subsample
            assert 0.2 <= ep.friction <= 1.1
            assert np.all(ep.base_com_offset >= -0.1) and np.all(ep.base_com_offset <= 0.1)
            assert 0.7 <= ep.link_mass_scale <= 1.3
            assert 0.75 <= ep.kp_scale <= 1.25
            assert 0.75 <= ep.kd_scale <= 1.25
            assert 20.0 <= ep.delay_ms <= 60.0
            assert 1 <= ep.delay_ticks <= 3
            assert -0.02 <= ep.ref_offset[0] <= 0.02
            assert -0.02 <= ep.ref_offset[1] <= 0.02
            assert -0.1 <= ep.ref_offset[2] <= 0.1
            assert ep.terrain in randomize.TERRAINS
            assert ep.rfi_scale == 0.1
    assert frictions.min() >= 0.2 and frictions.max() <= 1.1
    assert abs(frictions.mean() - 0.65) < 0.01


def test_collapsed_ranges_are_deterministic():
    ranges = randomize.RandomizationRanges.none()
    for seed in (1, 2):
        ep = randomize.sample_episode(ranges, np.random.default_rng(seed))
        assert ep.friction == 0.8
        assert np.all(ep.base_com_offset == 0.0)
        assert ep.link_mass_scale == 1.0 and ep.kp_scale == 1.0 and ep.kd_scale == 1.0
        assert ep.delay_ms == 0.0 and ep.delay_ticks == 0
        assert np.all(ep.ref_offset == 0.0)
        assert ep.terrain == "flat" and not ep.push_enabled and ep.rfi_scale == 0.0


def test_same_seed_reproduces_samples():
    ranges = randomize.RandomizationRanges()
    a = [randomize.sample_episode(ranges, np.random.default_rng(42)) for _ in range(1)][0]
    b = randomize.sample_episode(ranges, np.random.default_rng(42))
    assert a.as_dict() == b.as_dict()


def test_zero_randomization_matches_baseline_bitwise():
    model = mini_biped_model()
    ep = randomize.sample_episode(randomize.RandomizationRanges.none(), np.random.default_rng(3))
    sim_a = Simulator(model)
    sim_b = randomize.make_sim(model, ep)
    sa = sim_a.make_state(np.array([0.0, 0.0, model.default_root_height]), geom.quat_identity(), model.default_pose)
    sb = sim_b.make_state(np.array([0.0, 0.0, model.default_root_height]), geom.quat_identity(), model.default_pose)
    rng = np.random.default_rng(5)
    for _ in range(50):
        act = model.default_pose + rng.normal(0, 0.05, model.dof_count)
        sa = sim_a.step(sa, act)
        sb = sim_b.step(sb, act)
    assert np.array_equal(sa.root_pos, sb.root_pos)
    assert np.array_equal(sa.dof_pos, sb.dof_pos)
    assert np.array_equal(sa.foot_force, sb.foot_force)


def test_gain_scales_applied_to_sim():
    model = mini_biped_model()
    ranges = randomize.RandomizationRanges.none()
    ranges = randomize.RandomizationRanges(
        **{**{f: getattr(ranges, f) for f in (
            "friction", "base_com_offset", "link_mass_scale", "control_delay_ms",
            "ref_offset_xy", "ref_offset_z", "terrains")},
           "kp_scale": (1.25, 1.25), "kd_scale": (0.75, 0.75), "rfi_scale": 0.0, "push_enabled": False}
    )
    ep = randomize.sample_episode(ranges, np.random.default_rng(0))
    sim = randomize.make_sim(model, ep)
    assert np.allclose(sim.kp, 1.25 * model.kp)
    assert np.allclose(sim.kd, 0.75 * model.kd)


def test_mass_scale_and_com_offset_applied():
    model = mini_biped_model()
    ep = randomize.sample_episode(randomize.RandomizationRanges(), np.random.default_rng(9))
    sim = randomize.make_sim(model, ep)
    assert np.allclose(sim.body_mass, model.body_mass * ep.link_mass_scale)
    assert np.allclose(sim.body_com[0], model.body_com[0] + ep.base_com_offset)
    assert np.allclose(sim.body_com[1:], model.body_com[1:])


@pytest.mark.parametrize("ms,ticks", [(20, 1), (29, 1), (31, 2), (40, 2), (60, 3)])
def test_delay_rounds_to_nearest_tick(ms, ticks):
    ranges = randomize.RandomizationRanges(control_delay_ms=(ms, ms))
    ep = randomize.sample_episode(ranges, np.random.default_rng(0))
    assert ep.delay_ticks == ticks
    sim = randomize.make_sim(mini_biped_model(), ep)
    assert len(sim._delay_queue) == ticks


def test_rfi_bounded_over_rollout():
    model = toy_arm_model()
    ranges = randomize.RandomizationRanges(terrains=("flat",), push_enabled=False,
                                           control_delay_ms=(0.0, 0.0))
    ep = randomize.sample_episode(ranges, np.random.default_rng(11))
    sim = randomize.make_sim(model, ep)
    st = sim.make_state(np.zeros(3), geom.quat_identity(), np.zeros(2))
    bound = 0.1 * model.torque_limit
    rng = np.random.default_rng(12)
    peak = np.zeros(2)
    for _ in range(2000):
        st = sim.step(st, rng.uniform(-1, 1, 2))
        assert np.all(np.abs(st.rfi) <= bound)
        peak = np.maximum(peak, np.abs(st.rfi))
    assert np.all(peak > 0.9 * bound)  # noise actually spans the range


def test_offset_reference_shifts_positions_only():
    model = mini_biped_model()
    rng = np.random.default_rng(4)
    pos = rng.normal(0, 1, (model.body_count, 3))
    frame = MotionGoalFrame(
        body_pos=pos,
        body_quat=np.tile([1.0, 0, 0, 0], (model.body_count, 1)),
        body_lin_vel=np.zeros((model.body_count, 3)),
        body_ang_vel=np.zeros((model.body_count, 3)),
        dof_pos=np.zeros(model.dof_count),
        dof_vel=np.zeros(model.dof_count),
    )
    ep = randomize.sample_episode(randomize.RandomizationRanges(), np.random.default_rng(6))
    out = randomize.offset_reference(ep, frame)
    assert np.allclose(out.body_pos, frame.body_pos + ep.ref_offset)
    assert np.array_equal(out.body_quat, frame.body_quat)
    assert np.array_equal(out.dof_pos, frame.dof_pos)
    ep0 = randomize.sample_episode(randomize.RandomizationRanges.none(), np.random.default_rng(7))
    same = randomize.offset_reference(ep0, frame)
    assert np.array_equal(same.body_pos, frame.body_pos)


def test_offsets_never_collide_across_episodes():
    ranges = randomize.RandomizationRanges()
    rng = np.random.default_rng(8)
    seen = set()
    for _ in range(1000):
        ep = randomize.sample_episode(ranges, rng)
        key = tuple(ep.ref_offset.tolist())
        assert key not in seen
        seen.add(key)


def test_push_scheduler_armed():
    model = mini_biped_model()
    ep = randomize.sample_episode(randomize.RandomizationRanges(), np.random.default_rng(10))
    sim = randomize.make_sim(model, ep)
    assert sim.perturbation is not None
    assert sim.perturbation.interval == 5.0 and sim.perturbation.vel_xy == 1.0
    ep_off = randomize.sample_episode(randomize.RandomizationRanges.none(), np.random.default_rng(10))
    assert randomize.make_sim(model, ep_off).perturbation is None


def test_range_validation():
    with pytest.raises(ValueError):
        randomize.RandomizationRanges(friction=(1.2, 0.2))
    with pytest.raises(ValueError):
        randomize.RandomizationRanges(terrains=("flat", "lava"))
    with pytest.raises(ValueError):
        randomize.RandomizationRanges(rfi_scale=-0.1)


def test_randomized_terrain_episode_runs():
    model = mini_biped_model()
    ranges = randomize.RandomizationRanges(terrains=("rough",), control_delay_ms=(20.0, 20.0))
    ep = randomize.sample_episode(ranges, np.random.default_rng(13))
    sim = randomize.make_sim(model, ep)
    ground = sim.terrain.height(0.0, 0.0)
    st = sim.make_state(np.array([0.0, 0.0, model.default_root_height + ground + 0.01]),
                        geom.quat_identity(), model.default_pose)
    for _ in range(25):
        st = sim.step(st, model.default_pose)
    assert not st.fault
