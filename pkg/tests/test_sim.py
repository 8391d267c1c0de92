import numpy as np
import pytest

from sct.errors import ValidationError
from sct.loop import LoopConfig, OUTCOME_SUCCESS, OUTCOME_TIMEOUT, run_episode
from sct.memory import Action, MemoryStore
from sct.sim import (
    ScriptedPolicy,
    SimEnvironment,
    make_task,
    render,
    step,
    write_pgm,
)


def zero_action():
    return Action(np.zeros(7))


def fresh_store(config):
    return MemoryStore(
        feature_dim=config.feature_dim,
        image_shape=(config.termination.resolution[1], config.termination.resolution[0]),
    )


class TestStep:
    def test_zero_action_fixed_point(self):
        world, _ = make_task("object", 0)
        frame0 = render(world)
        new_world, frame1, pose, flags = step(world, zero_action())
        assert np.array_equal(new_world.gripper.position, world.gripper.position)
        assert np.array_equal(frame0, frame1)
        assert not flags.success and not flags.grasp_phase

    def test_grasp_rule(self):
        world, _ = make_task("object", 0)
        import dataclasses
        from sct.geometry import Pose
        at_object = dataclasses.replace(
            world, gripper=Pose(world.object_positions[0], np.array([1.0, 0, 0, 0]))
        )
        grip = Action(np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]))
        new_world, _, _, flags = step(at_object, grip)
        assert new_world.held == 0
        assert flags.grasp_phase

    def test_held_object_tracks_gripper(self):
        world, _ = make_task("object", 0)
        import dataclasses
        from sct.geometry import Pose
        w = dataclasses.replace(
            world, gripper=Pose(world.object_positions[0], np.array([1.0, 0, 0, 0]))
        )
        w, _, _, _ = step(w, Action(np.array([0, 0, 0, 0, 0, 0, 1.0])))
        for _ in range(5):
            w, _, _, _ = step(w, Action(np.array([0.5, -0.25, 0.0, 0, 0, 0, 1.0])))
            assert np.array_equal(w.object_positions[0], w.gripper.position)

    def test_release_drops_in_place(self):
        world, _ = make_task("object", 0)
        import dataclasses
        from sct.geometry import Pose
        w = dataclasses.replace(
            world, gripper=Pose(world.object_positions[0], np.array([1.0, 0, 0, 0]))
        )
        w, _, _, _ = step(w, Action(np.array([0, 0, 0, 0, 0, 0, 1.0])))
        w, _, _, _ = step(w, Action(np.array([0, 0, 0, 0, 0, 0, -1.0])))
        assert w.held is None
        pos_after_release = w.object_positions[0].copy()
        w, _, _, _ = step(w, Action(np.array([1.0, 0, 0, 0, 0, 0, -1.0])))
        assert np.array_equal(w.object_positions[0], pos_after_release)

    def test_success_requires_settling(self):
        world, _ = make_task("object", 0)
        import dataclasses
        from sct.geometry import Pose
        w = dataclasses.replace(
            world,
            object_positions=(world.goal_position.copy(),),
            gripper=Pose(world.goal_position + np.array([0.08, 0.0, 0.0]), np.array([1.0, 0, 0, 0])),
        )
        flags_seen = []
        for _ in range(world.settle_steps + 1):
            w, _, _, flags = step(w, zero_action())
            flags_seen.append((flags.goal_reached, flags.success))
        assert all(goal for goal, _ in flags_seen)
        assert [s for _, s in flags_seen] == [False] * (world.settle_steps - 1) + [True, True]

    def test_determinism_bytes(self):
        rng = np.random.default_rng(0)
        actions = [Action(rng.uniform(-1, 1, 7)) for _ in range(30)]
        frames = []
        for _ in range(2):
            w, _ = make_task("object:biased", 11)
            chunks = []
            for a in actions:
                w, obs, _, _ = step(w, a)
                chunks.append(obs.tobytes())
            frames.append(b"".join(chunks))
        assert frames[0] == frames[1]


class TestMakeTask:
    def test_same_seed_same_world(self):
        w1, _ = make_task("spatial:clean", 9)
        w2, _ = make_task("spatial:clean", 9)
        assert np.array_equal(w1.object_positions[0], w2.object_positions[0])
        assert np.array_equal(w1.goal_position, w2.goal_position)

    def test_worlds_shared_across_policy_kinds(self):
        w1, _ = make_task("object:clean", 4)
        w2, _ = make_task("object:biased", 4)
        assert np.array_equal(w1.object_positions[0], w2.object_positions[0])

    def test_unknown_task_rejected(self):
        with pytest.raises(ValidationError):
            make_task("warehouse", 0)
        with pytest.raises(ValidationError):
            make_task("object:psychic", 0)

    def test_all_families_instantiate(self):
        for family in ("goal", "object", "spatial", "long"):
            world, policy = make_task(family, 3)
            assert isinstance(policy, ScriptedPolicy)
            if family == "long":
                assert len(world.object_positions) == 2

    def test_clean_policy_golden_success(self):
        config = LoopConfig(max_steps=120, correction_enabled=False, termination_enabled=False)
        world, policy = make_task("object:clean", 0)
        assert world.grasp_tolerance == 0.02 and world.place_tolerance == 0.03
        trace = run_episode(policy, SimEnvironment(world), fresh_store(config), config, seed=0)
        assert trace.outcome == OUTCOME_SUCCESS
        assert len(trace.steps) <= 40

    def test_biased_mostly_fails_baseline(self):
        config = LoopConfig(max_steps=120, correction_enabled=False, termination_enabled=False)
        failures = 0
        for seed in range(100):
            world, policy = make_task("object:biased", seed)
            trace = run_episode(
                policy, SimEnvironment(world), fresh_store(config), config, seed=seed
            )
            failures += trace.outcome != OUTCOME_SUCCESS
        assert failures >= 60

    def test_biased_failure_is_recoverable(self):
        # the clean policy solves every biased world: the defect is in the
        # policy, not the task
        config = LoopConfig(max_steps=120, correction_enabled=False, termination_enabled=False)
        for seed in range(0, 100, 7):
            world, _ = make_task("object:biased", seed)
            _, clean_policy = make_task("object:clean", seed)
            trace = run_episode(
                clean_policy, SimEnvironment(world), fresh_store(config), config, seed=seed
            )
            assert trace.outcome == OUTCOME_SUCCESS

    def test_non_terminating_times_out(self):
        config = LoopConfig(max_steps=120, correction_enabled=False, termination_enabled=False)
        for seed in (0, 1):
            world, policy = make_task("object:non_terminating", seed)
            trace = run_episode(
                policy, SimEnvironment(world), fresh_store(config), config, seed=seed
            )
            assert trace.outcome == OUTCOME_TIMEOUT
            assert len(trace.steps) == 120

    def test_long_family_clean_succeeds(self):
        config = LoopConfig(max_steps=200, correction_enabled=False, termination_enabled=False)
        world, policy = make_task("long:clean", 2)
        trace = run_episode(policy, SimEnvironment(world), fresh_store(config), config, seed=2)
        assert trace.outcome == OUTCOME_SUCCESS


class TestRender:
    def test_frame_bounds(self):
        world, _ = make_task("long", 1)
        frame = render(world)
        assert frame.shape == (64, 64)
        assert frame.min() >= 0.0 and frame.max() <= 1.0

    def test_pgm_export(self, tmp_path):
        world, _ = make_task("object", 0)
        path = tmp_path / "frame.pgm"
        write_pgm(render(world), path)
        data = path.read_bytes()
        assert data.startswith(b"P5\n64 64\n255\n")
        assert len(data) == len(b"P5\n64 64\n255\n") + 64 * 64
