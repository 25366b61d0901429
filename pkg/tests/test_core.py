import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import IdentityEnv, LinearMapEnv, ZeroPolicy, synth_dataset
from shortlong.core import (
    PolicyDataset,
    PolicyRecord,
    SimulationError,
    Trajectory,
    featurize_short,
    load_dataset,
    policy_value_mc,
    return_of,
    rollout,
    rollout_many,
    save_dataset,
)
from shortlong.envs.kidney import KidneyEnv, kidney_initial_states
from shortlong.policygen import FixedActionPolicy


def _traj(L=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(rng.normal(size=(L + 1, d)), rng.normal(size=(L, 1)), rng.normal(size=L + 1))


class TestTrajectory:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Trajectory(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(4))  # needs 4 states
        with pytest.raises(ValueError):
            Trajectory(np.zeros((4, 2)), np.zeros((3, 1)), np.zeros(3))  # needs 4 rewards
        with pytest.raises(ValueError):
            Trajectory(np.zeros((1, 2)), np.zeros((0, 1)), np.zeros(1))  # zero transitions

    def test_length_and_prefix(self):
        t = _traj(L=5)
        assert t.length == 5
        p = t.prefix(2)
        assert p.length == 2
        assert np.array_equal(p.states, t.states[:3])
        assert np.array_equal(p.actions, t.actions[:2])
        assert np.array_equal(p.rewards, t.rewards[:3])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(-3, 9))
    def test_prefix_bounds(self, ell):
        t = _traj(L=5)
        if 1 <= ell <= 5:
            assert t.prefix(ell).length == ell
        else:
            with pytest.raises(ValueError):
                t.prefix(ell)


class TestReturnOf:
    def test_zero_rewards(self):
        t = Trajectory(np.zeros((4, 1)), np.zeros((3, 1)), np.array([0.0, 0, 0, 0]))
        assert return_of(t) == 0.0

    def test_arithmetic(self):
        t = Trajectory(np.zeros((3, 1)), np.zeros((2, 1)), np.array([1.0, 2.0, 3.0]))
        assert return_of(t) == 6.0

    def test_matches_env_reward_rederivation(self):
        # the stored rewards are exactly the env reward evaluated at each state
        env = LinearMapEnv(np.array([[0.9, 0.1], [0.0, 0.8]]))
        t = rollout(env, ZeroPolicy(), np.array([1.0, 2.0]), horizon=6, seed=3)
        assert return_of(t) == pytest.approx(float(np.sum(env.reward(t.states))), abs=0)

    def test_kidney_return_bounded_by_reward_count(self):
        env = KidneyEnv()
        start = kidney_initial_states(1, seed=0)[0]
        t = rollout(env, FixedActionPolicy([0.5]), start, horizon=30, seed=1)
        assert t.rewards.shape == (31,)
        assert np.all(t.rewards <= 1.0)
        assert return_of(t) <= 31.0


class TestRollout:
    def test_identity_env_states_constant(self):
        env = IdentityEnv(state_dim=2)
        start = np.array([0.3, -1.2])
        t = rollout(env, ZeroPolicy(), start, horizon=3, seed=0)
        assert np.array_equal(t.states, np.tile(start, (4, 1)))

    def test_bit_identical_reruns(self):
        env = KidneyEnv()
        start = kidney_initial_states(1, seed=2)[0]
        a = rollout(env, FixedActionPolicy([0.4]), start, horizon=10, seed=9)
        b = rollout(env, FixedActionPolicy([0.4]), start, horizon=10, seed=9)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.rewards, b.rewards)

    def test_batched_equals_serial(self):
        # per-row streams are keyed by tag, so batching cannot change results
        env = KidneyEnv()
        starts = kidney_initial_states(3, seed=5)
        pol = FixedActionPolicy([0.6])
        batched = rollout_many(env, pol, starts, horizon=8, seed=4)
        for i, t in enumerate(batched):
            single = rollout(env, pol, starts[i], horizon=8, seed=4, row_tag=i)
            assert np.array_equal(t.states, single.states)
            assert np.array_equal(t.actions, single.actions)

    def test_nonfinite_state_aborts_with_step_index(self):
        env = LinearMapEnv(np.array([[1e200]]))
        with pytest.raises(SimulationError, match="step"):
            rollout(env, ZeroPolicy(), np.array([1.0]), horizon=5, seed=0)


class TestPolicyValueMc:
    def test_deterministic_env_collapses_the_mean(self):
        env = LinearMapEnv(np.array([[0.95, 0.0], [0.1, 0.9]]), horizon=7)
        pol = ZeroPolicy()
        starts = np.array([[1.0, 0.5], [-0.2, 2.0], [0.0, 1.0]])
        v = policy_value_mc(env, pol, starts, n_rollouts=5, horizon=7, seed=0)
        singles = [return_of(rollout(env, pol, s, 7, seed=0)) for s in starts]
        assert v == pytest.approx(float(np.mean(singles)), rel=1e-15)

    def test_constant_reward_counts_every_visited_state(self):
        env = IdentityEnv(state_dim=1, horizon=30)
        v = policy_value_mc(env, ZeroPolicy(), np.array([[0.0]]), n_rollouts=1, horizon=30, seed=0)
        assert v == 31.0

    def test_averaging_rollouts_shrinks_the_sem(self):
        # sd over seeds should drop by about sqrt(30) when averaging 30 rollouts
        env = KidneyEnv()
        start = kidney_initial_states(1, seed=7)
        pol = FixedActionPolicy([0.3])
        one = [policy_value_mc(env, pol, start, 1, 30, seed=s) for s in range(12)]
        many = [policy_value_mc(env, pol, start, 30, 30, seed=s) for s in range(12)]
        sd_one, sd_many = np.std(one), np.std(many)
        assert sd_many < sd_one / 2.5
        assert sd_many > 0

    def test_rejects_zero_rollouts(self):
        with pytest.raises(ValueError):
            policy_value_mc(IdentityEnv(), ZeroPolicy(), np.zeros((1, 2)), 0, 3, 0)


class TestFeaturizeShort:
    def test_length_single_rollout(self):
        rec = PolicyRecord("p", [_traj(L=3, d=2)])
        assert featurize_short(rec, 1).shape == (6,)  # 2 states of dim 2 plus 2 rewards

    def test_length_kidney_shape(self):
        # 30 rollouts, d=5, ell=3, rewards included: 30 * (4*5 + 4) = 720
        rec = PolicyRecord("p", [_traj(L=3, d=5, seed=i) for i in range(30)])
        assert featurize_short(rec, 3).shape == (720,)

    def test_exclude_rewards_drops_exactly(self):
        rec = PolicyRecord("p", [_traj(L=4, d=3, seed=i) for i in range(7)])
        ell = 2
        with_r = featurize_short(rec, ell, include_rewards=True)
        without = featurize_short(rec, ell, include_rewards=False)
        assert len(with_r) - len(without) == (ell + 1) * 7

    def test_rollout_major_time_minor_order(self):
        t1 = Trajectory([[1.0], [2.0], [3.0]], [[0.0], [0.0]], [10.0, 20.0, 30.0])
        t2 = Trajectory([[4.0], [5.0], [6.0]], [[0.0], [0.0]], [40.0, 50.0, 60.0])
        vec = featurize_short(PolicyRecord("p", [t1, t2]), 2)
        assert np.array_equal(vec, [1, 2, 3, 10, 20, 30, 4, 5, 6, 40, 50, 60])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.booleans())
    def test_injective_on_prefixes(self, seed, include_rewards):
        # perturbing any single covered entry must change the vector
        rng = np.random.default_rng(seed)
        rec = PolicyRecord("p", [_traj(L=3, d=2, seed=seed), _traj(L=3, d=2, seed=seed + 1)])
        ell = 2
        base = featurize_short(rec, ell, include_rewards)
        traj = rec.trajectories[int(rng.integers(2))]
        if include_rewards and rng.random() < 0.5:
            traj.rewards[int(rng.integers(ell + 1))] += 0.5
        else:
            traj.states[int(rng.integers(ell + 1)), int(rng.integers(2))] += 0.5
        assert not np.array_equal(featurize_short(rec, ell, include_rewards), base)

    def test_insufficient_prefix_raises(self):
        rec = PolicyRecord("p", [_traj(L=3)])
        with pytest.raises(ValueError):
            featurize_short(rec, 4)
        with pytest.raises(ValueError):
            featurize_short(rec, 0)


class TestPolicyDataset:
    def test_short_trajectory_rejected(self):
        with pytest.raises(ValueError, match="below dataset horizon"):
            PolicyDataset("toy", 5, [PolicyRecord("p", [_traj(L=3)])])

    def test_require_true_values(self):
        data = synth_dataset(3, 1, 4, 2, seed=0)
        with pytest.raises(ValueError, match="missing true_value"):
            data.require_true_values()
        for r in data.records:
            r.true_value = 1.0
        data.require_true_values()

    def test_rollouts_per_record(self):
        data = synth_dataset(3, 2, 4, 2, seed=0)
        assert data.rollouts_per_record() == 2
        data.records[0].trajectories.append(_traj(L=4))
        with pytest.raises(ValueError, match="disagree"):
            data.rollouts_per_record()


class TestDatasetSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        data = synth_dataset(3, 2, 4, 2, seed=1)
        data.records[0].true_value = 1.23456789012345678
        path = tmp_path / "ds.jsonl"
        save_dataset(data, path)
        back = load_dataset(path)
        assert back.env_id == data.env_id and back.horizon == data.horizon
        assert back.records[0].true_value == data.records[0].true_value
        assert back.records[1].true_value is None
        for a, b in zip(data.records, back.records):
            assert a.policy_id == b.policy_id
            for ta, tb in zip(a.trajectories, b.trajectories):
                assert np.array_equal(ta.states, tb.states)
                assert np.array_equal(ta.actions, tb.actions)
                assert np.array_equal(ta.rewards, tb.rewards)

    def test_mixed_env_rejected(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(synth_dataset(1, 1, 4, 2, seed=0, env_id="a"), p1)
        save_dataset(synth_dataset(1, 1, 4, 2, seed=0, env_id="b"), p2)
        merged = tmp_path / "m.jsonl"
        merged.write_text(p1.read_text() + p2.read_text())
        with pytest.raises(ValueError, match="mixed"):
            load_dataset(merged)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_dataset(path)
