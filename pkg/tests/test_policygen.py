"""Policy construction: FQI training, dose controllers, persistence."""

import numpy as np
import pytest

from helpers import IdentityEnv
from shortlong.core import Trajectory
from shortlong.envs.kidney import KidneyConfig
from shortlong.policygen import (
    CONTINUOUS_START_DOSE,
    ContinuousDosePolicy,
    DiscreteDosePolicy,
    FixedActionPolicy,
    FqiGreedyPolicy,
    PolicyGenConfig,
    UniformRandomActionPolicy,
    fqi_train,
    fqi_train_snapshots,
    generate_policy_sets,
    load_policies,
    save_policies,
    transitions_from,
)
from shortlong.regress import MlpHyper, RegressionModel

SCALE = KidneyConfig.state_scale


def kidney_state(hb, prev_dose=0.0):
    return np.array([[hb, hb, hb, prev_dose, prev_dose]]) / SCALE


def exploration_trajectories(seed, n_trajs=4, length=12):
    # hand-built tuples covering both actions of a 1-dim binary action set
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_trajs):
        states = rng.normal(size=(length + 1, 2))
        actions = rng.integers(0, 2, size=(length, 1)).astype(float)
        rewards = rng.uniform(0.0, 1.0, size=length + 1)
        out.append(Trajectory(states, actions, rewards))
    return out


TINY_FQI_HYPER = MlpHyper([3, 8, 1], learning_rate=1e-2, max_updates=60, batch_size=64, patience=0)


class TestSimplePolicies:
    def test_fixed_action_tiles(self):
        pol = FixedActionPolicy([0.7, 0.0])
        acts = pol.act(np.zeros((5, 6)), np.zeros(5), np.zeros(5))
        np.testing.assert_array_equal(acts, np.tile([0.7, 0.0], (5, 1)))

    def test_uniform_random_index_mapping(self):
        action_set = np.array([[0.0], [1.0], [2.0], [3.0]])
        pol = UniformRandomActionPolicy(action_set)
        states = np.zeros((3, 2))
        u = np.array([0.0, 0.5, 0.999])
        acts = pol.act(states, np.zeros(3), u)
        np.testing.assert_array_equal(acts[:, 0], [0.0, 2.0, 3.0])


class TestFqiGreedyPolicy:
    def test_constant_q_breaks_ties_to_lowest_index(self):
        sizes = [3, 2, 1]
        zero_model = RegressionModel(
            sizes,
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )
        pol = FqiGreedyPolicy(np.array([[0.0], [1.0]]), zero_model, gamma=0.9, iterations=1)
        acts = pol.act(np.random.default_rng(0).normal(size=(6, 2)), np.zeros(6), np.zeros(6))
        np.testing.assert_array_equal(acts, np.zeros((6, 1)))

    def test_deterministic(self):
        data = exploration_trajectories(seed=1)
        pol = fqi_train(IdentityEnv(2, 10), np.array([[0.0], [1.0]]), 0.9, 2, data, seed=3, hyper=TINY_FQI_HYPER)
        states = np.random.default_rng(2).normal(size=(7, 2))
        a = pol.act(states, np.zeros(7), np.zeros(7))
        b = pol.act(states, np.zeros(7), np.zeros(7))
        np.testing.assert_array_equal(a, b)


class TestDoseControllers:
    def test_discrete_proportional_greedy(self):
        pol = DiscreteDosePolicy(n_bins=5, epsilon=0.0)
        ones = np.ones(1)
        # high Hb: proportional target is 0
        assert pol.act(kidney_state(12.5), ones, ones * 0.9)[0, 0] == 0.0
        # low Hb: target saturates at the top of the grid
        assert pol.act(kidney_state(9.0), ones, ones * 0.9)[0, 0] == 1.0
        # Hb 10.2: target 0.4 snaps to the nearest grid point 0.5
        assert pol.act(kidney_state(10.2), ones, ones * 0.9)[0, 0] == 0.5

    def test_discrete_epsilon_mixes_random_grid_points(self):
        pol = DiscreteDosePolicy(n_bins=5, epsilon=0.5)
        n = 1000
        states = np.repeat(kidney_state(12.5), n, axis=0)  # greedy dose would be 0
        rng = np.random.default_rng(4)
        doses = pol.act(states, rng.random(n), np.full(n, 0.97))[:, 0]
        random_fraction = np.mean(doses == 1.0)
        assert 0.3 <= random_fraction <= 0.7
        assert set(np.unique(doses)) == {0.0, 1.0}

    def test_discrete_needs_two_bins(self):
        with pytest.raises(ValueError, match="bins"):
            DiscreteDosePolicy(n_bins=1, epsilon=0.0)

    def test_continuous_multiplicative_steps(self):
        pol = ContinuousDosePolicy(epsilon=0.0)
        ones = np.ones(1)
        # no previous dose: start dose stepped up when anemic
        assert pol.act(kidney_state(9.0), ones, ones)[0, 0] == pytest.approx(CONTINUOUS_START_DOSE * 1.25)
        assert pol.act(kidney_state(12.0), ones, ones)[0, 0] == pytest.approx(CONTINUOUS_START_DOSE * 0.75)
        # previous dose read from the state's dose-lag slot
        assert pol.act(kidney_state(9.0, prev_dose=0.8), ones, ones)[0, 0] == pytest.approx(1.0)
        assert pol.act(kidney_state(12.0, prev_dose=0.8), ones, ones)[0, 0] == pytest.approx(0.6)

    def test_continuous_epsilon_uses_uniform_dose(self):
        pol = ContinuousDosePolicy(epsilon=1.0)
        u_action = np.array([0.37])
        assert pol.act(kidney_state(9.0), np.zeros(1), u_action)[0, 0] == 0.37


class TestTransitionsFrom:
    def test_stacking_and_reward_alignment(self):
        t1 = Trajectory(
            states=np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]),
            actions=np.array([[5.0], [6.0]]),
            rewards=np.array([0.1, 0.2, 0.3]),
        )
        t2 = Trajectory(
            states=np.array([[9.0, 9.0], [8.0, 8.0]]),
            actions=np.array([[7.0]]),
            rewards=np.array([0.9, 0.8]),
        )
        S, A, S2, R2 = transitions_from([t1, t2])
        np.testing.assert_array_equal(S, [[0, 0], [1, 1], [9, 9]])
        np.testing.assert_array_equal(A, [[5], [6], [7]])
        np.testing.assert_array_equal(S2, [[1, 1], [2, 2], [8, 8]])
        np.testing.assert_array_equal(R2, [0.2, 0.3, 0.8])


class TestFqiTraining:
    def test_snapshots_match_shorter_runs(self):
        data = exploration_trajectories(seed=5)
        env = IdentityEnv(2, 10)
        action_set = np.array([[0.0], [1.0]])
        snaps = fqi_train_snapshots(env, action_set, 0.8, 3, data, seed=9, hyper=TINY_FQI_HYPER)
        assert [p.iterations for p in snaps] == [1, 2, 3]
        two = fqi_train(env, action_set, 0.8, 2, data, seed=9, hyper=TINY_FQI_HYPER)
        np.testing.assert_array_equal(
            snaps[1].q_model.parameter_vector(), two.q_model.parameter_vector()
        )

    def test_gamma_zero_fits_immediate_reward(self):
        rng = np.random.default_rng(6)
        data = []
        for _ in range(6):
            states = rng.normal(size=(13, 2))
            actions = rng.integers(0, 2, size=(12, 1)).astype(float)
            data.append(Trajectory(states, actions, np.full(13, 0.5)))
        hyper = TINY_FQI_HYPER.replace(max_updates=400)
        pol = fqi_train(IdentityEnv(2, 10), np.array([[0.0], [1.0]]), 0.0, 1, data, seed=7, hyper=hyper)
        S, A, _, _ = transitions_from(data)
        q_played = pol.q_model.predict(np.hstack([S, A]))
        assert np.max(np.abs(q_played - 0.5)) < 0.1

    def test_exploration_must_cover_action_set(self):
        data = exploration_trajectories(seed=8)
        for traj in data:
            traj.actions[:] = 0.0
        with pytest.raises(ValueError, match="never plays"):
            fqi_train_snapshots(IdentityEnv(2, 10), np.array([[0.0], [1.0]]), 0.9, 1, data, seed=0, hyper=TINY_FQI_HYPER)

    def test_parameter_validation(self):
        data = exploration_trajectories(seed=9)
        env = IdentityEnv(2, 10)
        action_set = np.array([[0.0], [1.0]])
        with pytest.raises(ValueError, match="iterations"):
            fqi_train_snapshots(env, action_set, 0.9, 0, data, seed=0, hyper=TINY_FQI_HYPER)
        with pytest.raises(ValueError, match="gamma"):
            fqi_train_snapshots(env, action_set, 1.5, 1, data, seed=0, hyper=TINY_FQI_HYPER)


class TestGeneratePolicySets:
    def test_kidney_counts_and_ids(self):
        config = PolicyGenConfig(n_train=12, n_test=5)
        train, test = generate_policy_sets("kidney", config, seed=0)
        assert len(train) == 12
        assert len(test) == 5
        ids = [pid for pid, _ in train] + [pid for pid, _ in test]
        assert len(set(ids)) == len(ids)
        for _, pol in train:
            assert isinstance(pol, DiscreteDosePolicy)
            assert 5 <= pol.n_bins <= 20
            assert 0.05 <= pol.epsilon <= 0.5
        for _, pol in test:
            assert isinstance(pol, ContinuousDosePolicy)

    def test_kidney_seed_determinism(self):
        config = PolicyGenConfig(n_train=6, n_test=3)
        a_train, _ = generate_policy_sets("kidney", config, seed=4)
        b_train, _ = generate_policy_sets("kidney", config, seed=4)
        assert [(p.n_bins, p.epsilon) for _, p in a_train] == [(p.n_bins, p.epsilon) for _, p in b_train]

    def test_unknown_env_rejected(self):
        with pytest.raises(ValueError, match="unknown env_id"):
            generate_policy_sets("cartpole", PolicyGenConfig(), seed=0)


class TestPersistence:
    def test_roundtrip_all_kinds(self, tmp_path):
        data = exploration_trajectories(seed=10)
        fqi = fqi_train(IdentityEnv(2, 10), np.array([[0.0], [1.0]]), 0.9, 1, data, seed=11, hyper=TINY_FQI_HYPER)
        policies = [
            ("fixed", FixedActionPolicy([0.7, 0.0])),
            ("random", UniformRandomActionPolicy(np.array([[0.0], [1.0]]))),
            ("fqi", fqi),
            ("discrete", DiscreteDosePolicy(7, 0.25)),
            ("continuous", ContinuousDosePolicy(0.1)),
        ]
        path = tmp_path / "policies.jsonl"
        save_policies(policies, path)
        back = load_policies(path)
        assert [pid for pid, _ in back] == [pid for pid, _ in policies]

        states = np.abs(np.random.default_rng(12).normal(size=(5, 2))) / 100.0
        u = np.linspace(0.0, 0.9, 5)
        for (_, orig), (_, loaded) in zip(policies, back):
            assert type(loaded) is type(orig)
            if isinstance(orig, (FixedActionPolicy, UniformRandomActionPolicy, FqiGreedyPolicy)):
                np.testing.assert_array_equal(loaded.act(states, u, u), orig.act(states, u, u))

    def test_controller_settings_survive(self, tmp_path):
        path = tmp_path / "controllers.jsonl"
        save_policies([("d", DiscreteDosePolicy(9, 0.33)), ("c", ContinuousDosePolicy(0.44))], path)
        (_, disc), (_, cont) = load_policies(path)
        assert (disc.n_bins, disc.epsilon) == (9, 0.33)
        assert cont.epsilon == 0.44
