"""Shared toy environments, policies, and dataset builders for the tests."""

from __future__ import annotations

import numpy as np

from shortlong.core import PolicyDataset, PolicyRecord, Trajectory


class IdentityEnv:
    """s' = s regardless of action; constant reward 1."""

    def __init__(self, state_dim: int = 2, horizon: int = 5):
        self.env_id = "identity-toy"
        self.state_dim = state_dim
        self.action_dim = 1
        self.noise_per_step = 0
        self.horizon = horizon

    def transition(self, states, actions, noise=None):
        return np.atleast_2d(np.asarray(states, dtype=float)).copy()

    def reward(self, states):
        return np.ones(np.atleast_2d(states).shape[0])


class LinearMapEnv:
    """Deterministic linear dynamics s' = s @ A.T; reward = first coordinate."""

    def __init__(self, A, horizon: int = 10):
        self.A = np.asarray(A, dtype=float)
        self.env_id = "linear-toy"
        self.state_dim = self.A.shape[0]
        self.action_dim = 1
        self.noise_per_step = 0
        self.horizon = horizon

    def transition(self, states, actions, noise=None):
        # overflow to inf is exercised deliberately by the abort tests
        with np.errstate(over="ignore"):
            return np.atleast_2d(np.asarray(states, dtype=float)) @ self.A.T

    def reward(self, states):
        return np.atleast_2d(np.asarray(states, dtype=float))[:, 0]


class ZeroPolicy:
    """Always emits the zero action vector."""

    def __init__(self, action_dim: int = 1):
        self.action_dim = action_dim

    def act(self, states, u_explore, u_action):
        return np.zeros((np.atleast_2d(states).shape[0], self.action_dim))


def synth_dataset(n_policies, n_rollouts, L, d, seed, env_id="toy") -> PolicyDataset:
    """Random trajectories; true_value left unset (fill with set_values)."""
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n_policies):
        trajs = []
        for _ in range(n_rollouts):
            states = rng.normal(size=(L + 1, d))
            actions = rng.normal(size=(L, 1))
            rewards = rng.normal(size=(L + 1,))
            trajs.append(Trajectory(states, actions, rewards))
        recs.append(PolicyRecord(f"pol-{i:03d}", trajs))
    return PolicyDataset(env_id, L, recs)


def set_values(data: PolicyDataset, fn) -> PolicyDataset:
    for rec in data.records:
        rec.true_value = float(fn(rec))
    return data


def reward_sum_target(ell: int, scale: float = 3.0):
    """True value = scale * (sum of rewards 0..ell), averaged over rollouts."""

    def fn(rec: PolicyRecord) -> float:
        return scale * float(np.mean([t.rewards[: ell + 1].sum() for t in rec.trajectories]))

    return fn


def linear_dataset(n_policies, L, d, seed, n_rollouts=1) -> PolicyDataset:
    """Trajectories rolled from s' = s @ A.T per-policy starts; deterministic."""
    rng = np.random.default_rng(seed)
    A = np.eye(d) * 0.9 + rng.normal(0, 0.05, size=(d, d))
    recs = []
    for i in range(n_policies):
        trajs = []
        for _ in range(n_rollouts):
            states = np.empty((L + 1, d))
            states[0] = rng.normal(size=d)
            for t in range(L):
                states[t + 1] = states[t] @ A.T
            rewards = states[:, 0].copy()
            trajs.append(Trajectory(states, np.zeros((L, 1)), rewards))
        recs.append(PolicyRecord(f"lin-{i:03d}", trajs, true_value=float(trajs[0].rewards.sum())))
    return PolicyDataset("linear-toy", L, recs), A
