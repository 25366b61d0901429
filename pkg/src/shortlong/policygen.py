"""Policy construction: fitted Q-iteration and dose-controller families.

Two disjoint policy populations are generated per environment so that the
evaluation task has genuinely novel actions: HIV trains greedy FQI
policies over the 3-action set {RTI, PI, both} and tests over the
4-action set that adds no-treatment; kidney trains epsilon-greedy
discrete-grid dose controllers and tests multiplicative (continuous)
controllers whose doses leave the training grid.

All policies are stateless: everything they need at step t (including a
continuous controller's previous dose) is read from the state vector, so
batched and serial rollouts agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Environment, Trajectory, rollout_many
from .envs import HIV_ACTIONS, HivEnv, KidneyEnv, hiv_initial_states, kidney_initial_states
from .envs.kidney import DOSE_LAG1_IDX, HB_IDX, KidneyConfig
from .regress import MlpHyper, RegressionModel, mlp_fit
from .seeding import child_seed, generator

HIV_TRAIN_ACTIONS = HIV_ACTIONS[:3]          # RTI, PI, both
HIV_TEST_ACTIONS = HIV_ACTIONS               # adds no-treatment
HIV_TRAIN_GAMMAS = (0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.98)
HIV_TEST_GAMMAS = (0.5, 0.8, 0.9, 0.98)

HB_TARGET = 11.0          # mid healthy range, raw g/dL
PROPORTIONAL_GAIN = 0.5   # discrete controller: dose per g/dL of Hb deficit
CONTINUOUS_START_DOSE = 0.25


@dataclass
class PolicySpec:
    """Declarative description of one policy; fields unused by `kind` stay None."""

    kind: str  # fqi_greedy | discrete_controller | continuous_controller
    action_set: np.ndarray | None = None
    gamma: float | None = None
    iterations: int | None = None
    n_bins: int | None = None
    epsilon: float | None = None


class FixedActionPolicy:
    """Always emits one action vector."""

    def __init__(self, vector: np.ndarray):
        self.vector = np.asarray(vector, dtype=float)

    def act(self, states: np.ndarray, u_explore: np.ndarray, u_action: np.ndarray) -> np.ndarray:
        return np.tile(self.vector, (states.shape[0], 1))


class UniformRandomActionPolicy:
    """Uniform choice over a discrete action set (used for FQI exploration)."""

    def __init__(self, action_set: np.ndarray):
        self.action_set = np.asarray(action_set, dtype=float)

    def act(self, states: np.ndarray, u_explore: np.ndarray, u_action: np.ndarray) -> np.ndarray:
        idx = np.minimum((u_action * len(self.action_set)).astype(int), len(self.action_set) - 1)
        return self.action_set[idx]


class FqiGreedyPolicy:
    """Greedy argmax over a fitted Q(state, action-vector) network.

    Ties break toward the lowest action index, so behaviour is
    deterministic.
    """

    def __init__(self, action_set: np.ndarray, q_model: RegressionModel, gamma: float, iterations: int):
        self.action_set = np.asarray(action_set, dtype=float)
        self.q_model = q_model
        self.gamma = gamma
        self.iterations = iterations

    def q_values(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        n, m = states.shape[0], len(self.action_set)
        tiled_states = np.repeat(states, m, axis=0)
        tiled_actions = np.tile(self.action_set, (n, 1))
        q = self.q_model.predict(np.hstack([tiled_states, tiled_actions]))
        return q.reshape(n, m)

    def act(self, states: np.ndarray, u_explore: np.ndarray, u_action: np.ndarray) -> np.ndarray:
        return self.action_set[np.argmax(self.q_values(states), axis=1)]


class DiscreteDosePolicy:
    """Proportional Hb control snapped to an n_bins grid over [0, 1], epsilon-greedy.

    Target dose is gain * (Hb_target - Hb) clamped to [0, 1]; with
    probability epsilon the dose is instead a uniform grid point.
    """

    def __init__(self, n_bins: int, epsilon: float, config: KidneyConfig | None = None):
        if n_bins < 2:
            raise ValueError("need at least 2 dose bins")
        self.n_bins = n_bins
        self.epsilon = epsilon
        self.grid = np.linspace(0.0, 1.0, n_bins)
        self.state_scale = (config or KidneyConfig()).state_scale

    def act(self, states: np.ndarray, u_explore: np.ndarray, u_action: np.ndarray) -> np.ndarray:
        hb = np.atleast_2d(states)[:, HB_IDX] * self.state_scale
        target = np.clip(PROPORTIONAL_GAIN * (HB_TARGET - hb), 0.0, 1.0)
        snapped = self.grid[np.argmin(np.abs(target[:, None] - self.grid[None, :]), axis=1)]
        random_dose = self.grid[np.minimum((u_action * self.n_bins).astype(int), self.n_bins - 1)]
        dose = np.where(u_explore < self.epsilon, random_dose, snapped)
        return dose[:, None]


class ContinuousDosePolicy:
    """Multiplicative dose adjustment (+/-25%), epsilon-greedy with Uniform[0,1] doses.

    The previous dose is read from the state's dose-lag slot; when it is
    zero (start of treatment) the controller begins at a fixed start
    dose.  Doses grow unboundedly above 1 until the environment's clamp.
    """

    def __init__(self, epsilon: float, config: KidneyConfig | None = None):
        self.epsilon = epsilon
        self.state_scale = (config or KidneyConfig()).state_scale

    def act(self, states: np.ndarray, u_explore: np.ndarray, u_action: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        hb = states[:, HB_IDX] * self.state_scale
        prev = states[:, DOSE_LAG1_IDX] * self.state_scale
        base = np.where(prev <= 0.0, CONTINUOUS_START_DOSE, prev)
        stepped = np.where(hb < HB_TARGET, base * 1.25, base * 0.75)
        dose = np.where(u_explore < self.epsilon, u_action, stepped)
        return dose[:, None]


def transitions_from(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack (state, action, next_state, next_reward) tuples from trajectories.

    The tuple reward is the reward of the *next* state, matching the
    Bellman targets used by FQI and FQE.
    """
    S = np.vstack([t.states[:-1] for t in trajectories])
    A = np.vstack([t.actions for t in trajectories])
    S2 = np.vstack([t.states[1:] for t in trajectories])
    R2 = np.concatenate([t.rewards[1:] for t in trajectories])
    return S, A, S2, R2


def _fqi_hyper(state_dim: int, action_dim: int, hidden: tuple[int, ...], lr: float, wd: float, updates: int, batch: int) -> MlpHyper:
    return MlpHyper(
        layer_sizes=[state_dim + action_dim, *hidden, 1],
        learning_rate=lr,
        weight_decay=wd,
        max_updates=updates,
        batch_size=batch,
        patience=0,
    )


def fqi_train_snapshots(
    env: Environment,
    action_set: np.ndarray,
    gamma: float,
    iterations: int,
    exploration_data: list[Trajectory],
    seed: int,
    hyper: MlpHyper | None = None,
) -> list[FqiGreedyPolicy]:
    """Run FQI for `iterations` sweeps, returning the greedy policy after each.

    Sweep j fits a fresh Q-network to targets r' + gamma * max_a Q_{j-1}(s', a)
    with per-sweep seeds, so the snapshot after sweep j is identical to a
    separate fqi_train call with iterations=j and the same seed.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    action_set = np.asarray(action_set, dtype=float)
    S, A, S2, R2 = transitions_from(exploration_data)
    used = {tuple(a) for a in np.unique(A, axis=0)}
    missing = [list(a) for a in action_set if tuple(a) not in used]
    if missing:
        raise ValueError(f"exploration data never plays actions {missing}")
    hyper = hyper or _fqi_hyper(env.state_dim, env.action_dim, (64, 64), 1e-3, 1e-4, 700, 128)
    X = np.hstack([S, A])

    snapshots: list[FqiGreedyPolicy] = []
    prev: FqiGreedyPolicy | None = None
    for sweep in range(1, iterations + 1):
        targets = R2 if prev is None else R2 + gamma * np.max(prev.q_values(S2), axis=1)
        sweep_seed = int(child_seed(seed, "fqi-sweep", sweep).generate_state(1)[0])
        q_model = mlp_fit(X, targets, hyper, sweep_seed)
        prev = FqiGreedyPolicy(action_set, q_model, gamma, sweep)
        snapshots.append(prev)
    return snapshots


def fqi_train(
    env: Environment,
    action_set: np.ndarray,
    gamma: float,
    iterations: int,
    exploration_data: list[Trajectory],
    seed: int,
    hyper: MlpHyper | None = None,
) -> FqiGreedyPolicy:
    """Greedy policy after `iterations` fitted Q-iteration sweeps."""
    return fqi_train_snapshots(env, action_set, gamma, iterations, exploration_data, seed, hyper)[-1]


def make_controller_policy(spec: PolicySpec, seed: int = 0):
    """Instantiate a kidney dose controller from its spec."""
    if spec.kind == "discrete_controller":
        if spec.n_bins is None or spec.epsilon is None:
            raise ValueError("discrete_controller needs n_bins and epsilon")
        return DiscreteDosePolicy(spec.n_bins, spec.epsilon)
    if spec.kind == "continuous_controller":
        if spec.epsilon is None:
            raise ValueError("continuous_controller needs epsilon")
        return ContinuousDosePolicy(spec.epsilon)
    raise ValueError(f"not a controller kind: {spec.kind!r}")


@dataclass
class PolicyGenConfig:
    """Counts and hyperparameters for generate_policy_sets."""

    n_train: int | None = None          # None = the paper's count (HIV 70, kidney 200)
    n_test: int | None = None           # None = 40
    exploration_rollouts: int = 50
    fqi_iterations: int = 10
    fqi_hidden: tuple[int, ...] = (64, 64)
    fqi_learning_rate: float = 1e-3
    fqi_weight_decay: float = 1e-4
    fqi_updates: int = 700
    fqi_batch: int = 128
    hiv_train_gammas: tuple[float, ...] = HIV_TRAIN_GAMMAS
    hiv_test_gammas: tuple[float, ...] = HIV_TEST_GAMMAS
    hiv_init_rate: float = 0.6
    kidney_bins_range: tuple[int, int] = (5, 20)
    kidney_epsilon_range: tuple[float, float] = (0.05, 0.5)


def _subsample(items: list, target: int | None, seed: int, label: str) -> list:
    if target is None or target >= len(items):
        return items
    idx = np.sort(generator(seed, "subsample", label).choice(len(items), size=target, replace=False))
    return [items[i] for i in idx]


def _hiv_fqi_set(
    env: HivEnv,
    action_set: np.ndarray,
    gammas: tuple[float, ...],
    cfg: PolicyGenConfig,
    seed: int,
    label: str,
) -> list[tuple[str, FqiGreedyPolicy]]:
    starts = hiv_initial_states(cfg.exploration_rollouts, cfg.hiv_init_rate, int(child_seed(seed, "expl-starts", label).generate_state(1)[0]))
    explorer = UniformRandomActionPolicy(action_set)
    expl_seed = int(child_seed(seed, "expl-rollouts", label).generate_state(1)[0])
    exploration = rollout_many(env, explorer, starts, env.horizon, expl_seed)
    hyper = _fqi_hyper(
        env.state_dim, env.action_dim, cfg.fqi_hidden,
        cfg.fqi_learning_rate, cfg.fqi_weight_decay, cfg.fqi_updates, cfg.fqi_batch,
    )
    out = []
    for gi, gamma in enumerate(gammas):
        run_seed = int(child_seed(seed, "fqi-run", label, gi).generate_state(1)[0])
        snaps = fqi_train_snapshots(env, action_set, gamma, cfg.fqi_iterations, exploration, run_seed, hyper)
        for it, pol in enumerate(snaps, start=1):
            out.append((f"hiv-{label}-g{gamma:g}-i{it}", pol))
    return out


def generate_policy_sets(env_id: str, config: PolicyGenConfig, seed: int):
    """Build (train, test) policy lists of (policy_id, policy) pairs.

    HIV: FQI greedy policies; the training grid {RTI, PI, both} x 7
    discounts x iterations 1..10 factors into exactly 70 policies and the
    test grid 4 actions x {0.5, 0.8, 0.9, 0.98} x 1..10 into 40, so the
    default counts need no subsampling.  Kidney: 200 discrete controllers
    with n_bins ~ Uniform{5..20} and epsilon ~ Uniform(0.05, 0.5) for
    training, 40 continuous controllers for testing.
    """
    if env_id == "hiv":
        env = HivEnv()
        train = _hiv_fqi_set(env, HIV_TRAIN_ACTIONS, config.hiv_train_gammas, config, seed, "train")
        test = _hiv_fqi_set(env, HIV_TEST_ACTIONS, config.hiv_test_gammas, config, seed, "test")
        train = _subsample(train, config.n_train, seed, "train")
        test = _subsample(test, config.n_test, seed, "test")
        return train, test
    if env_id == "kidney":
        n_train = 200 if config.n_train is None else config.n_train
        n_test = 40 if config.n_test is None else config.n_test
        rng = generator(seed, "kidney-specs")
        lo_b, hi_b = config.kidney_bins_range
        lo_e, hi_e = config.kidney_epsilon_range
        train = []
        for i in range(n_train):
            spec = PolicySpec(
                kind="discrete_controller",
                n_bins=int(rng.integers(lo_b, hi_b + 1)),
                epsilon=float(rng.uniform(lo_e, hi_e)),
            )
            train.append((f"kidney-train-{i:03d}", make_controller_policy(spec)))
        test = []
        for i in range(n_test):
            spec = PolicySpec(kind="continuous_controller", epsilon=float(rng.uniform(lo_e, hi_e)))
            test.append((f"kidney-test-{i:03d}", make_controller_policy(spec)))
        return train, test
    raise ValueError(f"unknown env_id {env_id!r}")


# --- persistence ------------------------------------------------------------

def _policy_to_obj(policy) -> dict:
    if isinstance(policy, FqiGreedyPolicy):
        return {
            "kind": "fqi_greedy",
            "action_set": policy.action_set.tolist(),
            "gamma": policy.gamma,
            "iterations": policy.iterations,
            "q_model": json.loads(policy.q_model.to_json()),
        }
    if isinstance(policy, DiscreteDosePolicy):
        return {"kind": "discrete_controller", "n_bins": policy.n_bins, "epsilon": policy.epsilon}
    if isinstance(policy, ContinuousDosePolicy):
        return {"kind": "continuous_controller", "epsilon": policy.epsilon}
    if isinstance(policy, FixedActionPolicy):
        return {"kind": "fixed_action", "vector": policy.vector.tolist()}
    if isinstance(policy, UniformRandomActionPolicy):
        return {"kind": "uniform_random", "action_set": policy.action_set.tolist()}
    raise TypeError(f"cannot serialize policy type {type(policy).__name__}")


def _policy_from_obj(obj: dict):
    kind = obj["kind"]
    if kind == "fqi_greedy":
        model = RegressionModel.from_json(json.dumps(obj["q_model"]))
        return FqiGreedyPolicy(np.asarray(obj["action_set"]), model, obj["gamma"], obj["iterations"])
    if kind == "discrete_controller":
        return DiscreteDosePolicy(obj["n_bins"], obj["epsilon"])
    if kind == "continuous_controller":
        return ContinuousDosePolicy(obj["epsilon"])
    if kind == "fixed_action":
        return FixedActionPolicy(np.asarray(obj["vector"]))
    if kind == "uniform_random":
        return UniformRandomActionPolicy(np.asarray(obj["action_set"]))
    raise ValueError(f"unknown policy kind {kind!r}")


def save_policies(policies: list[tuple[str, object]], path: str | Path) -> None:
    """Persist (policy_id, policy) pairs as JSON lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for policy_id, policy in policies:
            fh.write(json.dumps({"policy_id": policy_id, "policy": _policy_to_obj(policy)}) + "\n")


def load_policies(path: str | Path) -> list[tuple[str, object]]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append((obj["policy_id"], _policy_from_obj(obj["policy"])))
    return out
