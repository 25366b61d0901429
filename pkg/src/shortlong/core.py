"""Trajectories, rollout machinery, featurization, and dataset IO.

Conventions used throughout the package:

* A trajectory over ``T`` transitions stores ``T+1`` states, ``T`` action
  vectors, and ``T+1`` rewards.  Rewards are state-only: ``rewards[t]``
  is the reward of ``states[t]``, so a constant-reward environment over a
  horizon of 30 yields a return of exactly 31.
* All stored values are in normalized units (environments apply their
  scale divisions before states or rewards reach a Trajectory).
* Randomness is split per trajectory row: row ``tag`` of a batch draws
  from streams derived as (seed, "policy"/"env", tag), so rolling many
  trajectories jointly or one at a time gives bit-identical results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .seeding import generator


class SimulationError(RuntimeError):
    """A rollout produced a non-finite state."""


class Environment(Protocol):
    """Batched deterministic-or-noisy dynamics with a state-only reward.

    ``transition`` maps (n, state_dim) states and (n, action_dim) actions
    to next states, consuming ``noise_per_step`` standard normal draws per
    row from the provided noise block.  ``reward`` maps states to scalar
    rewards, already normalized.  Implementations must be elementwise
    across rows so batched and serial stepping agree bitwise.
    """

    env_id: str
    state_dim: int
    action_dim: int
    horizon: int
    noise_per_step: int

    def transition(self, states: np.ndarray, actions: np.ndarray, noise: np.ndarray | None) -> np.ndarray: ...

    def reward(self, states: np.ndarray) -> np.ndarray: ...


class Policy(Protocol):
    """Maps a batch of states to action vectors.

    ``u_explore`` and ``u_action`` are per-row Uniform[0,1] draws supplied
    by the rollout driver; stochastic policies consume them (coin and
    action choice respectively), deterministic policies ignore them.
    Policies must be stateless functions of their inputs.
    """

    def act(self, states: np.ndarray, u_explore: np.ndarray, u_action: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Action:
    """A discrete action: integer id plus its vector encoding."""

    id: int
    vector: np.ndarray


@dataclass
class Trajectory:
    """One rollout: states (T+1, d), actions (T, a), rewards (T+1,)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.states.ndim != 2 or self.actions.ndim != 2 or self.rewards.ndim != 1:
            raise ValueError("states/actions must be 2-d, rewards 1-d")
        T = self.actions.shape[0]
        if T < 1 or self.states.shape[0] != T + 1 or self.rewards.shape[0] != T + 1:
            raise ValueError(
                f"inconsistent trajectory: {self.states.shape[0]} states, "
                f"{T} actions, {self.rewards.shape[0]} rewards"
            )

    @property
    def length(self) -> int:
        """Number of transitions."""
        return self.actions.shape[0]

    def prefix(self, ell: int) -> "Trajectory":
        """First ``ell`` transitions (states/rewards 0..ell inclusive)."""
        if not 1 <= ell <= self.length:
            raise ValueError(f"prefix length {ell} outside [1, {self.length}]")
        return Trajectory(self.states[: ell + 1], self.actions[:ell], self.rewards[: ell + 1])


@dataclass
class PolicyRecord:
    """All rollouts of one policy plus its Monte-Carlo value when known."""

    policy_id: str
    trajectories: list[Trajectory]
    true_value: float | None = None

    def returns(self) -> np.ndarray:
        return np.array([return_of(t) for t in self.trajectories])


@dataclass
class PolicyDataset:
    """A set of policy records sharing an environment and horizon."""

    env_id: str
    horizon: int
    records: list[PolicyRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        for rec in self.records:
            for traj in rec.trajectories:
                if traj.length < self.horizon:
                    raise ValueError(
                        f"policy {rec.policy_id!r}: trajectory length {traj.length} "
                        f"below dataset horizon {self.horizon}"
                    )

    def require_true_values(self) -> None:
        missing = [r.policy_id for r in self.records if r.true_value is None]
        if missing:
            raise ValueError(f"records missing true_value: {missing[:5]}")

    def rollouts_per_record(self) -> int:
        counts = {len(r.trajectories) for r in self.records}
        if len(counts) != 1:
            raise ValueError(f"records disagree on rollout count: {sorted(counts)}")
        return counts.pop()


def return_of(traj: Trajectory) -> float:
    """Undiscounted sum of all rewards in the trajectory."""
    return float(np.sum(traj.rewards))


def _row_uniforms(seed: int, tag: int | str, horizon: int) -> np.ndarray:
    return generator(seed, "policy", tag).random((horizon, 2))


def _row_noise(seed: int, tag: int | str, horizon: int, per_step: int) -> np.ndarray:
    if per_step == 0:
        return np.zeros((horizon, 0))
    return generator(seed, "env", tag).normal(size=(horizon, per_step))


def rollout_groups(
    env: Environment,
    groups: Sequence[tuple[Policy, np.ndarray, Sequence[int | str]]],
    horizon: int,
    seed: int,
) -> list[list[Trajectory]]:
    """Roll several (policy, start_states, row_tags) groups jointly.

    All rows across all groups step through the environment as one batch;
    per-row random streams are keyed by tag alone, so the result for any
    row is independent of which other rows share the batch.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    starts = []
    tags: list[int | str] = []
    spans = []
    pos = 0
    for policy, group_starts, group_tags in groups:
        group_starts = np.atleast_2d(np.asarray(group_starts, dtype=float))
        if len(group_tags) != group_starts.shape[0]:
            raise ValueError("one tag per start state required")
        starts.append(group_starts)
        tags.extend(group_tags)
        spans.append((policy, pos, pos + group_starts.shape[0]))
        pos += group_starts.shape[0]
    states = np.vstack(starts)
    n = states.shape[0]
    if states.shape[1] != env.state_dim:
        raise ValueError(f"start states have dim {states.shape[1]}, env expects {env.state_dim}")

    uniforms = np.stack([_row_uniforms(seed, tag, horizon) for tag in tags])
    noise = np.stack([_row_noise(seed, tag, horizon, env.noise_per_step) for tag in tags])

    state_seq = np.empty((horizon + 1, n, env.state_dim))
    action_seq = np.empty((horizon, n, env.action_dim))
    state_seq[0] = states
    for t in range(horizon):
        actions = np.empty((n, env.action_dim))
        for policy, lo, hi in spans:
            actions[lo:hi] = policy.act(state_seq[t, lo:hi], uniforms[lo:hi, t, 0], uniforms[lo:hi, t, 1])
        nxt = env.transition(state_seq[t], actions, noise[:, t])
        bad = ~np.isfinite(nxt).all(axis=1)
        if bad.any():
            culprit = [tags[i] for i in np.flatnonzero(bad)[:3]]
            raise SimulationError(f"{env.env_id}: non-finite state at step {t} (rows {culprit})")
        action_seq[t] = actions
        state_seq[t + 1] = nxt

    rewards = np.stack([env.reward(state_seq[t]) for t in range(horizon + 1)])
    out: list[list[Trajectory]] = []
    for _, lo, hi in spans:
        out.append(
            [Trajectory(state_seq[:, i], action_seq[:, i], rewards[:, i]) for i in range(lo, hi)]
        )
    return out


def rollout_many(
    env: Environment,
    policy: Policy,
    start_states: np.ndarray,
    horizon: int,
    seed: int,
    row_tags: Sequence[int | str] | None = None,
) -> list[Trajectory]:
    """Roll one policy from several start states (tags default to row index)."""
    start_states = np.atleast_2d(np.asarray(start_states, dtype=float))
    if row_tags is None:
        row_tags = list(range(start_states.shape[0]))
    return rollout_groups(env, [(policy, start_states, row_tags)], horizon, seed)[0]


def rollout(
    env: Environment,
    policy: Policy,
    start_state: np.ndarray,
    horizon: int,
    seed: int,
    row_tag: int | str = 0,
) -> Trajectory:
    """Roll a single trajectory of exactly ``horizon`` transitions."""
    return rollout_many(env, policy, np.atleast_2d(start_state), horizon, seed, [row_tag])[0]


def policy_value_mc(
    env: Environment,
    policy: Policy,
    init_states: np.ndarray,
    n_rollouts: int,
    horizon: int,
    seed: int,
) -> float:
    """Monte-Carlo value: mean return over init_states x n_rollouts rollouts.

    This is the ground-truth oracle the estimators are scored against.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    init_states = np.atleast_2d(np.asarray(init_states, dtype=float))
    m = init_states.shape[0]
    starts = np.tile(init_states, (n_rollouts, 1))
    tags = [f"mc-{rep}-{i}" for rep in range(n_rollouts) for i in range(m)]
    trajs = rollout_many(env, policy, starts, horizon, seed, tags)
    return float(np.mean([return_of(t) for t in trajs]))


def featurize_short(record: PolicyRecord, ell: int, include_rewards: bool = True) -> np.ndarray:
    """Flatten the first ``ell`` steps of every rollout into one vector.

    Ordering is rollout-major, time-minor: for each rollout in turn,
    states 0..ell row by row, then (optionally) rewards 0..ell.  Length is
    n_rollouts * ((ell+1)*state_dim + (ell+1)*include_rewards), fixed per
    configuration.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    parts = []
    for traj in record.trajectories:
        if traj.length < ell:
            raise ValueError(
                f"policy {record.policy_id!r}: trajectory has {traj.length} steps, need {ell}"
            )
        parts.append(traj.states[: ell + 1].ravel())
        if include_rewards:
            parts.append(traj.rewards[: ell + 1])
    return np.concatenate(parts)


# --- dataset serialization -------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_list(values: Iterable[float]) -> str:
    return "[" + ", ".join(_fmt(v) for v in values) + "]"


def _fmt_matrix(rows: np.ndarray) -> str:
    return "[" + ", ".join(_fmt_list(row) for row in rows) + "]"


def _record_line(record: PolicyRecord, horizon: int, env_id: str) -> str:
    parts = [f'"policy_id": {json.dumps(record.policy_id)}']
    parts.append(f'"horizon": {horizon}')
    parts.append(f'"env_id": {json.dumps(env_id)}')
    if record.true_value is not None:
        parts.append(f'"true_value": {_fmt(record.true_value)}')
    rollouts = ", ".join(
        "{"
        + f'"states": {_fmt_matrix(t.states)}, '
        + f'"actions": {_fmt_matrix(t.actions)}, '
        + f'"rewards": {_fmt_list(t.rewards)}'
        + "}"
        for t in record.trajectories
    )
    parts.append(f'"rollouts": [{rollouts}]')
    return "{" + ", ".join(parts) + "}"


def save_dataset(dataset: PolicyDataset, path: str | Path) -> None:
    """Write a dataset as JSON lines, one PolicyRecord per line.

    Floats carry 17 significant digits so load(save(ds)) round-trips
    bit-for-bit.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in dataset.records:
            fh.write(_record_line(record, dataset.horizon, dataset.env_id) + "\n")


def load_dataset(path: str | Path) -> PolicyDataset:
    """Read a JSON-lines dataset written by save_dataset."""
    records = []
    env_id: str | None = None
    horizon: int | None = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if env_id is None:
                env_id, horizon = obj["env_id"], int(obj["horizon"])
            elif obj["env_id"] != env_id or int(obj["horizon"]) != horizon:
                raise ValueError(f"line {line_no}: mixed env_id/horizon in one dataset file")
            trajectories = [
                Trajectory(np.array(r["states"]), np.array(r["actions"]), np.array(r["rewards"]))
                for r in obj["rollouts"]
            ]
            records.append(
                PolicyRecord(obj["policy_id"], trajectories, obj.get("true_value"))
            )
    if env_id is None or horizon is None:
        raise ValueError(f"{path}: empty dataset file")
    return PolicyDataset(env_id, horizon, records)
