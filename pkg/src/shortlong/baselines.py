"""Baseline estimators the short-long methods are compared against.

FQE fits Q(s, a) on historical transitions by iterated regression toward
r + gamma * Q(s', pi(s')); online dynamics fits s' = f(s, a) on the short
prefix only and rolls the target policy forward; the reward extrapolators
scale the observed prefix reward to the full horizon; the off-policy mean
ignores the new policy entirely.  For battery curves, the variance of the
capacity difference between early cycles feeds a logistic lifetime
classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.linear_model import LogisticRegressionCV

from .core import PolicyDataset, Policy, Trajectory
from .envs.battery import CapacityCurve
from .policygen import transitions_from
from .regress import MlpHyper, RegressionModel, mlp_fit
from .seeding import child_seed, generator

DIVERGENCE_FACTOR = 1e6


def deterministic_actions(policy: Policy, states: np.ndarray) -> np.ndarray:
    """The policy's greedy branch: exploration draw pinned high, action draw centered."""
    n = len(states)
    return policy.act(states, np.ones(n), np.full(n, 0.5))


@dataclass
class QModel:
    """Action-value model for one target policy."""

    model: RegressionModel
    gamma: float
    state_dim: int

    def q_values(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        X = np.hstack([np.atleast_2d(states), np.atleast_2d(actions)])
        return np.atleast_1d(self.model.predict(X))


def fqe_fit(
    train: PolicyDataset,
    target_policy: Policy,
    gamma: float,
    sweeps: int,
    regressor_hyper: MlpHyper | None = None,
    seed: int = 0,
    tuples_per_sweep: int = 1000,
) -> QModel:
    """Fitted Q evaluation of `target_policy` on pooled historical tuples.

    Each sweep subsamples tuples, forms targets r + gamma * Q_prev(s', pi(s'))
    with the previous sweep's model, and fits a fresh regressor.  With
    gamma=0 and one sweep this is plain regression onto immediate reward.
    A sweep whose training loss exceeds 1e6 times the first sweep's aborts.
    """
    S, A, S2, R2 = _pooled_tuples(train)
    d = S.shape[1]
    if regressor_hyper is None:
        regressor_hyper = MlpHyper(
            layer_sizes=[d + A.shape[1], 64, 64, 1],
            learning_rate=1e-3,
            weight_decay=1e-4,
            max_updates=400,
            batch_size=128,
            patience=0,
        )
    model: RegressionModel | None = None
    first_loss = None
    for sweep in range(sweeps):
        rng = generator(seed, "fqe-batch", sweep)
        if len(S) > tuples_per_sweep:
            idx = rng.choice(len(S), size=tuples_per_sweep, replace=False)
        else:
            idx = np.arange(len(S))
        targets = R2[idx].copy()
        if model is not None and gamma != 0.0:
            next_actions = deterministic_actions(target_policy, S2[idx])
            q_next = QModel(model, gamma, d).q_values(S2[idx], next_actions)
            targets = targets + gamma * q_next
        X = np.hstack([S[idx], A[idx]])
        fit_seed = int(child_seed(seed, "fqe-fit", sweep).generate_state(1)[0])
        model = mlp_fit(X, targets, regressor_hyper, fit_seed)
        loss = model.fit_report.validation_loss
        if first_loss is None:
            # floored at a reward-scale epsilon so a near-exact first fit
            # does not flag later sweeps whose losses are small in absolute
            # terms; real divergence blows past the reward scale itself
            first_loss = max(loss, 1e-6 * float(np.mean(targets**2)), 1e-30)
        elif loss > DIVERGENCE_FACTOR * first_loss:
            raise RuntimeError(
                f"FQE diverged at sweep {sweep}: loss {loss:.3g} vs initial {first_loss:.3g}")
    return QModel(model, gamma, d)


def _pooled_tuples(train: PolicyDataset):
    parts = [transitions_from(rec.trajectories) for rec in train.records]
    S = np.concatenate([p[0] for p in parts])
    A = np.concatenate([p[1] for p in parts])
    S2 = np.concatenate([p[2] for p in parts])
    R2 = np.concatenate([p[3] for p in parts])
    return S, A, np.atleast_2d(S2), R2


def fqe_value(q: QModel, policy: Policy, init_states: np.ndarray) -> float:
    """Mean Q at the policy's own first action from the initial states."""
    init_states = np.atleast_2d(init_states)
    actions = deterministic_actions(policy, init_states)
    return float(np.mean(q.q_values(init_states, actions)))


@dataclass
class DynamicsModel:
    """s' = f(s, a) fit on prefix transitions only."""

    model: RegressionModel
    state_dim: int

    def predict(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        X = np.hstack([np.atleast_2d(states), np.atleast_2d(actions)])
        return np.atleast_2d(self.model.predict(X))


def online_dynamics_fit(
    prefix: Trajectory | Sequence[Trajectory],
    hyper: MlpHyper | None = None,
    seed: int = 0,
) -> DynamicsModel:
    trajs = [prefix] if isinstance(prefix, Trajectory) else list(prefix)
    X = np.concatenate([np.hstack([t.states[:-1], t.actions]) for t in trajs])
    Y = np.concatenate([t.states[1:] for t in trajs])
    d = Y.shape[1]
    if hyper is None:
        hyper = MlpHyper(
            layer_sizes=[X.shape[1], 64, 64, d],
            learning_rate=1e-3,
            weight_decay=1e-6,
            max_updates=1500,
            batch_size=max(len(X), 2),
            patience=0,
        )
    return DynamicsModel(mlp_fit(X, Y, hyper, seed), d)


def online_dynamics_value(
    dyn: DynamicsModel,
    prefix: Trajectory,
    horizon: int,
    reward_fn,
    target_policy: Policy,
) -> float:
    """Observed prefix rewards plus rewards along a learned-model rollout.

    The target policy (greedy branch) picks the action at each predicted
    state, mirroring how the true return would unfold.
    """
    ell = prefix.length
    if ell > horizon:
        raise ValueError(f"prefix length {ell} exceeds horizon {horizon}")
    total = float(np.sum(prefix.rewards))
    state = prefix.states[-1][None, :]
    for t in range(ell + 1, horizon + 1):
        action = deterministic_actions(target_policy, state)
        state = dyn.predict(state, action)
        if not np.all(np.isfinite(state)):
            raise RuntimeError(f"learned-dynamics rollout non-finite at step {t}")
        total += float(np.asarray(reward_fn(state)).ravel()[0])
    return total


def avg_reward_extrapolate(rewards: np.ndarray, n_obs: int, n_full: int) -> float:
    """Scale the summed observed rewards by the count ratio."""
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) != n_obs:
        raise ValueError(f"got {len(rewards)} rewards, expected n_obs={n_obs}")
    if not 1 <= n_obs <= n_full:
        raise ValueError("need 1 <= n_obs <= n_full")
    return float(n_full / n_obs * np.sum(rewards))


def last_reward_extrapolate(rewards: np.ndarray, n_full: int) -> float:
    """Assume every reward equals the last observed one."""
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) == 0:
        raise ValueError("need at least one observed reward")
    return float(n_full * rewards[-1])


def offpolicy_mean(train: PolicyDataset) -> float:
    """Mean historical value; ignores the new policy entirely."""
    if not train.records:
        raise ValueError("empty dataset: no historical values to average")
    train.require_true_values()
    return float(np.mean([r.true_value for r in train.records]))


# ---------------------------------------------------------------------------
# battery: variance-of-capacity-difference feature


DELTA_Q_EPS = 1e-12


def delta_q_feature(curve: CapacityCurve | Sequence[tuple[float, float]]) -> float:
    """log |capacity(cycle 5) - capacity(cycle 4)|, floored to stay finite."""
    if isinstance(curve, CapacityCurve):
        cycles, caps = curve.cycles, curve.capacities
    else:
        pts = np.asarray(curve, dtype=float)
        cycles, caps = pts[:, 0], pts[:, 1]
    by_cycle = {int(c): float(v) for c, v in zip(cycles, caps)}
    if 4 not in by_cycle or 5 not in by_cycle:
        raise ValueError("need capacities at cycles 4 and 5")
    return float(np.log(max(abs(by_cycle[5] - by_cycle[4]), DELTA_Q_EPS)))


@dataclass
class DeltaQClassifier:
    clf: LogisticRegressionCV | None
    constant: str | None = None  # set when training labels were single-class

    def predict(self, features: np.ndarray) -> list[str]:
        features = np.atleast_1d(np.asarray(features, dtype=float))
        if self.constant is not None:
            return [self.constant] * len(features)
        pred = self.clf.predict(features[:, None])
        return ["low" if p == 1 else "high" for p in pred]


def delta_q_classify(features: np.ndarray, labels: Sequence[str], seed: int = 0) -> DeltaQClassifier:
    """Logistic lifetime classifier on the scalar feature, regularization CV'd internally."""
    features = np.asarray(features, dtype=float)
    y = np.array([1 if lab == "low" else 0 for lab in labels])
    if len(np.unique(y)) < 2:
        return DeltaQClassifier(None, constant=labels[0])
    # cv=10 unless a class is too small to spread over 10 folds
    cv = int(min(10, np.bincount(y).min()))
    clf = LogisticRegressionCV(cv=max(cv, 2), max_iter=2000, random_state=seed)
    clf.fit(features[:, None], y)
    return DeltaQClassifier(clf)


def majority_class(labels: Sequence[str]) -> str:
    """Modal training label; the no-information battery baseline."""
    vals, counts = np.unique(np.asarray(labels), return_counts=True)
    return str(vals[int(np.argmax(counts))])
