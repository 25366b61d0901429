"""Kidney dialysis surrogate: hemoglobin response to darbepoetin dosing.

A stand-in simulator that preserves the published interface facts: a
5-dim state (current Hb, two lagged Hb values, two lagged doses, all
divided by 500), scalar nonnegative doses, horizon 30, rewards in [0, 1]
after dividing by 10, and a reward determined by past and current Hb.
The dynamics themselves are a surrogate: Hb relaxes toward an anemic
baseline and rises with a saturating response to the recent dose history,
plus small Gaussian process noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..seeding import generator

HB_IDX, HB_LAG1_IDX, HB_LAG2_IDX, DOSE_LAG1_IDX, DOSE_LAG2_IDX = range(5)


@dataclass(frozen=True)
class KidneyConfig:
    state_scale: float = 500.0
    reward_scale: float = 10.0
    horizon: int = 30
    hb_healthy_range: tuple[float, float] = (10.0, 12.0)
    hb_baseline: float = 7.5       # anemic level Hb decays to without treatment
    relax_rate: float = 0.25       # per-step pull toward the baseline
    dose_gain: float = 1.4         # max Hb lift per step from dosing
    dose_max: float = 2.0          # doses clamp here before entering the state
    noise_sd: float = 0.05         # Hb process noise, raw units
    reward_width: float = 1.6      # bump half-width around the healthy midpoint


@dataclass(frozen=True)
class KidneyEnv:
    """Batched rollout interface over the surrogate (1 noise draw per step)."""

    config: KidneyConfig = field(default_factory=KidneyConfig)
    env_id: str = "kidney"
    state_dim: int = 5
    action_dim: int = 1
    noise_per_step: int = 1

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def transition(self, states: np.ndarray, actions: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        cfg = self.config
        s = np.atleast_2d(np.asarray(states, dtype=float)) * cfg.state_scale
        dose = np.clip(np.atleast_2d(np.asarray(actions, dtype=float))[:, 0], 0.0, cfg.dose_max)
        eps = np.zeros(s.shape[0]) if noise is None else np.asarray(noise, dtype=float)[:, 0]

        hb = s[:, HB_IDX]
        recent = 0.5 * dose + 0.3 * s[:, DOSE_LAG1_IDX] + 0.2 * s[:, DOSE_LAG2_IDX]
        lift = cfg.dose_gain * (1.0 - np.exp(-recent))
        hb_next = hb + cfg.relax_rate * (cfg.hb_baseline - hb) + lift + cfg.noise_sd * eps
        hb_next = np.clip(hb_next, 0.0, 25.0)

        out = np.empty_like(s)
        out[:, HB_IDX] = hb_next
        out[:, HB_LAG1_IDX] = hb
        out[:, HB_LAG2_IDX] = s[:, HB_LAG1_IDX]
        out[:, DOSE_LAG1_IDX] = dose
        out[:, DOSE_LAG2_IDX] = s[:, DOSE_LAG1_IDX]
        return out / cfg.state_scale

    def reward(self, states: np.ndarray) -> np.ndarray:
        """Smooth bump in [0, 1] peaking when recent Hb sits mid healthy range."""
        cfg = self.config
        s = np.atleast_2d(np.asarray(states, dtype=float)) * cfg.state_scale
        hb_recent = 0.7 * s[:, HB_IDX] + 0.3 * s[:, HB_LAG1_IDX]
        mid = 0.5 * (cfg.hb_healthy_range[0] + cfg.hb_healthy_range[1])
        raw = cfg.reward_scale * np.exp(-(((hb_recent - mid) / cfg.reward_width) ** 4))
        return raw / cfg.reward_scale


def kidney_step(state: np.ndarray, dose: float, noise: float = 0.0, env: KidneyEnv | None = None) -> tuple[np.ndarray, float]:
    """One step from a single normalized state; reward is of the current state.

    ``noise`` is the standard normal draw for the Hb process noise; the
    default 0 makes the single-step API deterministic.
    """
    if dose < 0:
        raise ValueError("dose must be nonnegative")
    env = env or KidneyEnv()
    state = np.asarray(state, dtype=float)
    nxt = env.transition(state[None, :], np.array([[dose]]), np.array([[noise]]))[0]
    return nxt, float(env.reward(state[None, :])[0])


def kidney_initial_states(n: int, seed: int = 0) -> np.ndarray:
    """n normalized starts with Hb ~ Uniform[8, 13], lags seeded to Hb, zero doses."""
    hb = generator(seed, "kidney-init").uniform(8.0, 13.0, size=n)
    states = np.zeros((n, 5))
    states[:, HB_IDX] = hb
    states[:, HB_LAG1_IDX] = hb
    states[:, HB_LAG2_IDX] = hb
    return states / KidneyConfig.state_scale
