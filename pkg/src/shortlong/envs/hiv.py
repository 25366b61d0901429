"""HIV treatment simulator: the 6-state Ernst model under two binary drugs.

State components (raw units, cells or copies per ml):

    T1   healthy type-1 cells          T2   healthy type-2 cells
    T1s  infected type-1 cells         T2s  infected type-2 cells
    V    free virus                    E    immune effectors

Actions are efficacy pairs (eps1, eps2): reverse-transcriptase inhibitor
on/off gives eps1 in {0, 0.7}, protease inhibitor on/off gives eps2 in
{0, 0.3}.  One decision step integrates the ODE over 5 days with
fixed-substep RK4.  Stored states are raw values divided by 1e5 and the
reward keeps only the state-dependent part of the classic objective,
(-0.1 V + 1000 E) / 1e8; drug-penalty terms are excluded.

All model constants live in this file so substituting a different
parameterization is a one-file change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import SimulationError
from ..seeding import generator

# Ernst model coefficients.
LAMBDA1 = 1e4    # type-1 cell production / ml / day
LAMBDA2 = 31.98  # type-2 cell production / ml / day
D1 = 0.01        # healthy cell death rate
D2 = 0.01
F_TREAT = 0.34   # RTI efficacy carry-over onto type-2 infection
K1 = 8e-7        # infection rate, type 1
K2 = 1e-4        # infection rate, type 2
DELTA = 0.7      # infected cell death rate
M1 = 1e-5        # immune-induced clearance, type 1
M2 = 1e-5
NT = 100.0       # virions per lysed cell
C = 13.0         # virus natural clearance rate
RHO1 = 1.0       # virions lost per infection event
RHO2 = 1.0
LAMBDA_E = 1.0   # effector production
B_E = 0.3        # max effector birth rate
K_B = 100.0      # birth saturation constant
D_E = 0.25       # max effector death rate
K_D = 500.0      # death saturation constant
DELTA_E = 0.1    # natural effector decay

# Unhealthy quasi-steady state used to seed evaluation pools.
DEFAULT_START_RAW = np.array([163573.0, 5.0, 11945.0, 46.0, 63919.0, 24.0])

# (eps1, eps2) pairs: RTI only, PI only, both, neither.
HIV_ACTIONS = np.array([[0.7, 0.0], [0.0, 0.3], [0.7, 0.3], [0.0, 0.0]])


@dataclass(frozen=True)
class HivConfig:
    state_scale: float = 1e5
    reward_scale: float = 1e8
    step_days: float = 5.0
    horizon: int = 200
    # Substep count is set by stability, not accuracy: the stiffest mode
    # is type-2 infection at rate k2*V (plus clearance c=13/day), and V
    # transiently reaches ~1.9e6 copies/ml when treatment stops after
    # long suppression, i.e. ~200/day.  RK4 needs |lambda·h| < 2.78, so
    # h = 0.01 day (500 substeps per 5-day step) holds up to V ~ 2.6e6.
    # 20 substeps diverge even from mildly perturbed starts.
    rk4_substeps: int = 500
    actions: np.ndarray = field(default_factory=lambda: HIV_ACTIONS.copy())


def _derivatives(s: np.ndarray, eps1: np.ndarray, eps2: np.ndarray) -> np.ndarray:
    """Raw-unit time derivatives, batched over rows of s (n, 6)."""
    T1, T2, T1s, T2s, V, E = (s[:, i] for i in range(6))
    infect1 = (1.0 - eps1) * K1 * V * T1
    infect2 = (1.0 - F_TREAT * eps1) * K2 * V * T2
    sick = T1s + T2s
    out = np.empty_like(s)
    out[:, 0] = LAMBDA1 - D1 * T1 - infect1
    out[:, 1] = LAMBDA2 - D2 * T2 - infect2
    out[:, 2] = infect1 - DELTA * T1s - M1 * E * T1s
    out[:, 3] = infect2 - DELTA * T2s - M2 * E * T2s
    out[:, 4] = (
        (1.0 - eps2) * NT * DELTA * sick
        - C * V
        - ((1.0 - eps1) * RHO1 * K1 * T1 + (1.0 - F_TREAT * eps1) * RHO2 * K2 * T2) * V
    )
    out[:, 5] = (
        LAMBDA_E
        + B_E * sick / (sick + K_B) * E
        - D_E * sick / (sick + K_D) * E
        - DELTA_E * E
    )
    return out


@dataclass(frozen=True)
class HivEnv:
    """Batched rollout interface over the HIV ODE (deterministic)."""

    config: HivConfig = field(default_factory=HivConfig)
    env_id: str = "hiv"
    state_dim: int = 6
    action_dim: int = 2
    noise_per_step: int = 0

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def transition(self, states: np.ndarray, actions: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        cfg = self.config
        s = np.atleast_2d(np.asarray(states, dtype=float)) * cfg.state_scale
        acts = np.atleast_2d(np.asarray(actions, dtype=float))
        eps1, eps2 = acts[:, 0], acts[:, 1]
        h = cfg.step_days / cfg.rk4_substeps
        # Intermediate overflow only occurs on the way to the explicit
        # non-finite check below, so silence numpy's warnings here.
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(cfg.rk4_substeps):
                k1 = _derivatives(s, eps1, eps2)
                k2 = _derivatives(s + 0.5 * h * k1, eps1, eps2)
                k3 = _derivatives(s + 0.5 * h * k2, eps1, eps2)
                k4 = _derivatives(s + h * k3, eps1, eps2)
                s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(s).all():
            bad = sorted(set(np.where(~np.isfinite(s))[1].tolist()))
            raise SimulationError(f"hiv: non-finite state components {bad} after integration")
        return s / cfg.state_scale

    def reward(self, states: np.ndarray) -> np.ndarray:
        """State-only reward (-0.1 V + 1000 E) / reward_scale, on normalized states."""
        cfg = self.config
        s = np.atleast_2d(np.asarray(states, dtype=float)) * cfg.state_scale
        return (-0.1 * s[:, 4] + 1000.0 * s[:, 5]) / cfg.reward_scale


def hiv_step(state: np.ndarray, action: np.ndarray, env: HivEnv | None = None) -> tuple[np.ndarray, float]:
    """One 5-day step from a single normalized state; reward is of the current state."""
    env = env or HivEnv()
    state = np.asarray(state, dtype=float)
    if np.any(state < 0):
        raise ValueError("hiv state components must be nonnegative")
    nxt = env.transition(state[None, :], np.asarray(action, dtype=float)[None, :])[0]
    return nxt, float(env.reward(state[None, :])[0])


def hiv_initial_states(n: int, rate: float = 0.6, seed: int = 0) -> np.ndarray:
    """n normalized starts: default state perturbed per-component by Uniform(-rate, rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    mult = 1.0 + generator(seed, "hiv-init").uniform(-rate, rate, size=(n, 6))
    return DEFAULT_START_RAW * mult / HivConfig.state_scale
