"""Built-in simulators: HIV treatment ODE, kidney dialysis surrogate, battery curves."""

from .battery import (
    CapacityCurve,
    battery_synthesize,
    load_curves,
    measured_lifetime,
    save_curves,
)
from .hiv import HIV_ACTIONS, HivConfig, HivEnv, hiv_initial_states, hiv_step
from .kidney import KidneyConfig, KidneyEnv, kidney_initial_states, kidney_step

ENV_IDS = ("hiv", "kidney")


def make_env(env_id: str):
    """Instantiate a rollout environment by id."""
    if env_id == "hiv":
        return HivEnv()
    if env_id == "kidney":
        return KidneyEnv()
    raise ValueError(f"unknown env_id {env_id!r}; known: {ENV_IDS}")


__all__ = [
    "CapacityCurve",
    "ENV_IDS",
    "HIV_ACTIONS",
    "HivConfig",
    "HivEnv",
    "KidneyConfig",
    "KidneyEnv",
    "battery_synthesize",
    "hiv_initial_states",
    "hiv_step",
    "kidney_initial_states",
    "kidney_step",
    "load_curves",
    "make_env",
    "measured_lifetime",
    "save_curves",
]
