"""Short-long horizon policy evaluation.

Predicts the full-horizon value of a sequential decision policy from a
short on-policy prefix plus full-horizon data of older policies, via
weighted short-feature regression (SLEV) and adapted global dynamics
(SLED), with standard baselines and built-in simulators for
benchmarking.
"""

__version__ = "0.1.0"

from .core import (
    PolicyDataset,
    PolicyRecord,
    SimulationError,
    Trajectory,
    featurize_short,
    load_dataset,
    policy_value_mc,
    return_of,
    rollout,
    rollout_groups,
    rollout_many,
    save_dataset,
)
from .density import DensityRatio, constant_ratio, fit_density_ratio, ratio
from .envs import make_env
from .harness import (
    BoundInputs,
    ExperimentConfig,
    SyntheticBoundSpec,
    risk_bound,
    rmse,
    safety_accuracy,
    safety_detect,
    safety_threshold,
    verify_bound_empirically,
    write_report,
)
from .regress import MlpHyper, RegressionModel, kfold_split, mlp_fit, nlls_fit
from .sled import (
    Adapter,
    CurveModel,
    GlobalDynamics,
    battery_classify,
    battery_fit_base,
    battery_fit_lifetime,
    calc_returns,
    fit_adapter,
    fit_global_model,
)
from .slev import SlevModel, slev_fit, slev_predict

__all__ = [
    "Adapter",
    "BoundInputs",
    "CurveModel",
    "DensityRatio",
    "ExperimentConfig",
    "GlobalDynamics",
    "MlpHyper",
    "PolicyDataset",
    "PolicyRecord",
    "RegressionModel",
    "SimulationError",
    "SlevModel",
    "SyntheticBoundSpec",
    "Trajectory",
    "battery_classify",
    "battery_fit_base",
    "battery_fit_lifetime",
    "calc_returns",
    "constant_ratio",
    "featurize_short",
    "fit_adapter",
    "fit_density_ratio",
    "fit_global_model",
    "kfold_split",
    "load_dataset",
    "make_env",
    "mlp_fit",
    "nlls_fit",
    "policy_value_mc",
    "ratio",
    "return_of",
    "risk_bound",
    "rmse",
    "rollout",
    "rollout_groups",
    "rollout_many",
    "safety_accuracy",
    "safety_detect",
    "safety_threshold",
    "save_dataset",
    "slev_fit",
    "slev_predict",
    "verify_bound_empirically",
    "write_report",
]
