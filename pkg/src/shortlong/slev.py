"""SLEV: short-long estimation of value.

Predicts a policy's full-horizon return from its short on-policy prefix
by regressing, over historical policies, the featurized first ell steps
onto the observed full-horizon return.  The regression is density-ratio
weighted so the training objective targets the test policies' feature
distribution; a constant ratio of 1 gives the unweighted variant, which
works well in practice.

Hyperparameters are selected by k-fold cross-validation at the policy
level (a policy's rollouts never straddle folds), and the final
predictor is the average of the k fold-models refit at the selected
setting during CV.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PolicyDataset, PolicyRecord, featurize_short
from .density import DensityRatio, constant_ratio, ratio
from .regress import MlpHyper, RegressionModel, kfold_split, mlp_fit
from .seeding import child_seed, parallel_map

# Appendix-style defaults: learning rates x weight decays, 8000 updates.
HIV_WEIGHT_DECAYS = (25.0, 10.0, 1.0, 0.1)
KIDNEY_WEIGHT_DECAYS = (1.0, 0.5, 0.1, 0.05)
LEARNING_RATES = (1e-2, 1e-3, 1e-4)


def default_hyper_grid(
    n_features: int,
    weight_decays: tuple[float, ...] = HIV_WEIGHT_DECAYS,
    learning_rates: tuple[float, ...] = LEARNING_RATES,
    max_updates: int = 8000,
) -> list[MlpHyper]:
    """The standard SLEV search grid over one fixed architecture."""
    layers = [n_features, 50, 25, 10, 1]
    return [
        MlpHyper(layer_sizes=layers, learning_rate=lr, weight_decay=wd, max_updates=max_updates)
        for lr in learning_rates
        for wd in weight_decays
    ]


@dataclass
class SlevModel:
    """The k fold-models at the selected hyperparameter, averaged at prediction.

    Members are trained on standardized features and targets; the stored
    scalers map predictions back to the original units (None when the
    model was assembled by hand from raw-scale members).
    """

    members: list[RegressionModel]
    best_hyper: MlpHyper
    density: DensityRatio
    ell: int
    include_rewards: bool
    fold_losses: np.ndarray  # (n_hypers, k) validation losses from CV
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float = 0.0
    y_scale: float = 1.0


def _weighted_loss(pred: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    return float(np.mean(w * (pred - y) ** 2))


def _fit_job(args) -> tuple[int, int, RegressionModel, float]:
    hi, fi, X_tr, y_tr, w_tr, X_va, y_va, w_va, hyper, seed = args
    try:
        model = mlp_fit(X_tr, y_tr, hyper, seed, sample_weights=w_tr)
    except Exception as exc:
        raise RuntimeError(f"fold {fi}, hyper {hi} ({hyper.learning_rate=}, {hyper.weight_decay=}): {exc}") from exc
    loss = _weighted_loss(model.predict(X_va), y_va, w_va)
    return hi, fi, model, loss


def slev_fit(
    train: PolicyDataset,
    ell: int,
    include_rewards: bool,
    hyper_grid: list[MlpHyper],
    k: int,
    density: DensityRatio | None,
    seed: int,
    workers: int | None = None,
) -> SlevModel:
    """Cross-validated weighted regression from ell-step features to returns.

    For every hyperparameter and fold, fits on the other folds and scores
    the weighted loss on the held-out fold; picks the hyperparameter with
    the lowest summed fold loss (ties to the earlier grid entry) and
    keeps its k fold-models.  Fold assignment permutes policies sorted by
    id with a seeded shuffle, so record order in `train` is irrelevant.
    Features and targets are z-scored before fitting and predictions are
    mapped back, keeping the decay grid meaningful at any return scale.
    """
    if not hyper_grid:
        raise ValueError("hyper_grid must be nonempty")
    if k < 2:
        raise ValueError("need k >= 2 folds")
    train.require_true_values()
    density = density if density is not None else constant_ratio(1.0)

    order = sorted(range(len(train.records)), key=lambda i: train.records[i].policy_id)
    records = [train.records[i] for i in order]
    X = np.stack([featurize_short(r, ell, include_rewards) for r in records])
    y = np.array([r.true_value for r in records])
    w = np.asarray(ratio(density, X), dtype=float)

    # the weight-decay grid assumes unit-scale inputs and targets, so the
    # regression runs in standardized coordinates (ratios use raw features)
    x_mean, x_scale = X.mean(axis=0), X.std(axis=0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    y_mean, y_scale = float(y.mean()), float(y.std())
    if y_scale == 0.0:
        y_scale = 1.0
    Xs = (X - x_mean) / x_scale
    ys = (y - y_mean) / y_scale

    folds = kfold_split(len(records), k, int(child_seed(seed, "slev-folds").generate_state(1)[0]))
    jobs = []
    for hi, hyper in enumerate(hyper_grid):
        for fi, val_idx in enumerate(folds):
            tr_idx = np.setdiff1d(np.arange(len(records)), val_idx)
            fit_seed = int(child_seed(seed, "slev-fit", hi, fi).generate_state(1)[0])
            jobs.append((hi, fi, Xs[tr_idx], ys[tr_idx], w[tr_idx], Xs[val_idx], ys[val_idx], w[val_idx], hyper, fit_seed))
    results = parallel_map(_fit_job, jobs, workers)

    losses = np.full((len(hyper_grid), k), np.nan)
    models: dict[tuple[int, int], RegressionModel] = {}
    for hi, fi, model, loss in results:
        losses[hi, fi] = loss
        models[(hi, fi)] = model
    summed = losses.sum(axis=1)
    best_hi = int(np.argmin(summed))  # argmin takes the first minimum: earlier grid entry wins ties
    members = [models[(best_hi, fi)] for fi in range(k)]
    return SlevModel(members, hyper_grid[best_hi], density, ell, include_rewards, losses,
                     x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, y_scale=y_scale)


def slev_predict(model: SlevModel, test_record: PolicyRecord, ell: int) -> float:
    """Mean of the k member predictions on the record's ell-step features."""
    if ell != model.ell:
        raise ValueError(f"model was fit at ell={model.ell}, asked to predict at ell={ell}")
    x = featurize_short(test_record, ell, model.include_rewards)
    if model.x_mean is not None:
        x = (x - model.x_mean) / model.x_scale
    raw = float(np.mean([m.predict(x) for m in model.members]))
    return raw * model.y_scale + model.y_mean
