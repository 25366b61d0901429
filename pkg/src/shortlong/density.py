"""Density-ratio estimation between short-horizon feature distributions.

The ratio w(x) = p_test(x) / p_train(x) reweights regression losses so a
model trained on historical policies targets the feature distribution of
the policies being evaluated.  Estimation is classifier-based: a logistic
discriminator labels train features 0 and test features 1, and

    ratio(x) = clip( p(1|x) / (1 - p(1|x)) * n_train / n_test, 0, clip_max )

The prior-correction factor undoes the class imbalance; clipping bounds
the weights (Assumption: the historical data covers the short-horizon
state distribution, so the true ratio is bounded by some M).  A constant
ratio of 1 reproduces unweighted regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression

DEFAULT_CLIP_MAX = 20.0


@dataclass
class DensityRatio:
    """Fitted discriminator coefficients; ``coef is None`` means identically ``constant``."""

    clip_max: float
    prior_correction: float = 1.0
    coef: np.ndarray | None = None
    intercept: float = 0.0
    constant: float = 1.0
    feature_dim: int | None = None

    def to_json(self) -> str:
        obj = {
            "clip_max": self.clip_max,
            "prior_correction": self.prior_correction,
            "coef": None if self.coef is None else [format(v, ".17g") for v in self.coef],
            "intercept": format(self.intercept, ".17g"),
            "constant": format(self.constant, ".17g"),
            "feature_dim": self.feature_dim,
        }
        return json.dumps(obj)

    @staticmethod
    def from_json(text: str) -> "DensityRatio":
        obj = json.loads(text)
        coef = None if obj["coef"] is None else np.asarray([float(v) for v in obj["coef"]])
        return DensityRatio(
            clip_max=float(obj["clip_max"]),
            prior_correction=float(obj["prior_correction"]),
            coef=coef,
            intercept=float(obj["intercept"]),
            constant=float(obj["constant"]),
            feature_dim=obj["feature_dim"],
        )


def constant_ratio(value: float = 1.0, clip_max: float = DEFAULT_CLIP_MAX) -> DensityRatio:
    """A DensityRatio returning ``value`` everywhere (w-hat = 1 mode)."""
    if not 0.0 <= value <= clip_max:
        raise ValueError("constant ratio must lie in [0, clip_max]")
    return DensityRatio(clip_max=clip_max, constant=value)


def fit_density_ratio(
    train_feats: np.ndarray,
    test_feats: np.ndarray,
    clip_max: float = DEFAULT_CLIP_MAX,
    seed: int = 0,
) -> DensityRatio:
    """Fit the logistic discriminator (train=0, test=1) and wrap it as a ratio."""
    train_feats = np.atleast_2d(np.asarray(train_feats, dtype=float))
    test_feats = np.atleast_2d(np.asarray(test_feats, dtype=float))
    if train_feats.shape[0] == 0 or test_feats.shape[0] == 0:
        raise ValueError("both feature sets must be nonempty")
    if train_feats.shape[1] != test_feats.shape[1]:
        raise ValueError("train and test feature dimensions differ")
    X = np.vstack([train_feats, test_feats])
    labels = np.concatenate([np.zeros(len(train_feats)), np.ones(len(test_feats))])
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit(X, labels)
    return DensityRatio(
        clip_max=float(clip_max),
        prior_correction=len(train_feats) / len(test_feats),
        coef=clf.coef_[0].copy(),
        intercept=float(clf.intercept_[0]),
        feature_dim=X.shape[1],
    )


def ratio(dr: DensityRatio, x: np.ndarray) -> float | np.ndarray:
    """Evaluate the clipped density ratio at x (a vector or a matrix of rows)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if dr.coef is None:
        out = np.full(X.shape[0], float(np.clip(dr.constant, 0.0, dr.clip_max)))
    else:
        if X.shape[1] != dr.feature_dim:
            raise ValueError(f"feature dim {X.shape[1]} does not match fitted dim {dr.feature_dim}")
        # odds = p/(1-p) = exp(logit); clip the logit too so exp stays finite
        logit = np.clip(X @ dr.coef + dr.intercept, -500.0, 500.0)
        out = np.clip(np.exp(logit) * dr.prior_correction, 0.0, dr.clip_max)
    return float(out[0]) if single else out
