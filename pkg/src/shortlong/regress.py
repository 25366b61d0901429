"""Regression engines: a small weighted MLP and nonlinear least squares.

The MLP is implemented directly on numpy so that the weighted objective,
optimizer behaviour, and early stopping are fully pinned down by this file
rather than by a framework version.  The training objective is

    (1/B) * sum_i weights_i * ||f(x_i) - y_i||^2  +  weight_decay * ||theta||^2

estimated per minibatch of size B, optimized with Adam.  Passing unit
weights recovers plain least squares; a sample with weight 2 contributes
exactly like a duplicated sample.

Curve fitting (``nlls_fit``) covers the shape families used by the
capacity-curve models: a decreasing logistic plus polynomial fallbacks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .seeding import generator

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpHyper:
    """Architecture and optimization settings for one MLP fit.

    ``layer_sizes`` lists every layer width including input and output,
    e.g. ``[7, 50, 25, 10, 1]``.  ``patience`` counts consecutive
    non-improving validation checks (one check every ``eval_every``
    updates) before stopping; ``patience=0`` disables early stopping and
    the validation split entirely.
    """

    layer_sizes: list[int]
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    max_updates: int = 8000
    batch_size: int = 100
    patience: int = 5
    eval_every: int = 100
    validation_fraction: float = 0.1

    def replace(self, **kw) -> "MlpHyper":
        return dataclasses.replace(self, **kw)


@dataclass
class FitReport:
    """Bookkeeping from one mlp_fit call.

    ``validation_loss`` is the best held-out loss when early stopping ran,
    else the final training-batch loss.
    """

    train_loss_curve: list[float]
    validation_loss: float
    stopped_at_update: int


@dataclass
class RegressionModel:
    """A fitted MLP: ReLU hidden layers, linear output."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    squeeze_output: bool = True
    fit_report: FitReport | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        out = _forward(self.weights, self.biases, np.atleast_2d(X))[-1]
        if self.squeeze_output:
            out = out[:, 0]
        return out[0] if single else out

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.weights + self.biases])

    def to_json(self) -> str:
        flat = self.parameter_vector()
        return (
            '{"layer_sizes": '
            + json.dumps(self.layer_sizes)
            + ', "squeeze_output": '
            + ("true" if self.squeeze_output else "false")
            + ', "params": ['
            + ", ".join(format(v, ".17g") for v in flat)
            + "]}"
        )

    @staticmethod
    def from_json(text: str) -> "RegressionModel":
        obj = json.loads(text)
        sizes = [int(s) for s in obj["layer_sizes"]]
        flat = np.asarray(obj["params"], dtype=float)
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
        for fan_out in sizes[1:]:
            biases.append(flat[pos : pos + fan_out])
            pos += fan_out
        if pos != len(flat):
            raise ValueError("parameter array length does not match layer sizes")
        return RegressionModel(sizes, weights, biases, squeeze_output=bool(obj["squeeze_output"]))


def _init_params(layer_sizes: Sequence[int], seed: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    rng = generator(seed, "mlp-init")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights: list[np.ndarray], biases: list[np.ndarray], X: np.ndarray) -> list[np.ndarray]:
    """Activations per layer; hidden layers ReLU, output linear."""
    acts = [X]
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def loss_and_gradients(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    weight_decay: float,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Objective value and exact gradients on the given batch.

    Loss is mean over rows of weighted squared error plus
    ``weight_decay * ||theta||^2``; gradients match it analytically
    (this pairing is what the finite-difference tests check).
    """
    n = X.shape[0]
    acts = _forward(weights, biases, X)
    err = acts[-1] - y
    w_col = sample_weights[:, None]
    data_loss = float(np.sum(w_col * err**2) / n)

    grad_w = [np.empty_like(W) for W in weights]
    grad_b = [np.empty_like(b) for b in biases]
    delta = 2.0 * w_col * err / n
    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (acts[i] > 0.0)

    penalty = 0.0
    for i, (W, b) in enumerate(zip(weights, biases)):
        penalty += float(np.sum(W**2) + np.sum(b**2))
        grad_w[i] += 2.0 * weight_decay * W
        grad_b[i] += 2.0 * weight_decay * b
    return data_loss + weight_decay * penalty, grad_w, grad_b


def weighted_loss(model: RegressionModel, X: np.ndarray, y: np.ndarray, sample_weights: np.ndarray | None = None) -> float:
    """Mean weighted squared error of ``model`` on (X, y)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y2 = _as_targets(y, model.layer_sizes[-1])
    w = np.ones(X.shape[0]) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    err = _forward(model.weights, model.biases, X)[-1] - y2
    return float(np.sum(w[:, None] * err**2) / X.shape[0])


def _as_targets(y: np.ndarray, out_dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != out_dim:
        raise ValueError(f"target dim {y.shape[1]} does not match output layer {out_dim}")
    return y


def mlp_fit(
    X: np.ndarray,
    y: np.ndarray,
    hyper: MlpHyper,
    seed: int,
    sample_weights: np.ndarray | None = None,
) -> RegressionModel:
    """Fit an MLP to (X, y) under the weighted squared-error objective.

    When ``hyper.patience >= 1`` and there are at least 10 rows, a seeded
    ``validation_fraction`` split is held out; training stops once the
    validation loss fails to improve ``patience`` checks in a row and the
    best-seen parameters are restored.  Otherwise the full budget of
    ``max_updates`` Adam steps is spent.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = _as_targets(y, hyper.layer_sizes[-1])
    squeeze = np.asarray(y).ndim == 2 and hyper.layer_sizes[-1] == 1
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValueError("X and y row counts differ")
    if X.shape[1] != hyper.layer_sizes[0]:
        raise ValueError(f"feature dim {X.shape[1]} does not match input layer {hyper.layer_sizes[0]}")
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("sample_weights must be one weight per row")
    if np.any(w < 0):
        raise ValueError("sample_weights must be nonnegative")

    use_val = hyper.patience >= 1 and n >= 10
    if use_val:
        perm = generator(seed, "mlp-val-split").permutation(n)
        n_val = max(1, int(round(hyper.validation_fraction * n)))
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
    else:
        tr_idx = np.arange(n)
        val_idx = np.empty(0, dtype=int)
    Xt, yt, wt = X[tr_idx], y[tr_idx], w[tr_idx]
    Xv, yv, wv = X[val_idx], y[val_idx], w[val_idx]
    n_train = Xt.shape[0]

    weights, biases = _init_params(hyper.layer_sizes, seed)
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    best_val = np.inf
    best_params = None
    bad_checks = 0
    curve: list[float] = []

    rng = generator(seed, "mlp-batches")
    order = np.empty(0, dtype=int)
    cursor = 0
    batch = min(hyper.batch_size, n_train)
    last_loss = np.inf
    step = 0
    for step in range(1, hyper.max_updates + 1):
        if batch >= n_train:
            idx = slice(None)
        else:
            if cursor + batch > len(order):
                order = rng.permutation(n_train)
                cursor = 0
            idx = order[cursor : cursor + batch]
            cursor += batch
        last_loss, gw, gb = loss_and_gradients(weights, biases, Xt[idx], yt[idx], wt[idx], hyper.weight_decay)
        if not np.isfinite(last_loss):
            raise RuntimeError(f"non-finite training loss at update {step}")
        grads = gw + gb
        bc1 = 1.0 - ADAM_BETA1**step
        bc2 = 1.0 - ADAM_BETA2**step
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= ADAM_BETA1
            mi += (1.0 - ADAM_BETA1) * g
            vi *= ADAM_BETA2
            vi += (1.0 - ADAM_BETA2) * g**2
            p -= hyper.learning_rate * (mi / bc1) / (np.sqrt(vi / bc2) + ADAM_EPS)

        if step % hyper.eval_every == 0:
            curve.append(float(last_loss))
            if use_val:
                err = _forward(weights, biases, Xv)[-1] - yv
                val_loss = float(np.sum(wv[:, None] * err**2) / len(val_idx))
                if val_loss < best_val - 1e-12:
                    best_val = val_loss
                    best_params = [p.copy() for p in params]
                    bad_checks = 0
                else:
                    bad_checks += 1
                    if bad_checks >= hyper.patience:
                        break

    if best_params is not None:
        k = len(weights)
        weights = best_params[:k]
        biases = best_params[k:]

    report = FitReport(
        train_loss_curve=curve,
        validation_loss=float(best_val) if use_val else float(last_loss),
        stopped_at_update=step,
    )
    return RegressionModel(list(hyper.layer_sizes), weights, biases, squeeze_output=squeeze, fit_report=report)


def mlp_predict(model: RegressionModel, X: np.ndarray) -> np.ndarray:
    """Predictions of a fitted model; accepts a single row or a matrix."""
    return model.predict(X)


def kfold_split(n_items: int, k: int, seed: int) -> list[np.ndarray]:
    """Partition range(n_items) into k seeded folds with sizes differing by at most one."""
    if not 2 <= k <= n_items:
        raise ValueError(f"need 2 <= k <= n_items, got k={k}, n_items={n_items}")
    perm = generator(seed, "kfold").permutation(n_items)
    return [np.sort(fold) for fold in np.array_split(perm, k)]


# --- curve families -------------------------------------------------------

@dataclass(frozen=True)
class CurveFamily:
    """A parametric scalar curve y = fn(t, params)."""

    name: str
    n_params: int
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    default_init: tuple[float, ...]
    linear_in_params: bool = False


def _negexp(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    # Decreasing logistic for a > 0; argument clipped to keep exp finite.
    z = np.clip(p[0] * t + p[1], -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(z))


def _linear(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p[0] + p[1] * t


def _quadratic(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p[0] + p[1] * t + p[2] * t * t


CURVE_FAMILIES: dict[str, CurveFamily] = {
    "negexp": CurveFamily("negexp", 2, _negexp, (0.01, -np.log(4.0))),
    "linear": CurveFamily("linear", 2, _linear, (1.0, 0.0), linear_in_params=True),
    "quadratic": CurveFamily("quadratic", 3, _quadratic, (1.0, 0.0, 0.0), linear_in_params=True),
}


@dataclass
class NllsFit:
    """Best parameters found for one curve family."""

    family: str
    params: np.ndarray
    sse: float

    def predict(self, t: np.ndarray) -> np.ndarray:
        fam = CURVE_FAMILIES[self.family]
        return fam.fn(np.asarray(t, dtype=float), self.params)


def nlls_fit(
    family: str,
    t: np.ndarray,
    y: np.ndarray,
    init: Sequence[float] | None = None,
    bounds: tuple[Sequence[float], Sequence[float]] | None = None,
    n_starts: int = 16,
    seed: int = 0,
) -> NllsFit:
    """Least-squares fit of a named curve family to points (t, y).

    Families linear in their parameters are solved exactly by lstsq
    (unless bounds are given).  The logistic family uses multi-start
    Levenberg-Marquardt style optimization: the provided init plus
    ``n_starts - 1`` jittered copies, keeping the lowest sum of squared
    residuals.
    """
    if family not in CURVE_FAMILIES:
        raise ValueError(f"unknown curve family {family!r}; known: {sorted(CURVE_FAMILIES)}")
    fam = CURVE_FAMILIES[family]
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.shape != y.shape:
        raise ValueError("t and y must have equal length")
    if len(t) < fam.n_params:
        raise ValueError(f"{family} needs at least {fam.n_params} points, got {len(t)}")

    if fam.linear_in_params and bounds is None:
        design = np.vander(t, fam.n_params, increasing=True)
        params, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = design @ params - y
        return NllsFit(family, params, float(resid @ resid))

    p0 = np.asarray(init if init is not None else fam.default_init, dtype=float)
    if p0.shape != (fam.n_params,):
        raise ValueError(f"{family} expects {fam.n_params} parameters")
    lo, hi = (-np.inf, np.inf) if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
    p0 = np.clip(p0, lo, hi)
    rng = generator(seed, "nlls", family)
    starts = [p0]
    for _ in range(max(0, n_starts - 1)):
        jitter = p0 * np.exp(rng.normal(0.0, 0.7, size=p0.shape)) + rng.normal(0.0, 0.05, size=p0.shape)
        starts.append(np.clip(jitter, lo, hi))

    # Never worsen the caller's starting point.
    init_resid = fam.fn(t, p0) - y
    best = NllsFit(family, p0.copy(), float(init_resid @ init_resid))
    for start in starts:
        try:
            res = least_squares(lambda p: fam.fn(t, p) - y, np.clip(start, lo, hi), bounds=(lo, hi))
        except ValueError:
            continue
        sse = float(2.0 * res.cost)
        if sse < best.sse:
            best = NllsFit(family, res.x, sse)
    return best
