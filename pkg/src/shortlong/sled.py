"""SLED: short-long estimation with dynamics.

Fits one policy-independent dynamics model s_{t+1} = f(s_t) on pooled
historical transitions, then adapts it to a new policy with a small
per-policy correction fit on the ell observed prefix transitions.  The
full-horizon return is the observed prefix reward plus rewards along an
autoregressive rollout of the adapted model.

The battery variant works on capacity-vs-cycle curves: degradation
curves share one shape once right-aligned at end of life, so the global
model is a one-dimensional curve fit and the per-cell adapter is a
horizontal shift, the lifetime-from-center lfc.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .core import PolicyDataset, Trajectory
from .envs.battery import CapacityCurve
from .regress import (
    CURVE_FAMILIES,
    MlpHyper,
    NllsFit,
    RegressionModel,
    kfold_split,
    mlp_fit,
    nlls_fit,
)
from .seeding import child_seed

ADAPTER_FAMILIES = ("identity", "output_affine", "input_shift")


@dataclass
class GlobalFamily:
    """One candidate for the global dynamics fit."""

    name: str  # "linear" or "mlp"
    hyper: MlpHyper | None = None

    def __post_init__(self):
        if self.name not in ("linear", "mlp"):
            raise ValueError(f"unknown global family {self.name!r}")
        if self.name == "mlp" and self.hyper is None:
            raise ValueError("mlp family needs a hyper")


def default_global_families(state_dim: int, max_updates: int = 6000) -> list[GlobalFamily]:
    return [
        GlobalFamily("linear"),
        GlobalFamily("mlp", MlpHyper(
            layer_sizes=[state_dim, 64, 64, state_dim],
            learning_rate=1e-3,
            weight_decay=1e-5,
            max_updates=max_updates,
            batch_size=256,
        )),
    ]


@dataclass
class GlobalDynamics:
    """Policy-independent one-step state predictor."""

    family: str
    state_dim: int
    linear_w: np.ndarray | None = None  # (d, d)
    linear_b: np.ndarray | None = None
    mlp: RegressionModel | None = None
    cv_losses: dict[str, float] = field(default_factory=dict)

    def predict(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.family == "linear":
            return states @ self.linear_w + self.linear_b
        return np.atleast_2d(self.mlp.predict(states))


def _pool_transitions(train: PolicyDataset) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for rec in train.records:
        for traj in rec.trajectories:
            xs.append(traj.states[:-1])
            ys.append(traj.states[1:])
    if not xs:
        raise ValueError("empty transition pool: dataset has no trajectories")
    return np.concatenate(xs), np.concatenate(ys)


def _fit_linear(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # lstsq on [X, 1]: min-norm solution, so one pair is interpolated exactly
    A = np.hstack([X, np.ones((len(X), 1))])
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    return coef[:-1], coef[-1]


def _fit_family(fam: GlobalFamily, X: np.ndarray, Y: np.ndarray, seed: int) -> GlobalDynamics:
    d = X.shape[1]
    if fam.name == "linear":
        w, b = _fit_linear(X, Y)
        return GlobalDynamics("linear", d, linear_w=w, linear_b=b)
    model = mlp_fit(X, Y, fam.hyper, seed)
    return GlobalDynamics("mlp", d, mlp=model)


def fit_global_model(
    train: PolicyDataset,
    families: list[GlobalFamily] | None = None,
    k: int = 5,
    seed: int = 0,
) -> GlobalDynamics:
    """Select a family by k-fold CV over pooled (s_t, s_{t+1}) pairs, refit on all.

    Actions are deliberately absent: the model must average over the
    behavior mixture so a per-policy adapter can specialize it later.
    """
    X, Y = _pool_transitions(train)
    if families is None:
        families = default_global_families(X.shape[1])
    if not families:
        raise ValueError("need at least one candidate family")

    cv_losses: dict[str, float] = {}
    if len(families) > 1:
        k_eff = max(2, min(k, len(X)))
        folds = kfold_split(len(X), k_eff, int(child_seed(seed, "global-folds").generate_state(1)[0]))
        for fam in families:
            total = 0.0
            for fi, val_idx in enumerate(folds):
                tr_idx = np.setdiff1d(np.arange(len(X)), val_idx)
                sub_seed = int(child_seed(seed, "global-fit", fam.name, fi).generate_state(1)[0])
                fit = _fit_family(fam, X[tr_idx], Y[tr_idx], sub_seed)
                total += float(np.mean((fit.predict(X[val_idx]) - Y[val_idx]) ** 2))
            cv_losses[fam.name] = total
        best = min(families, key=lambda f: cv_losses[f.name])
    else:
        best = families[0]

    final = _fit_family(best, X, Y, int(child_seed(seed, "global-final", best.name).generate_state(1)[0]))
    final.cv_losses = cv_losses
    return final


@dataclass
class Adapter:
    """Low-dimensional per-policy correction to the global model.

    identity:       s' = f(s)                      (0 params)
    output_affine:  s'_j = alpha_j f(s)_j + beta_j (2d params)
    input_shift:    s' = f(s + delta)              (d params)
    """

    family: str
    params: np.ndarray
    fallback: bool = False  # True when the prefix was too short to fit anything

    def n_params(self) -> int:
        return len(self.params)


def adapter_param_count(family: str, state_dim: int) -> int:
    return {"identity": 0, "output_affine": 2 * state_dim, "input_shift": state_dim}[family]


def adapted_predict(model: GlobalDynamics, adapter: Adapter, states: np.ndarray) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    d = model.state_dim
    if adapter.family == "identity":
        return model.predict(states)
    if adapter.family == "output_affine":
        alpha, beta = adapter.params[:d], adapter.params[d:]
        return alpha * model.predict(states) + beta
    if adapter.family == "input_shift":
        return model.predict(states + adapter.params)
    raise ValueError(f"unknown adapter family {adapter.family!r}")


def _prefix_pairs(prefix: Trajectory | Sequence[Trajectory], ell: int) -> tuple[np.ndarray, np.ndarray]:
    trajs = [prefix] if isinstance(prefix, Trajectory) else list(prefix)
    xs, ys = [], []
    for traj in trajs:
        if traj.length < ell:
            raise ValueError(f"prefix has {traj.length} steps, need ell={ell}")
        xs.append(traj.states[:ell])
        ys.append(traj.states[1:ell + 1])
    return np.concatenate(xs), np.concatenate(ys)


def _fit_adapter_family(family: str, model: GlobalDynamics, X: np.ndarray, Y: np.ndarray) -> Adapter:
    d = model.state_dim
    if family == "identity":
        return Adapter("identity", np.zeros(0))
    if family == "output_affine":
        F = model.predict(X)
        params = np.empty(2 * d)
        for j in range(d):
            A = np.stack([F[:, j], np.ones(len(F))], axis=1)
            sol, *_ = np.linalg.lstsq(A, Y[:, j], rcond=None)
            params[j], params[d + j] = sol
        return Adapter("output_affine", params)
    if family == "input_shift":
        def resid(delta):
            return (model.predict(X + delta) - Y).ravel()
        sol = least_squares(resid, x0=np.zeros(d), method="lm" if len(X) * d >= d else "trf")
        return Adapter("input_shift", sol.x)
    raise ValueError(f"unknown adapter family {family!r}")


def fit_adapter(
    model: GlobalDynamics,
    prefix: Trajectory | Sequence[Trajectory],
    ell: int,
    families: Sequence[str] = ADAPTER_FAMILIES,
    k: int = 5,
    seed: int = 0,
) -> Adapter:
    """Pick an adapter family by CV over the prefix transitions and refit.

    A family is only eligible when the prefix has at least one more
    transition than the family has parameters.  If nothing but identity
    is eligible the identity adapter is returned with `fallback` set.
    """
    X, Y = _prefix_pairs(prefix, ell)
    n = len(X)
    eligible = [f for f in families if n >= adapter_param_count(f, model.state_dim) + 1]
    if "identity" not in eligible:
        eligible = ["identity"] + eligible
    if eligible == ["identity"]:
        return Adapter("identity", np.zeros(0), fallback=True)

    k_eff = min(k, n)
    if k_eff < 2:
        return Adapter("identity", np.zeros(0), fallback=True)
    folds = kfold_split(n, k_eff, int(child_seed(seed, "adapter-folds").generate_state(1)[0]))
    scores = []
    for family in eligible:
        total = 0.0
        for val_idx in folds:
            tr_idx = np.setdiff1d(np.arange(n), val_idx)
            # identity has nothing to fit; others refit per fold
            adapter = Adapter("identity", np.zeros(0)) if family == "identity" \
                else _fit_adapter_family(family, model, X[tr_idx], Y[tr_idx])
            pred = adapted_predict(model, adapter, X[val_idx])
            total += float(np.mean((pred - Y[val_idx]) ** 2))
        scores.append(total)
    best = eligible[int(np.argmin(scores))]
    if best == "identity":
        return Adapter("identity", np.zeros(0))
    return _fit_adapter_family(best, model, X, Y)


def calc_returns(
    model: GlobalDynamics,
    adapter: Adapter,
    prefix: Trajectory,
    horizon: int,
    reward_fn: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Observed prefix rewards plus rewards along the adapted rollout.

    The prefix contributes its ell+1 recorded rewards; states ell+1..horizon
    are produced autoregressively and scored with reward_fn.
    """
    ell = prefix.length
    if ell > horizon:
        raise ValueError(f"prefix length {ell} exceeds horizon {horizon}")
    total = float(np.sum(prefix.rewards))
    state = prefix.states[-1][None, :]
    for t in range(ell + 1, horizon + 1):
        state = adapted_predict(model, adapter, state)
        if not np.all(np.isfinite(state)):
            raise RuntimeError(f"adapted rollout produced a non-finite state at step {t}")
        total += float(np.asarray(reward_fn(state)).ravel()[0])
    return total


# ---------------------------------------------------------------------------
# battery curves: global shape + per-cell horizontal shift


@dataclass
class CurveModel:
    """Global degradation shape in lifetime-aligned coordinates u = cycle - lifetime."""

    family: str
    params: np.ndarray
    cv_losses: dict[str, float] = field(default_factory=dict)

    def shape(self, u: np.ndarray) -> np.ndarray:
        return CURVE_FAMILIES[self.family].fn(np.asarray(u, dtype=float), self.params)


def _aligned_points(curve: CapacityCurve) -> tuple[np.ndarray, np.ndarray]:
    # right-align at end of life and normalize the level so curves coincide
    u = curve.cycles - curve.lifetime
    y = curve.capacities - (np.max(curve.capacities) - 1.0)
    return u, y


_BASE_BOUNDS = {"negexp": (np.array([1e-6, -50.0]), np.array([10.0, 50.0]))}


def battery_fit_base(train_curves: Sequence[CapacityCurve], k: int = 10) -> CurveModel:
    """Fit the shared shape on lifetime-aligned training curves.

    Family is selected by k-fold CV over curves (reduced when there are
    fewer curves than folds; a single curve is scored by training SSE).
    """
    if not train_curves:
        raise ValueError("need at least one training curve")
    for c in train_curves:
        if c.lifetime is None:
            raise ValueError("training curves must carry lifetime labels")
    aligned = [_aligned_points(c) for c in train_curves]
    all_u = np.concatenate([u for u, _ in aligned])
    all_y = np.concatenate([y for _, y in aligned])

    names = list(CURVE_FAMILIES)
    cv_losses: dict[str, float] = {}
    k_eff = min(k, len(train_curves))
    if k_eff >= 2:
        folds = kfold_split(len(train_curves), k_eff, 0)
        for name in names:
            total = 0.0
            for val_idx in folds:
                tr = [i for i in range(len(train_curves)) if i not in set(val_idx.tolist())]
                u_tr = np.concatenate([aligned[i][0] for i in tr])
                y_tr = np.concatenate([aligned[i][1] for i in tr])
                fit = _fit_shape(name, u_tr, y_tr)
                u_va = np.concatenate([aligned[i][0] for i in val_idx])
                y_va = np.concatenate([aligned[i][1] for i in val_idx])
                total += float(np.sum((fit.predict(u_va) - y_va) ** 2))
            cv_losses[name] = total
    else:
        # too few curves to hold any out: score by training SSE
        for name in names:
            cv_losses[name] = _fit_shape(name, all_u, all_y).sse
    best = min(names, key=lambda n: cv_losses[n])
    final = _fit_shape(best, all_u, all_y)
    return CurveModel(best, final.params, cv_losses)


def _fit_shape(name: str, u: np.ndarray, y: np.ndarray) -> NllsFit:
    bounds = _BASE_BOUNDS.get(name)
    return nlls_fit(name, u, y, bounds=bounds, n_starts=4, seed=0)


def battery_fit_lifetime(
    base: CurveModel,
    prefix: Sequence[tuple[float, float]] | np.ndarray,
    k: int = 5,
    lfc_grid: tuple[float, float] | None = None,
) -> float:
    """Estimate a cell's lifetime from a few early (cycle, capacity) points.

    Slides the fitted shape horizontally (lfc = lifetime from center) to
    match the prefix; a vertical-shift variant is considered too, with the
    winner chosen by k-fold CV over the points (k reduced when points are
    few).  Returns NaN when no candidate produces a finite fit.
    """
    pts = np.asarray(prefix, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ValueError("prefix must be a nonempty list of (cycle, capacity) pairs")
    t = pts[:, 0]
    y = pts[:, 1] - (np.max(pts[:, 1]) - 1.0)
    lo, hi = lfc_grid if lfc_grid is not None else (1.0, 4000.0)
    grid = np.arange(lo, hi + 1.0)

    def sse_profiles() -> dict[str, tuple[float, float, float]]:
        # returns per-class (best lfc, y shift, sse) minimized over the grid
        S = base.shape(t[:, None] - grid[None, :])  # (n_pts, n_grid)
        resid0 = S - y[:, None]
        sse0 = np.sum(resid0 ** 2, axis=0)
        shift = np.mean(y[:, None] - S, axis=0)
        sse1 = np.sum((S + shift - y[:, None]) ** 2, axis=0)
        out = {}
        i0 = int(np.argmin(sse0))
        out["lfc"] = (float(grid[i0]), 0.0, float(sse0[i0]))
        i1 = int(np.argmin(sse1))
        out["lfc+y"] = (float(grid[i1]), float(shift[i1]), float(sse1[i1]))
        return out

    def fit_class(use_shift: bool, tt: np.ndarray, yy: np.ndarray) -> tuple[float, float]:
        S = base.shape(tt[:, None] - grid[None, :])
        if use_shift:
            sh = np.mean(yy[:, None] - S, axis=0)
            sse = np.sum((S + sh - yy[:, None]) ** 2, axis=0)
            i = int(np.argmin(sse))
            return float(grid[i]), float(sh[i])
        sse = np.sum((S - yy[:, None]) ** 2, axis=0)
        i = int(np.argmin(sse))
        return float(grid[i]), 0.0

    n = len(t)
    k_eff = min(k, n)
    use_shift = False
    if k_eff >= 2:
        folds = kfold_split(n, k_eff, 0)
        totals = []
        for shift_flag in (False, True):
            total = 0.0
            for val_idx in folds:
                tr_idx = np.setdiff1d(np.arange(n), val_idx)
                if len(tr_idx) == 0:
                    continue
                lfc_f, sh_f = fit_class(shift_flag, t[tr_idx], y[tr_idx])
                pred = base.shape(t[val_idx] - lfc_f) + sh_f
                total += float(np.sum((pred - y[val_idx]) ** 2))
            totals.append(total)
        use_shift = totals[1] < totals[0]  # tie keeps the simpler lfc-only class

    prof = sse_profiles()
    lfc, yshift, sse = prof["lfc+y"] if use_shift else prof["lfc"]
    if not np.isfinite(sse):
        return float("nan")
    # local polish around the best grid point
    def resid(p):
        return base.shape(t - p[0]) + (p[1] if use_shift else 0.0) - y
    x0 = np.array([lfc, yshift]) if use_shift else np.array([lfc])
    try:
        sol = least_squares(resid, x0=x0, bounds=([lo] + [-np.inf] * (len(x0) - 1),
                                                  [hi] + [np.inf] * (len(x0) - 1)))
        if np.isfinite(sol.cost):
            lfc = float(sol.x[0])
    except Exception:
        pass  # grid answer stands
    return lfc


def battery_classify(lfc: float, threshold: float = 550.0) -> str:
    """Short-lived iff the estimated lifetime falls below the threshold."""
    if not np.isfinite(lfc):
        raise ValueError("cannot classify a non-finite lifetime estimate")
    return "low" if lfc < threshold else "high"
