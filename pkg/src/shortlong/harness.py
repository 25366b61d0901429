"""Evaluation harness: metrics, safety flags, the finite-sample bound,
and deterministic report files.

Reports are plain CSV plus a JSON manifest keyed by a hash of the
experiment configuration; rerunning the same configuration reproduces
the files byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .policygen import PolicyGenConfig
from .seeding import generator


def rmse(predictions: np.ndarray, truths: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape or predictions.size == 0:
        raise ValueError("predictions and truths must be nonempty and the same shape")
    return float(np.sqrt(np.mean((predictions - truths) ** 2)))


# ---------------------------------------------------------------------------
# safety flags


def safety_threshold(train_values: np.ndarray, mode: str = "percentile", value: float = 10.0) -> float:
    """Unsafe cutoff: a train-value percentile, or an absolute level."""
    if mode == "absolute":
        return float(value)
    if mode == "percentile":
        return float(np.percentile(np.asarray(train_values, dtype=float), value))
    raise ValueError(f"unknown safety mode {mode!r}")


def safety_detect(values: np.ndarray, threshold: float) -> np.ndarray:
    """True where a value falls below the cutoff (flagged unsafe)."""
    return np.asarray(values, dtype=float) < threshold


def safety_accuracy(predictions: np.ndarray, truths: np.ndarray, threshold: float) -> float:
    """Fraction of policies whose predicted flag matches the true flag."""
    pred_flags = safety_detect(predictions, threshold)
    true_flags = safety_detect(truths, threshold)
    if pred_flags.shape != true_flags.shape or pred_flags.size == 0:
        raise ValueError("predictions and truths must be nonempty and the same shape")
    return float(np.mean(pred_flags == true_flags))


# ---------------------------------------------------------------------------
# finite-sample deviation bound


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to the weighted-regression deviation bound.

    m: bound on the density ratio, v_max: bound on |f| and |y|,
    n: training sample count, f_size: hypothesis count,
    delta: failure probability per tail, w_err: L1 error of the
    estimated ratio against the true one.
    """

    m: float
    v_max: float
    n: int
    f_size: int
    delta: float
    w_err: float = 0.0

    def __post_init__(self):
        if not (self.m >= 1 and self.v_max > 0 and self.n >= 1 and self.f_size >= 1):
            raise ValueError("need m >= 1, v_max > 0, n >= 1, f_size >= 1")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")
        if self.w_err < 0:
            raise ValueError("w_err must be nonnegative")


def risk_bound(b: BoundInputs) -> float:
    """Deviation between weighted train risk and test risk, all hypotheses at once.

    m * v^2 * sqrt(log(2F/delta) / (2n)) + v^2 * (m * sqrt(log(2/delta)) / sqrt(n) + w_err)
    """
    v2 = b.v_max ** 2
    term1 = b.m * v2 * np.sqrt(np.log(2.0 * b.f_size / b.delta) / (2.0 * b.n))
    term2 = v2 * (b.m * np.sqrt(np.log(2.0 / b.delta)) / np.sqrt(b.n) + b.w_err)
    return float(term1 + term2)


@dataclass(frozen=True)
class SyntheticBoundSpec:
    """One-dimensional Gaussian shift scenario for empirical coverage checks.

    The test distribution must have lighter tails than the train one
    (sd_test < sd_train, or the two distributions identical), otherwise
    the density ratio is unbounded and the bound does not apply.
    """

    mu_train: float = 0.0
    sd_train: float = 1.0
    mu_test: float = 0.5
    sd_test: float = 0.8
    n: int = 500
    f_size: int = 8
    delta: float = 0.05
    noise: float = 0.25  # half-width of the uniform target noise

    def __post_init__(self):
        if self.sd_train <= 0 or self.sd_test <= 0:
            raise ValueError("standard deviations must be positive")
        identical = self.sd_test == self.sd_train and self.mu_test == self.mu_train
        if self.sd_test >= self.sd_train and not identical:
            raise ValueError("density ratio unbounded: need sd_test < sd_train "
                             "or identical train and test distributions")


@dataclass
class CoverageReport:
    coverage: float
    median_gap: float
    bound: float
    trials: int
    m: float
    v_max: float


def _gauss_pdf(x, mu, sd):
    return np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))


def _ratio_max(spec: SyntheticBoundSpec) -> float:
    if spec.sd_test == spec.sd_train:
        return 1.0
    # log ratio is a concave quadratic; read the value at its vertex
    a = 1.0 / spec.sd_test ** 2 - 1.0 / spec.sd_train ** 2
    x_star = (spec.mu_test / spec.sd_test ** 2 - spec.mu_train / spec.sd_train ** 2) / a
    return float(_gauss_pdf(x_star, spec.mu_test, spec.sd_test)
                 / _gauss_pdf(x_star, spec.mu_train, spec.sd_train))


def _target(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def _hypotheses(f_size: int) -> list:
    slopes = np.linspace(-1.25, 1.25, f_size)
    return [lambda x, a=a: np.clip(a * x, -1.0, 1.0) for a in slopes]


def true_risk(f, spec: SyntheticBoundSpec, grid_points: int = 20001) -> float:
    """E_test[(f(x) - y)^2] by dense quadrature; the noise adds eta^2 / 3."""
    lo = spec.mu_test - 10.0 * spec.sd_test
    hi = spec.mu_test + 10.0 * spec.sd_test
    x = np.linspace(lo, hi, grid_points)
    w = _gauss_pdf(x, spec.mu_test, spec.sd_test)
    w = w / np.sum(w)
    return float(np.sum(w * (f(x) - _target(x)) ** 2) + spec.noise ** 2 / 3.0)


def verify_bound_empirically(spec: SyntheticBoundSpec, trials: int = 200, seed: int = 0) -> CoverageReport:
    """Draws train sets, runs weighted ERM over a finite class, and counts
    how often |test risk - weighted train risk| stays inside risk_bound.

    Uses the analytic density ratio (w_err = 0), so the reported coverage
    must reach at least 1 - 4 * delta when the bound is sound.
    """
    m = _ratio_max(spec)
    v_max = 1.0 + spec.noise
    bound = risk_bound(BoundInputs(m=m, v_max=v_max, n=spec.n, f_size=spec.f_size, delta=spec.delta))
    fs = _hypotheses(spec.f_size)
    risks = np.array([true_risk(f, spec) for f in fs])

    gaps = np.empty(trials)
    covered = 0
    for trial in range(trials):
        rng = generator(seed, "bound-trial", trial)
        x = rng.normal(spec.mu_train, spec.sd_train, size=spec.n)
        y = _target(x) + rng.uniform(-spec.noise, spec.noise, size=spec.n)
        w = _gauss_pdf(x, spec.mu_test, spec.sd_test) / _gauss_pdf(x, spec.mu_train, spec.sd_train)
        emp = np.array([np.mean(w * (f(x) - y) ** 2) for f in fs])
        j = int(np.argmin(emp))
        gap = abs(risks[j] - emp[j])
        gaps[trial] = gap
        covered += gap <= bound
    return CoverageReport(
        coverage=covered / trials,
        median_gap=float(np.median(gaps)),
        bound=bound,
        trials=trials,
        m=m,
        v_max=v_max,
    )


# ---------------------------------------------------------------------------
# experiment configuration


DEFAULT_ELL_FRACTIONS = (0.025, 0.05, 0.10, 0.25)
DEFAULT_METHODS = ("slev", "sled", "fqe", "online", "avg", "last", "mean")


@dataclass
class ExperimentConfig:
    env_id: str = "hiv"
    seeds: tuple[int, ...] = (0, 1, 2)
    ell_fractions: tuple[float, ...] = DEFAULT_ELL_FRACTIONS
    methods: tuple[str, ...] = DEFAULT_METHODS
    weighted: bool = False
    k: int = 10
    include_rewards: bool = True
    slev_learning_rates: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    slev_weight_decays: tuple[float, ...] | None = None  # None: per-env default
    slev_max_updates: int = 8000
    fqe_gamma: float = 0.98
    fqe_sweeps: int = 30
    sled_adapter_families: tuple[str, ...] | None = None  # None: try all
    safety_mode: str = "percentile"
    safety_value: float = 10.0
    safety_ell_fraction: float = 0.10
    policygen: PolicyGenConfig = field(default_factory=PolicyGenConfig)
    out_dir: str = "reports"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        obj = json.loads(text)
        pg = obj.pop("policygen", None)
        cfg = cls(**{k: _tupled(v) for k, v in obj.items()})
        if pg is not None:
            cfg.policygen = PolicyGenConfig(**{k: _tupled(v) for k, v in pg.items()})
        return cfg

    def config_hash(self) -> str:
        canonical = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _tupled(v):
    return tuple(v) if isinstance(v, list) else v


# ---------------------------------------------------------------------------
# report files


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def aggregate_rmse(run_rows: list[dict]) -> list[tuple]:
    """Per (method, ell): mean and sd over seeds of the per-seed RMSE.

    Rows are keyed and sorted before any float reduction, so the result
    does not depend on the order results arrived in.
    """
    by_cell: dict[tuple, dict[int, list]] = {}
    for r in run_rows:
        cell = by_cell.setdefault((r["method"], r["ell"]), {})
        cell.setdefault(r["seed"], []).append((r["policy_id"], r["prediction"], r["truth"]))
    out = []
    for (method, ell) in sorted(by_cell):
        per_seed = []
        for s in sorted(by_cell[(method, ell)]):
            pairs = np.array([(p, t) for _, p, t in sorted(by_cell[(method, ell)][s])], dtype=float)
            per_seed.append(rmse(pairs[:, 0], pairs[:, 1]))
        mean = float(np.mean(per_seed))
        sd = float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0
        out.append((method, ell, mean, sd))
    return out


def write_report(
    out_dir: str,
    config: ExperimentConfig,
    run_rows: list[dict],
    safety_rows: list[dict] | None = None,
    battery_rows: list[dict] | None = None,
) -> str:
    """Write runs.csv, aggregate.csv, optional safety/battery tables, manifest.json.

    Rows are sorted and floats printed at full precision, so identical
    inputs reproduce identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    runs_sorted = sorted(run_rows, key=lambda r: (r["method"], r["env"], r["ell"], r["seed"], r["policy_id"]))
    _write_csv(
        os.path.join(out_dir, "runs.csv"),
        ["method", "env", "ell", "seed", "policy_id", "prediction", "truth"],
        [(r["method"], r["env"], r["ell"], r["seed"], r["policy_id"], r["prediction"], r["truth"])
         for r in runs_sorted],
    )
    _write_csv(
        os.path.join(out_dir, "aggregate.csv"),
        ["method", "ell", "rmse_mean", "rmse_sd"],
        aggregate_rmse(run_rows),
    )
    files = ["runs.csv", "aggregate.csv"]
    if safety_rows:
        by_cell: dict[tuple, list[tuple]] = {}
        for r in safety_rows:
            by_cell.setdefault((r["method"], r["ell"]), []).append((r["seed"], r["accuracy"]))
        rows = []
        for (method, ell) in sorted(by_cell):
            accs = [a for _, a in sorted(by_cell[(method, ell)])]
            sd = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            rows.append((method, ell, float(np.mean(accs)), sd))
        _write_csv(os.path.join(out_dir, "safety.csv"), ["method", "ell", "accuracy_mean", "accuracy_sd"], rows)
        files.append("safety.csv")
    if battery_rows:
        rows = sorted((r["method"], r["train_set"], r["accuracy"]) for r in battery_rows)
        _write_csv(os.path.join(out_dir, "battery.csv"), ["method", "train_set", "accuracy"], rows)
        files.append("battery.csv")

    manifest = {
        "config_hash": config.config_hash(),
        "config": dataclasses.asdict(config),
        "files": files,
        "n_runs": len(run_rows),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path
