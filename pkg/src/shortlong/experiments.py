"""End-to-end experiment orchestration.

`run_experiment` reproduces the rollout-horizon sweep: generate train and
test policy populations for one simulator, roll everything out at the
full horizon, then score each estimator at several prefix lengths ell
against the Monte-Carlo ground truth.  `run_battery_experiment`
reproduces the distribution-shift comparison on synthetic capacity
curves, including the biased (filtered) training condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    avg_reward_extrapolate,
    delta_q_classify,
    delta_q_feature,
    fqe_fit,
    fqe_value,
    last_reward_extrapolate,
    majority_class,
    offpolicy_mean,
    online_dynamics_fit,
    online_dynamics_value,
)
from .core import PolicyDataset, PolicyRecord, featurize_short, return_of, rollout_groups
from .density import fit_density_ratio
from .envs import make_env
from .envs.battery import DEFAULT_B, CapacityCurve, battery_synthesize
from .envs.hiv import hiv_initial_states
from .envs.kidney import kidney_initial_states
from .harness import ExperimentConfig, safety_accuracy, safety_threshold
from .policygen import PolicyGenConfig, generate_policy_sets
from .sled import (
    battery_classify,
    battery_fit_base,
    battery_fit_lifetime,
    calc_returns,
    default_global_families,
    fit_adapter,
    fit_global_model,
)
from .seeding import child_seed, generator
from .slev import HIV_WEIGHT_DECAYS, KIDNEY_WEIGHT_DECAYS, default_hyper_grid, slev_fit, slev_predict

KIDNEY_ROLLOUTS = 30


def ell_values(horizon: int, fractions) -> list[int]:
    """Prefix lengths for a horizon, at least 1 step each and all short of it."""
    ells = sorted({max(1, round(f * horizon)) for f in fractions})
    if not ells:
        raise ValueError("need at least one ell fraction")
    if ells[-1] >= horizon:
        raise ValueError(f"prefix length {ells[-1]} not below horizon {horizon}")
    return ells


def _seed_int(*path) -> int:
    return int(child_seed(*path).generate_state(1)[0])


@dataclass
class SeedData:
    train: PolicyDataset
    test: PolicyDataset
    test_policies: dict[str, object]


def generate_seed_data(env_id: str, pg: PolicyGenConfig, seed: int) -> SeedData:
    """Policies, full-horizon rollouts, and Monte-Carlo values for one seed.

    HIV policies are deterministic on a deterministic simulator, so one
    rollout per policy is its exact value; kidney rollouts are noisy and
    each policy gets KIDNEY_ROLLOUTS of them.
    """
    env = make_env(env_id)
    train_pols, test_pols = generate_policy_sets(env_id, pg, _seed_int(seed, "policies"))
    all_pols = [("train", pid, pol) for pid, pol in train_pols] + \
               [("test", pid, pol) for pid, pol in test_pols]

    groups = []
    if env_id == "hiv":
        starts = hiv_initial_states(len(all_pols), pg.hiv_init_rate, _seed_int(seed, "eval-starts"))
        for i, (_, pid, pol) in enumerate(all_pols):
            groups.append((pol, starts[i][None, :], [pid]))
    else:
        for _, pid, pol in all_pols:
            starts = kidney_initial_states(KIDNEY_ROLLOUTS, _seed_int(seed, "eval-starts", pid))
            groups.append((pol, starts, [f"{pid}-{j}" for j in range(KIDNEY_ROLLOUTS)]))

    rolled = rollout_groups(env, groups, env.horizon, _seed_int(seed, "eval-rollouts"))
    train_recs, test_recs = [], []
    for (split, pid, _), trajs in zip(all_pols, rolled):
        rec = PolicyRecord(pid, trajs, true_value=float(np.mean([return_of(t) for t in trajs])))
        (train_recs if split == "train" else test_recs).append(rec)
    return SeedData(
        train=PolicyDataset(env_id, env.horizon, train_recs),
        test=PolicyDataset(env_id, env.horizon, test_recs),
        test_policies={pid: pol for pid, pol in test_pols},
    )


def _slev_predictions(cfg: ExperimentConfig, data: SeedData, ell: int, seed: int, workers) -> dict[str, float]:
    wds = cfg.slev_weight_decays
    if wds is None:
        wds = HIV_WEIGHT_DECAYS if cfg.env_id == "hiv" else KIDNEY_WEIGHT_DECAYS
    n_features = len(featurize_short(data.train.records[0], ell, cfg.include_rewards))
    grid = default_hyper_grid(n_features, wds, cfg.slev_learning_rates, cfg.slev_max_updates)

    train = data.train
    density = None
    if cfg.weighted:
        # half the historical policies estimate the ratio, the rest train the regression
        n = len(train.records)
        perm = generator(seed, "density-split").permutation(n)
        dens_recs = [train.records[i] for i in perm[: n // 2]]
        reg_recs = [train.records[i] for i in perm[n // 2:]]
        dens_feats = np.stack([featurize_short(r, ell, cfg.include_rewards) for r in dens_recs])
        test_feats = np.stack([featurize_short(r, ell, cfg.include_rewards) for r in data.test.records])
        density = fit_density_ratio(dens_feats, test_feats, seed=_seed_int(seed, "density", ell))
        train = PolicyDataset(train.env_id, train.horizon, reg_recs)

    model = slev_fit(train, ell, cfg.include_rewards, grid, cfg.k, density,
                     _seed_int(seed, "slev", ell), workers=workers)
    return {rec.policy_id: slev_predict(model, rec, ell) for rec in data.test.records}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> tuple[list[dict], list[dict]]:
    """Score every configured method at every prefix length and seed.

    Returns (run_rows, safety_rows) in the report schema: one run row per
    (method, ell, seed, test policy) prediction, one safety row per
    (method, seed) at the safety prefix length.
    """
    env = make_env(cfg.env_id)
    L = env.horizon
    ell_safe = max(1, round(cfg.safety_ell_fraction * L))
    ells = sorted(set(ell_values(L, cfg.ell_fractions)) | {ell_safe})

    run_rows: list[dict] = []
    safety_rows: list[dict] = []
    for seed in cfg.seeds:
        data = generate_seed_data(cfg.env_id, cfg.policygen, seed)
        truths = {r.policy_id: r.true_value for r in data.test.records}
        train_values = np.array([r.true_value for r in data.train.records])
        preds: dict[tuple[str, int], dict[str, float]] = {}

        flat: dict[str, dict[str, float]] = {}
        if "mean" in cfg.methods:
            mu = offpolicy_mean(data.train)
            flat["mean"] = {pid: mu for pid in truths}
        if "fqe" in cfg.methods:
            out = {}
            for rec in data.test.records:
                pol = data.test_policies[rec.policy_id]
                q = fqe_fit(data.train, pol, cfg.fqe_gamma, cfg.fqe_sweeps,
                            seed=_seed_int(seed, "fqe", rec.policy_id))
                inits = np.stack([t.states[0] for t in rec.trajectories])
                out[rec.policy_id] = fqe_value(q, pol, inits)
            flat["fqe"] = out
        global_model = None
        if "sled" in cfg.methods:
            global_model = fit_global_model(
                data.train, default_global_families(env.state_dim),
                k=5, seed=_seed_int(seed, "sled-global"))

        for ell in ells:
            if "slev" in cfg.methods:
                preds[("slev", ell)] = _slev_predictions(cfg, data, ell, seed, workers)
            if "sled" in cfg.methods:
                out = {}
                adapter_kw = {} if cfg.sled_adapter_families is None \
                    else {"families": cfg.sled_adapter_families}
                for rec in data.test.records:
                    adapter = fit_adapter(global_model, rec.trajectories, ell,
                                          seed=_seed_int(seed, "adapter", rec.policy_id, ell),
                                          **adapter_kw)
                    out[rec.policy_id] = float(np.mean([
                        calc_returns(global_model, adapter, t.prefix(ell), L, env.reward)
                        for t in rec.trajectories]))
                preds[("sled", ell)] = out
            if "online" in cfg.methods:
                out = {}
                for rec in data.test.records:
                    pol = data.test_policies[rec.policy_id]
                    prefixes = [t.prefix(ell) for t in rec.trajectories]
                    dyn = online_dynamics_fit(prefixes, seed=_seed_int(seed, "online", rec.policy_id, ell))
                    out[rec.policy_id] = float(np.mean([
                        online_dynamics_value(dyn, p, L, env.reward, pol) for p in prefixes]))
                preds[("online", ell)] = out
            if "avg" in cfg.methods:
                preds[("avg", ell)] = {
                    rec.policy_id: float(np.mean([
                        avg_reward_extrapolate(t.rewards[: ell + 1], ell + 1, L + 1)
                        for t in rec.trajectories]))
                    for rec in data.test.records}
            if "last" in cfg.methods:
                preds[("last", ell)] = {
                    rec.policy_id: float(np.mean([
                        last_reward_extrapolate(t.rewards[: ell + 1], L + 1)
                        for t in rec.trajectories]))
                    for rec in data.test.records}
            for method, table in flat.items():
                preds[(method, ell)] = table

        for (method, ell), table in preds.items():
            for pid, pred in table.items():
                run_rows.append({
                    "method": method, "env": cfg.env_id, "ell": ell, "seed": seed,
                    "policy_id": pid, "prediction": pred, "truth": truths[pid],
                })

        threshold = safety_threshold(train_values, cfg.safety_mode, cfg.safety_value)
        pids = sorted(truths)
        truth_vec = np.array([truths[p] for p in pids])
        for method in cfg.methods:
            if (method, ell_safe) not in preds:
                continue
            pred_vec = np.array([preds[(method, ell_safe)][p] for p in pids])
            safety_rows.append({
                "method": method, "ell": ell_safe, "seed": seed,
                "accuracy": safety_accuracy(pred_vec, truth_vec, threshold),
                "threshold": threshold,
            })
    return run_rows, safety_rows


# ---------------------------------------------------------------------------
# battery distribution-shift experiment


@dataclass
class BatteryBand:
    """One sub-population of cells: count, lifetime range, shape and noise."""

    count: int
    life_lo: int
    life_hi: int
    a: float = 0.0235
    noise_sd: float = 0.0


@dataclass
class BatteryExperimentConfig:
    """Synthetic population mirroring the biased-training comparison.

    All cells share a steep-knee shape: capacity holds near 1.0 for most
    of life and drops sharply near end of life, so the cycle-4-to-5 fade
    shrinks exponentially with lifetime.  Train cells are either short
    lived (< 550) or long lived (> 700); the lifetime filter therefore
    leaves only low-class cells, collapsing any feature-based classifier
    to the constant prediction, while the shape match behind the lifetime
    estimate is unaffected.
    """

    seed: int = 0
    b: float = DEFAULT_B
    threshold: float = 550.0
    filter_below: float = 700.0
    prefix_cycles: int = 5
    extra_cycles: int = 80
    k_base: int = 10
    k_lifetime: int = 5
    train_bands: tuple[BatteryBand, ...] = (
        BatteryBand(22, 300, 520),
        BatteryBand(19, 720, 1000),
    )
    test_bands: tuple[BatteryBand, ...] = (
        BatteryBand(22, 300, 500),
        BatteryBand(61, 720, 1100),
    )


def make_battery_population(cfg: BatteryExperimentConfig) -> tuple[list[CapacityCurve], list[CapacityCurve]]:
    out = []
    for split, bands in (("train", cfg.train_bands), ("test", cfg.test_bands)):
        curves = []
        for bi, band in enumerate(bands):
            rng = generator(cfg.seed, "battery-lifetimes", split, bi)
            lifetimes = np.sort(rng.integers(band.life_lo, band.life_hi + 1, size=band.count))
            for i, lt in enumerate(lifetimes):
                curves.append(battery_synthesize(
                    band.a, cfg.b, int(lt), band.noise_sd, int(lt) + cfg.extra_cycles,
                    _seed_int(cfg.seed, "battery-curve", split, bi, i)))
        out.append(curves)
    return out[0], out[1]


def _life_label(curve: CapacityCurve, threshold: float) -> str:
    return "low" if curve.lifetime < threshold else "high"


def run_battery_experiment(cfg: BatteryExperimentConfig) -> tuple[list[dict], dict]:
    """Classification accuracy of SLED, the ΔQ logistic, and the majority
    class, each trained on the full and on the lifetime-filtered train set."""
    train, test = make_battery_population(cfg)
    true_labels = [_life_label(c, cfg.threshold) for c in test]
    rows: list[dict] = []
    details: dict = {"n_train_full": len(train), "n_test": len(test)}

    for name, curves in (
        ("full", train),
        ("filtered", [c for c in train if c.lifetime < cfg.filter_below]),
    ):
        details[f"n_train_{name}"] = len(curves)
        base = battery_fit_base(curves, k=cfg.k_base)
        sled_preds = []
        for c in test:
            pre = c.prefix(cfg.prefix_cycles)
            pts = np.stack([pre.cycles.astype(float), pre.capacities], axis=1)
            lfc = battery_fit_lifetime(base, pts, k=cfg.k_lifetime)
            sled_preds.append(battery_classify(lfc, cfg.threshold))
        rows.append({"method": "sled", "train_set": name,
                     "accuracy": float(np.mean([p == t for p, t in zip(sled_preds, true_labels)]))})

        feats = np.array([delta_q_feature(c.prefix(cfg.prefix_cycles)) for c in curves])
        labels = [_life_label(c, cfg.threshold) for c in curves]
        clf = delta_q_classify(feats, labels, seed=cfg.seed)
        test_feats = np.array([delta_q_feature(c.prefix(cfg.prefix_cycles)) for c in test])
        dq_preds = clf.predict(test_feats)
        rows.append({"method": "deltaq", "train_set": name,
                     "accuracy": float(np.mean([p == t for p, t in zip(dq_preds, true_labels)]))})

        maj = majority_class(labels)
        rows.append({"method": "majority", "train_set": name,
                     "accuracy": float(np.mean([maj == t for t in true_labels]))})
    return rows, details
