"""Experiment runners: RMSE sweeps, training-time benchmark, regression demo.

All outputs are CSV files with a versioned ``#`` comment line followed by a
header row. Sweep outputs are byte-identical for a fixed spec and seed
unless wall-clock timing is requested.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .channel import ChannelParams, aircomp_predict_round
from .cost import uplink_cost
from .gp import Hyperparams, LocalDataset, kernel_matrix, lml_from_distances, pairwise_distances, psd_factor
from .poe import VARIANCE_FLOOR, ExpertPool, local_predictions, partition_dataset, poe_fuse
from .radiomap import (
    CHANNEL_METHODS,
    METHODS,
    ScenarioConfig,
    TrialRecord,
    evaluate_method,
    generate_field,
    prepare_trial,
    sample_locations,
)
from .trainer import PoolObjective, TrainConfig, multistart_train

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("gamma_bar_db", "N", "M")
SUMMARY_VERSION = "# aircomp-gpr sweep-summary v1"
TRIALS_VERSION = "# aircomp-gpr sweep-trials v1"
BENCH_VERSION = "# aircomp-gpr bench-timing v1"
DEMO_VERSION = "# aircomp-gpr demo-regression v1"

SUMMARY_FIELDS = [
    "sweep_param",
    "sweep_value",
    "method",
    "mean_rmse_db",
    "std_rmse_db",
    "mean_train_time_s",
    "uplink_cost",
    "trials",
    "failures",
    "seed",
]
TRIAL_FIELDS = [
    "sweep_param",
    "sweep_value",
    "trial",
    "seed",
    "method",
    "rmse_db",
    "train_time_s",
    "rounds",
    "uplink_variable_count",
    "psi1",
    "psi2",
    "sigma_eps",
    "error",
]


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sweep_param: str = "gamma_bar_db"
    sweep_values: list = field(default_factory=lambda: [-80, -70, -60, -50, 0])
    methods: list = field(default_factory=lambda: list(METHODS))
    output_path: str | None = None
    seed: int = 0
    timing: bool = False

    def __post_init__(self):
        if self.sweep_param not in SWEEP_PARAMS:
            raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.sweep_param!r}")
        if not self.methods:
            raise ValueError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods: {bad}")
        if not self.sweep_values:
            raise ValueError("sweep needs at least one value")
        if self.sweep_param in ("N", "M"):
            self.sweep_values = [int(v) for v in self.sweep_values]
            if any(v < 1 for v in self.sweep_values):
                raise ValueError(f"{self.sweep_param} values must be positive")
        else:
            self.sweep_values = [float(v) for v in self.sweep_values]
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def scenario_at(self, value) -> ScenarioConfig:
        return self.scenario.replace(**{self.sweep_param: value})


def fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else format(float(x), ".10g")
    return str(x)


def trial_seed(seed: int, trial: int) -> int:
    return seed ^ trial


def write_csv_atomic(path, version_line: str, fieldnames: list[str], rows: list[dict]) -> None:
    """Write rows to ``path`` via a temporary file so failures leave no partial output."""
    path = Path(path)
    buf = io.StringIO()
    buf.write(version_line + "\n")
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: fmt(row.get(k, "")) for k in fieldnames})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _trial_row(spec: ExperimentSpec, value, trial: int, rec: TrialRecord) -> dict:
    th = rec.theta
    return {
        "sweep_param": spec.sweep_param,
        "sweep_value": value,
        "trial": trial,
        "seed": rec.seed,
        "method": rec.method,
        "rmse_db": rec.rmse_db,
        "train_time_s": rec.train_time_s if spec.timing else "",
        "rounds": rec.rounds,
        "uplink_variable_count": rec.uplink_variable_count,
        "psi1": th.psi1 if th else "",
        "psi2": th.psi2 if th else "",
        "sigma_eps": th.sigma_eps if th else "",
        "error": rec.error,
    }


def run_sweep_records(spec: ExperimentSpec, trials: int | None = None) -> list[dict]:
    """Per-trial rows, ordered by (sweep value, trial, method)."""
    trials = spec.scenario.trials if trials is None else trials
    if trials < 1:
        raise ValueError("trial count must be >= 1")
    rows: dict[tuple, list[dict]] = {}
    if spec.sweep_param == "gamma_bar_db":
        # The world and the channel-free methods do not depend on the gain.
        base = spec.scenario
        for t in range(trials):
            world = prepare_trial(base, trial_seed(spec.seed, t))
            shared = {m: evaluate_method(world, m, base) for m in spec.methods if m not in CHANNEL_METHODS}
            for v in spec.sweep_values:
                sc = spec.scenario_at(v)
                recs = [shared[m] if m in shared else evaluate_method(world, m, sc) for m in spec.methods]
                rows[(v, t)] = [_trial_row(spec, v, t, r) for r in recs]
    else:
        for v in spec.sweep_values:
            sc = spec.scenario_at(v)
            for t in range(trials):
                world = prepare_trial(sc, trial_seed(spec.seed, t))
                rows[(v, t)] = [_trial_row(spec, v, t, evaluate_method(world, m, sc)) for m in spec.methods]
    return [r for v in spec.sweep_values for t in range(trials) for r in rows[(v, t)]]


def summarize(spec: ExperimentSpec, trial_rows: list[dict]) -> list[dict]:
    out = []
    for v in spec.sweep_values:
        sc = spec.scenario_at(v)
        for m in spec.methods:
            sel = [r for r in trial_rows if r["sweep_value"] == v and r["method"] == m]
            vals = np.array([r["rmse_db"] for r in sel], dtype=float)
            ok = vals[np.isfinite(vals)]
            times = [r["train_time_s"] for r in sel if r["train_time_s"] != ""]
            out.append(
                {
                    "sweep_param": spec.sweep_param,
                    "sweep_value": v,
                    "method": m,
                    "mean_rmse_db": float(ok.mean()) if ok.size else math.nan,
                    "std_rmse_db": float(ok.std(ddof=1)) if ok.size > 1 else 0.0,
                    "mean_train_time_s": float(np.mean(times)) if times else "",
                    "uplink_cost": uplink_cost(m, sc.cost_model()),
                    "trials": int(ok.size),
                    "failures": int(vals.size - ok.size),
                    "seed": spec.seed,
                }
            )
    return out


def run_sweep(spec: ExperimentSpec, trials: int | None = None, trials_path=None) -> list[dict]:
    """Run every (sweep value, trial) pair and aggregate RMSE per method.

    Writes the summary to ``spec.output_path`` and, if given, the per-trial
    records to ``trials_path``.
    """
    trial_rows = run_sweep_records(spec, trials)
    summary = summarize(spec, trial_rows)
    if spec.output_path:
        write_csv_atomic(spec.output_path, SUMMARY_VERSION, SUMMARY_FIELDS, summary)
    if trials_path:
        write_csv_atomic(trials_path, TRIALS_VERSION, TRIAL_FIELDS, trial_rows)
    return summary


# --- training-time benchmark -------------------------------------------------

BENCH_THETA = Hyperparams(psi1=64.0, psi2=100.0 / math.log(2.0), sigma_eps=0.1)


def _time_per_call(fn, min_time: float = 0.05, repeats: int = 5) -> float:
    """Best-of-``repeats`` mean wall time of ``fn``, each repeat lasting ``min_time``."""
    fn()
    best = math.inf
    for _ in range(repeats):
        n, t0 = 0, time.perf_counter()
        while True:
            fn()
            n += 1
            el = time.perf_counter() - t0
            if el >= min_time:
                break
        best = min(best, el / n)
    return best


def likelihood_times(N: int, M: int, seed: int = 0, theta: Hyperparams = BENCH_THETA, min_time: float = 0.05, repeats: int = 5):
    """Per-evaluation likelihood time for the full dataset and for each of ``M`` nodes."""
    sc = ScenarioConfig(N=N, M=M, n_test=1)
    train, _ = sample_locations(sc, np.random.default_rng(seed))
    truth = generate_field(train, sc, np.random.default_rng(seed + 1))
    full = LocalDataset(train, truth.rx_power_dbm)
    pool = partition_dataset(full, M, "random", seed)

    def timer(ds):
        D, r = pairwise_distances(ds.inputs), ds.residual
        return _time_per_call(lambda: lml_from_distances(D, r, theta), min_time, repeats)

    with threadpool_limits(limits=1):
        t_full = timer(full)
        t_nodes = [timer(e) for e in pool.experts]
    return t_full, t_nodes


def bench_training_time(N_values, M_values, seed: int = 0, min_time: float = 0.05, repeats: int = 5) -> list[dict]:
    """Full-GPR vs slowest-node likelihood time per training iteration.

    Runs single-threaded. Nodes are assumed to compute in parallel, so the
    distributed time is the maximum over nodes.
    """
    rows = []
    for N in N_values:
        for M in M_values:
            if M > N:
                continue
            t_full, t_nodes = likelihood_times(N, M, seed, min_time=min_time, repeats=repeats)
            t_node = max(t_nodes)
            rows.append({"N": N, "M": M, "full_time_s": t_full, "node_time_s": t_node, "speedup": t_full / t_node, "seed": seed})
    return rows


BENCH_FIELDS = ["N", "M", "full_time_s", "node_time_s", "speedup", "seed"]


# --- regression demo ---------------------------------------------------------


@dataclass
class DemoResult:
    x_test: np.ndarray
    contributions: np.ndarray  # (M, n_test), each expert's share of the fused mean
    poe_mean: np.ndarray
    poe_std: np.ndarray
    aircomp_mean: np.ndarray
    aircomp_std: np.ndarray
    pool: ExpertPool
    theta: Hyperparams

    @property
    def lower(self) -> np.ndarray:
        return self.aircomp_mean - 1.96 * self.aircomp_std

    @property
    def upper(self) -> np.ndarray:
        return self.aircomp_mean + 1.96 * self.aircomp_std


def demo_regression(
    seed: int = 0,
    out_dir=None,
    M: int = 4,
    N: int = 128,
    gamma_bar_db: float = 0.0,
    n_grid: int = 281,
    span: tuple[float, float] = (0.0, 100.0),
    margin: float = 20.0,
    true_theta: Hyperparams = Hyperparams(1.0, 10.0, 0.1),
    t_max: int = 600,
    t_multi: int = 3,
) -> DemoResult:
    """Fit AirComp GPR to a draw from a zero-mean, unit-variance GP.

    Nodes own contiguous blocks of the input range. The test grid extends
    ``margin`` beyond the data on both sides. Each node's prior mean is its
    local sample mean.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
    lo, hi = span
    x = np.sort(rng.uniform(lo, hi, N))
    K = kernel_matrix(x, true_theta)
    f = psd_factor(K).lower @ rng.standard_normal(N)
    y = f + true_theta.sigma_eps * rng.standard_normal(N)
    full = LocalDataset(x, y)
    pool = partition_dataset(full, M, "spatial-blocks")
    pool = ExpertPool([LocalDataset(e.inputs, e.outputs) for e in pool.experts], 1)

    params = ChannelParams.from_db(M, gamma_bar_db, -90.0, 10.0)
    objective = PoolObjective(pool, "aircomp-perfect", params, seed=np.random.SeedSequence([seed, 101]))
    theta = multistart_train(objective, TrainConfig(t_max, t_multi, seed=seed)).theta_opt

    x_test = np.linspace(lo - margin, hi + margin, n_grid)
    priors = [np.full(n_grid, e.prior_mean[0]) for e in pool.experts]
    locals_ = local_predictions(pool, theta, priors, x_test[:, None])
    ideal = poe_fuse(locals_)
    contributions = np.stack([ideal.variance * lp.precision * lp.mean for lp in locals_])
    floor = M / max(theta.psi1, VARIANCE_FLOOR)
    air = aircomp_predict_round(locals_, params, np.random.SeedSequence([seed, 102]), precision_floor=floor)
    res = DemoResult(x_test, contributions, ideal.mean, ideal.std, air.mean, air.std, pool, theta)
    if out_dir is not None:
        write_demo(res, out_dir)
    return res


def write_demo(res: DemoResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    M = res.contributions.shape[0]
    expert_cols = [f"expert_{i + 1}" for i in range(M)]
    fields = ["x", *expert_cols, "poe_mean", "poe_std", "aircomp_mean", "aircomp_std", "lower95", "upper95"]
    rows = []
    for j, xj in enumerate(res.x_test):
        row = {"x": xj, "poe_mean": res.poe_mean[j], "poe_std": res.poe_std[j]}
        row.update({c: res.contributions[i, j] for i, c in enumerate(expert_cols)})
        row.update(
            aircomp_mean=res.aircomp_mean[j],
            aircomp_std=res.aircomp_std[j],
            lower95=res.lower[j],
            upper95=res.upper[j],
        )
        rows.append(row)
    pred_path = out_dir / "demo_prediction.csv"
    write_csv_atomic(pred_path, DEMO_VERSION, fields, rows)
    data_rows = [
        {"node": i + 1, "x": float(xv), "y": float(yv)}
        for i, e in enumerate(res.pool.experts)
        for xv, yv in zip(e.inputs[:, 0], e.outputs)
    ]
    data_path = out_dir / "demo_training_data.csv"
    write_csv_atomic(data_path, DEMO_VERSION, ["node", "x", "y"], data_rows)
    return pred_path, data_path
