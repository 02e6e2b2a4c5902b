"""One-dimensional radio map construction benchmark.

Nodes measure received power along the line ``[l, 0]`` from a transmitter
at ``tx_location``. The ground truth is log-distance path loss plus
exponentially correlated Gaussian shadowing in dB. Each node fits an
ordinary least squares path loss model as its GP prior mean and the GP
models the residual shadowing over the coordinate ``l``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelParams, PowerPolicy, aircomp_predict_round, unbias_constant
from .cost import CostModel, uplink_cost
from .gp import Hyperparams, LocalDataset, PredictionResult, gpr_predict, psd_factor
from .poe import VARIANCE_FLOOR, ExpertPool, ideal_dgpr_predict, local_predictions, partition_indices
from .trainer import PoolObjective, TrainConfig, TrainingFailedError, multistart_train

log = logging.getLogger(__name__)

METHODS = ("full-gpr", "ideal-poe", "aircomp-perfect", "aircomp-statistical", "pathloss")
CHANNEL_METHODS = ("aircomp-perfect", "aircomp-statistical")
LN2 = math.log(2.0)


@dataclass
class ScenarioConfig:
    """Radio map world, network and training settings (defaults give the reference scenario)."""

    eta: float = 3.0
    p_tx: float = 10.0  # dBm
    sigma_db: float = 8.0
    d_cor: float = 100.0  # m
    tx_location: tuple[float, float] = (0.0, 500.0)
    measurement_span: tuple[float, float] = (1.0, 1000.0)
    M: int = 4
    N: int = 128
    n_test: int = 10
    trials: int = 100
    gamma_bar_db: float = -50.0
    p_max_dbm: float = 10.0
    noise_dbm: float = -90.0
    t_max: int = 600
    t_multi: int = 3
    conv_tol: float = 1e-4
    l_min: float = -5000.0
    l_max: float = 0.0
    channel_model: str = "rayleigh"
    assignment: str = "random"
    min_test_separation: float = 1.0  # m

    def __post_init__(self):
        self.tx_location = tuple(float(v) for v in self.tx_location)
        self.measurement_span = tuple(float(v) for v in self.measurement_span)
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.sigma_db < 0 or not self.d_cor > 0:
            raise ValueError("need sigma_db >= 0 and d_cor > 0")
        if self.M < 1 or self.N < self.M or self.n_test < 1:
            raise ValueError(f"need 1 <= M <= N and n_test >= 1, got M={self.M} N={self.N}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        lo, hi = self.measurement_span
        if not lo < hi:
            raise ValueError("measurement_span must be an increasing interval")
        if not self.l_min < self.l_max:
            raise ValueError("need l_min < l_max")
        if self.N % self.M:
            log.warning("N=%d is not divisible by M=%d; the last node takes the remainder", self.N, self.M)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tx_location"] = list(self.tx_location)
        d["measurement_span"] = list(self.measurement_span)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def channel_params(self) -> ChannelParams:
        return ChannelParams.from_db(self.M, self.gamma_bar_db, self.noise_dbm, self.p_max_dbm)

    def statistical_policy(self) -> PowerPolicy:
        return PowerPolicy(
            mode="statistical",
            l_min=self.l_min,
            l_max=self.l_max,
            c_unbias=unbias_constant(self.channel_model),
        )

    def cost_model(self) -> CostModel:
        return CostModel(n_in=1, N=self.N, M=self.M, T=self.t_max, T_multi=self.t_multi, n_test=self.n_test)


def load_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))


def to_xy(locations) -> np.ndarray:
    """Map 1-D coordinates ``l`` onto the measurement line ``[l, 0]``."""
    loc = np.asarray(locations, dtype=float)
    if loc.ndim == 1:
        return np.column_stack([loc, np.zeros_like(loc)])
    if loc.ndim == 2 and loc.shape[1] == 1:
        return np.column_stack([loc[:, 0], np.zeros(loc.shape[0])])
    return loc


def shadowing_correlation(xi, xj, d_cor: float) -> float:
    if not d_cor > 0:
        raise ValueError("d_cor must be positive")
    d = float(np.linalg.norm(np.atleast_1d(np.asarray(xi, float)) - np.atleast_1d(np.asarray(xj, float))))
    return math.exp(-d * LN2 / d_cor)


def tx_distance(locations, tx_location) -> np.ndarray:
    return np.linalg.norm(to_xy(locations) - np.asarray(tx_location, dtype=float), axis=1)


def pathloss_db(locations, scenario: ScenarioConfig) -> np.ndarray:
    d = tx_distance(locations, scenario.tx_location)
    return scenario.p_tx - 10.0 * scenario.eta * np.log10(d)


@dataclass
class GroundTruth:
    locations: np.ndarray  # (n, 2)
    pathloss_db: np.ndarray
    shadowing_db: np.ndarray
    rx_power_dbm: np.ndarray
    n_train: int | None = None

    @property
    def coords(self) -> np.ndarray:
        return self.locations[:, 0]

    @property
    def train(self) -> slice:
        return slice(0, self.n_train if self.n_train is not None else len(self.coords))

    @property
    def test(self) -> slice:
        return slice(self.n_train if self.n_train is not None else len(self.coords), None)


def generate_field(locations, scenario: ScenarioConfig, seed=None, n_train: int | None = None) -> GroundTruth:
    """Draw one joint shadowing realization over all locations and add path loss."""
    xy = to_xy(locations)
    if xy.shape[0] == 0:
        raise ValueError("need at least one location")
    rng = np.random.default_rng(seed)
    pl = pathloss_db(xy, scenario)
    if scenario.sigma_db == 0:
        w = np.zeros(xy.shape[0])
    else:
        D = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
        cov = scenario.sigma_db**2 * np.exp(-D * LN2 / scenario.d_cor)
        w = psd_factor(cov).lower @ rng.standard_normal(xy.shape[0])
    return GroundTruth(xy, pl, w, pl + w, n_train)


def sample_locations(scenario: ScenarioConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform measurement coordinates and test coordinates kept off the measurements."""
    rng = np.random.default_rng(rng)
    lo, hi = scenario.measurement_span
    train = rng.uniform(lo, hi, scenario.N)
    test = np.empty(scenario.n_test)
    k = 0
    while k < scenario.n_test:
        cand = rng.uniform(lo, hi)
        if np.min(np.abs(train - cand)) >= scenario.min_test_separation:
            test[k] = cand
            k += 1
    return train, test


@dataclass
class OLSPrior:
    """Path loss fit ``a - b * 10 log10(d)`` used as a GP prior mean."""

    a: float
    b: float
    tx_location: tuple[float, float]
    fallback: bool = False

    def __call__(self, locations) -> np.ndarray:
        if self.fallback:
            return np.full(to_xy(locations).shape[0], self.a)
        return self.a - self.b * 10.0 * np.log10(tx_distance(locations, self.tx_location))


def ols_prior(expert: LocalDataset, tx_location=(0.0, 500.0)) -> OLSPrior:
    """Least-squares path loss fit on one node's measurements.

    Degenerate designs (fewer than two distinct distances) fall back to the
    sample mean, with ``fallback`` set.
    """
    y = expert.outputs
    logd = 10.0 * np.log10(tx_distance(expert.inputs, tx_location))
    if len(y) < 2 or np.ptp(logd) < 1e-12:
        log.debug("OLS prior degenerate on %d points; using sample mean", len(y))
        return OLSPrior(float(np.mean(y)), 0.0, tuple(tx_location), fallback=True)
    A = np.column_stack([np.ones_like(logd), -logd])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    return OLSPrior(float(a), float(b), tuple(tx_location))


def with_ols_prior(expert: LocalDataset, tx_location) -> tuple[LocalDataset, OLSPrior]:
    prior = ols_prior(expert, tx_location)
    return LocalDataset(expert.inputs, expert.outputs, prior(expert.inputs)), prior


def build_node_datasets(truth: GroundTruth, M: int, assignment: str = "random", seed=None, tx_location=None):
    """Split the measurements across ``M`` nodes.

    Inputs are the 1-D coordinates ``l``. When ``tx_location`` is given each
    node's prior mean is its own OLS fit and the fitted priors are returned
    alongside the pool; otherwise the local sample mean is used.
    """
    l = truth.coords[truth.train]
    y = truth.rx_power_dbm[truth.train]
    blocks = partition_indices(l[:, None], M, assignment, seed)
    experts, priors = [], []
    for idx in blocks:
        e = LocalDataset(l[idx], y[idx])
        if tx_location is not None:
            e, p = with_ols_prior(e, tx_location)
            priors.append(p)
        experts.append(e)
    pool = ExpertPool(experts, 1)
    return (pool, priors) if tx_location is not None else pool


def pathloss_baseline(scenario: ScenarioConfig, X_test) -> PredictionResult:
    """Exact path loss with the true transmit power and exponent; shadowing unknown."""
    mean = pathloss_db(X_test, scenario)
    return PredictionResult(mean, np.full(mean.shape, scenario.sigma_db**2))


def rmse(predicted, truth) -> float:
    p = np.asarray(predicted, dtype=float).reshape(-1)
    t = np.asarray(truth, dtype=float).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise ValueError(f"rmse needs equal non-empty lengths, got {p.size} and {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class TrialRecord:
    seed: int
    method: str
    rmse_db: float
    train_time_s: float = 0.0
    rounds: int = 0
    uplink_variable_count: int = 0
    theta: Hyperparams | None = None
    error: str = ""


@dataclass
class TrialWorld:
    """Everything a trial needs that does not depend on the channel."""

    seed: int
    truth: GroundTruth
    pool: ExpertPool
    priors: list[OLSPrior]
    full_pool: ExpertPool
    full_prior: OLSPrior
    x_test: np.ndarray
    y_test: np.ndarray
    init_seed: int
    channel_seeds: dict = field(default_factory=dict)


def _stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, k]))


def _substream_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1, np.uint64)[0])


def prepare_trial(scenario: ScenarioConfig, seed: int) -> TrialWorld:
    train_l, test_l = sample_locations(scenario, _stream(seed, 0))
    truth = generate_field(np.concatenate([train_l, test_l]), scenario, _stream(seed, 1), n_train=scenario.N)
    pool, priors = build_node_datasets(truth, scenario.M, scenario.assignment, _stream(seed, 2), scenario.tx_location)
    full, full_prior = with_ols_prior(LocalDataset(train_l, truth.rx_power_dbm[truth.train]), scenario.tx_location)
    return TrialWorld(
        seed=seed,
        truth=truth,
        pool=pool,
        priors=priors,
        full_pool=ExpertPool([full], 1),
        full_prior=full_prior,
        x_test=test_l,
        y_test=truth.rx_power_dbm[truth.test],
        init_seed=_substream_seed(seed, 3),
        channel_seeds={"aircomp-perfect": _substream_seed(seed, 4), "aircomp-statistical": _substream_seed(seed, 5)},
    )


def evaluate_method(world: TrialWorld, method: str, scenario: ScenarioConfig) -> TrialRecord:
    """Train (if needed), predict at the test locations and score one method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    cost = uplink_cost(method, scenario.cost_model())
    if method == "pathloss":
        pred = pathloss_baseline(scenario, world.x_test)
        return TrialRecord(world.seed, method, rmse(pred.mean, world.y_test), uplink_variable_count=cost)

    cfg = TrainConfig(scenario.t_max, scenario.t_multi, scenario.conv_tol, seed=world.init_seed)
    X_test = world.x_test[:, None]
    if method == "full-gpr":
        objective = PoolObjective(world.full_pool, "ideal")
    elif method == "ideal-poe":
        objective = PoolObjective(world.pool, "ideal")
    else:
        params = scenario.channel_params()
        mode, policy = ("aircomp-perfect", None)
        if method == "aircomp-statistical":
            mode, policy = "aircomp-statistical", scenario.statistical_policy()
        objective = PoolObjective(world.pool, mode, params, policy, seed=_stream(world.channel_seeds[method], 0))
    try:
        result = multistart_train(objective, cfg)
    except TrainingFailedError as exc:
        return TrialRecord(world.seed, method, math.nan, objective.train_time, objective.rounds, cost, error=str(exc))
    theta = result.theta_opt

    if method == "full-gpr":
        pred = gpr_predict(world.full_pool.experts[0], theta, world.full_prior(world.x_test), X_test)
    else:
        priors_at_test = [p(world.x_test) for p in world.priors]
        if method == "ideal-poe":
            pred = ideal_dgpr_predict(world.pool, theta, priors_at_test, X_test)
        else:
            locals_ = local_predictions(world.pool, theta, priors_at_test, X_test)
            # Each local variance is at most max(psi1, floor), which bounds the precision sum from below.
            pred = aircomp_predict_round(
                locals_,
                scenario.channel_params(),
                _stream(world.channel_seeds[method], 1),
                precision_floor=world.pool.M / max(theta.psi1, VARIANCE_FLOOR),
            )
    return TrialRecord(
        world.seed,
        method,
        rmse(pred.mean, world.y_test),
        objective.train_time,
        objective.rounds,
        cost,
        theta,
    )


def run_trial(scenario: ScenarioConfig, methods=METHODS, seed: int = 0) -> list[TrialRecord]:
    world = prepare_trial(scenario, seed)
    return [evaluate_method(world, m, scenario) for m in methods]
