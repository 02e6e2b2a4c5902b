"""Hyperparameter training with multi-start Nelder-Mead.

The objective is the sum of the experts' local log marginal likelihoods,
either computed exactly or decoded from one over-the-air round per call.
One objective evaluation is one channel round, so ``t_max`` caps the
rounds spent by a single start.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import (
    ChannelParams,
    PowerPolicy,
    perfect_csi_sum,
    power_control_statistical,
    statistical_csi_sum,
    truncate_center,
)
from .gp import Hyperparams, lml_from_distances, pairwise_distances
from .poe import ExpertPool

MODES = ("ideal", "aircomp-perfect", "aircomp-statistical")

DEFAULT_INIT_RANGES = {
    "psi1": (1e-1, 1e3),
    "psi2": (1.0, 1e3),
    "sigma_eps": (1e-2, 1e2),
}

# Reflection, expansion, contraction, shrink.
NM_ALPHA, NM_GAMMA, NM_RHO, NM_SIGMA = 1.0, 2.0, 0.5, 0.5
NM_INIT_STEP = 0.5


class TrainingFailedError(RuntimeError):
    def __init__(self, message: str, diagnostics: list):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    t_max: int = 600
    t_multi: int = 3
    conv_tol: float = 1e-4
    init_ranges: dict = field(default_factory=lambda: dict(DEFAULT_INIT_RANGES))
    seed: int | None = 0

    def __post_init__(self):
        if self.t_max < 1 or self.t_multi < 1:
            raise ValueError("t_max and t_multi must be >= 1")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be positive")
        for name in ("psi1", "psi2", "sigma_eps"):
            lo, hi = self.init_ranges[name]
            if not 0 < lo <= hi:
                raise ValueError(f"bad init range for {name}: {(lo, hi)}")


@dataclass
class NelderMeadResult:
    theta: Hyperparams
    value: float
    trace: list[float]
    best_trace: list[float]
    theta0: Hyperparams
    converged: bool

    @property
    def n_evals(self) -> int:
        return len(self.trace)


@dataclass
class TrainResult:
    theta_opt: Hyperparams
    best_objective: float
    objective_trace: list[float]
    rounds_used: int
    per_start_results: list[NelderMeadResult]


class _BudgetExhausted(Exception):
    pass


def nelder_mead(
    objective: Callable[[Hyperparams], float],
    theta0: Hyperparams,
    t_max: int = 600,
    conv_tol: float = 1e-4,
) -> NelderMeadResult:
    """Maximize ``objective`` over hyperparameters with a Nelder-Mead simplex.

    The search runs in ``(log psi1, log psi2, log sigma_eps^2)``. Every
    objective call counts against ``t_max``. The run also stops once the
    spread of objective values across the simplex falls below ``conv_tol``.
    Calls that raise or return non-finite values score ``-inf``.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    trace: list[float] = []
    best_trace: list[float] = []
    best = [-math.inf, theta0]
    rejected = [0]

    def cost(z, theta=None):
        if len(trace) >= t_max or rejected[0] > 10 * t_max:
            raise _BudgetExhausted
        try:
            theta = theta or Hyperparams.from_log(z)
        except (ValueError, OverflowError):
            # Unrepresentable point; rejected without spending a round.
            rejected[0] += 1
            return math.inf
        try:
            v = float(objective(theta))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            v = -math.inf
        if not math.isfinite(v):
            v = -math.inf
        trace.append(v)
        if v > best[0]:
            best[0], best[1] = v, theta
        best_trace.append(best[0])
        return -v

    x0 = theta0.to_log()
    n = x0.shape[0]
    simplex = [x0] + [x0 + NM_INIT_STEP * np.eye(n)[k] for k in range(n)]
    fvals: list[float] = []
    converged = False
    try:
        # Start vertex is scored at theta0 itself, not its log round-trip.
        fvals.append(cost(x0, theta0))
        for x in simplex[1:]:
            fvals.append(cost(x))
        simplex = np.array(simplex)
        fvals = np.array(fvals)
        while True:
            order = np.argsort(fvals, kind="stable")
            simplex, fvals = simplex[order], fvals[order]
            if np.all(np.isfinite(fvals)) and fvals[-1] - fvals[0] < conv_tol:
                converged = True
                break
            centroid = simplex[:-1].mean(axis=0)
            worst = simplex[-1]
            xr = centroid + NM_ALPHA * (centroid - worst)
            fr = cost(xr)
            if fr < fvals[0]:
                xe = centroid + NM_GAMMA * (xr - centroid)
                fe = cost(xe)
                simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
                continue
            if fr < fvals[-2]:
                simplex[-1], fvals[-1] = xr, fr
                continue
            if fr < fvals[-1]:
                xc = centroid + NM_RHO * (xr - centroid)
                fc = cost(xc)
                if fc <= fr:
                    simplex[-1], fvals[-1] = xc, fc
                    continue
            else:
                xc = centroid + NM_RHO * (worst - centroid)
                fc = cost(xc)
                if fc < fvals[-1]:
                    simplex[-1], fvals[-1] = xc, fc
                    continue
            for k in range(1, n + 1):
                simplex[k] = simplex[0] + NM_SIGMA * (simplex[k] - simplex[0])
                fvals[k] = cost(simplex[k])
    except _BudgetExhausted:
        pass
    return NelderMeadResult(best[1], best[0], trace, best_trace, theta0, converged)


def sample_initial_theta(rng: np.random.Generator, init_ranges: dict) -> Hyperparams:
    """Draw each hyperparameter log-uniformly from its interval."""
    vals = {}
    for name in ("psi1", "psi2", "sigma_eps"):
        lo, hi = init_ranges[name]
        vals[name] = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return Hyperparams(**vals)


def multistart_train(objective: Callable[[Hyperparams], float], config: TrainConfig) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    starts = []
    for _ in range(config.t_multi):
        theta0 = sample_initial_theta(rng, config.init_ranges)
        starts.append(nelder_mead(objective, theta0, config.t_max, config.conv_tol))
    finite = [r for r in starts if math.isfinite(r.value)]
    if not finite:
        diag = [(r.theta0, r.n_evals) for r in starts]
        raise TrainingFailedError("every start failed to produce a finite objective", diag)
    best = max(finite, key=lambda r: r.value)
    trace = [v for r in starts for v in r.trace]
    return TrainResult(best.theta, best.value, trace, len(trace), starts)


class PoolObjective:
    """Sum of local log marginal likelihoods, as recovered by the BS.

    Pairwise distances are cached per expert since they do not depend on
    the hyperparameters. Each call consumes one aggregation round; in the
    AirComp modes it draws fresh fading and noise from the seeded stream.
    """

    def __init__(
        self,
        pool: ExpertPool,
        mode: str = "ideal",
        channel: ChannelParams | None = None,
        policy: PowerPolicy | None = None,
        seed=None,
        record: bool = False,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown objective mode {mode!r}")
        if mode != "ideal" and channel is None:
            raise ValueError(f"mode {mode!r} needs channel parameters")
        if channel is not None and channel.M != pool.M:
            raise ValueError(f"channel has {channel.M} nodes, pool has {pool.M}")
        self.pool = pool
        self.mode = mode
        self.channel = channel
        self.policy = policy
        self.rng = np.random.default_rng(seed)
        self.record = record
        self.history: list[dict] = []
        self.rounds = 0
        self.power_control_calls = 0
        self.rho = None
        self.node_time = np.zeros(pool.M)
        self._dist = [pairwise_distances(e.inputs) for e in pool.experts]
        self._resid = [e.residual for e in pool.experts]
        if mode == "aircomp-statistical":
            if policy is None or policy.mode != "statistical":
                raise ValueError("statistical mode needs a statistical PowerPolicy")
            self.rho = policy.rho or power_control_statistical(
                channel.gamma_bar, channel.p_max, policy.l_min, policy.l_max
            )
            self.power_control_calls = 1

    def local_values(self, theta: Hyperparams) -> np.ndarray:
        out = np.empty(len(self._dist))
        for i, (D, r) in enumerate(zip(self._dist, self._resid)):
            t0 = time.perf_counter()
            try:
                out[i] = lml_from_distances(D, r, theta)
            except np.linalg.LinAlgError:
                out[i] = np.nan
            self.node_time[i] += time.perf_counter() - t0
        return out

    @property
    def train_time(self) -> float:
        """Likelihood time of the slowest node; nodes compute in parallel."""
        return float(self.node_time.max())

    def __call__(self, theta: Hyperparams) -> float:
        L = self.local_values(theta)
        self.rounds += 1
        rho = None
        if self.mode == "ideal":
            value = math.fsum(L) if np.all(np.isfinite(L)) else -math.inf
        elif self.mode == "aircomp-perfect":
            if not np.all(np.isfinite(L)):
                value = -math.inf
            else:
                dec, rec = perfect_csi_sum(L[:, None], self.channel, self.rng)
                value, rho = float(dec[0]), rec.rho
        else:
            p = self.policy
            L_sent = np.where(np.isfinite(L), L, p.l_min)
            s = truncate_center(L_sent, p.l_min, p.l_max)
            dec, _ = statistical_csi_sum(s[:, None], self.channel, self.rho, p.c_unbias, self.rng)
            # Undo the known centering offset so the value estimates sum(L_i).
            value, rho = float(dec[0]) + self.pool.M * 0.5 * (p.l_max + p.l_min), self.rho
        if self.record:
            self.history.append(
                {
                    "iteration": self.rounds - 1,
                    "psi1": theta.psi1,
                    "psi2": theta.psi2,
                    "sigma_eps": theta.sigma_eps,
                    "objective": value,
                    "true_sum": math.fsum(L) if np.all(np.isfinite(L)) else -math.inf,
                    "rho": rho if rho is not None else "",
                }
            )
        return value


def make_objective(
    pool: ExpertPool,
    mode: str = "ideal",
    channel_params: ChannelParams | None = None,
    policy: PowerPolicy | None = None,
    seed=None,
    record: bool = False,
) -> PoolObjective:
    return PoolObjective(pool, mode, channel_params, policy, seed, record)


TRACE_FIELDS = ["iteration", "psi1", "psi2", "sigma_eps", "objective", "true_sum", "rho"]


def write_trace_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
