"""Product-of-experts GPR: dataset partitioning, local computations, fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gp import (
    Hyperparams,
    LocalDataset,
    PredictionResult,
    gpr_predict,
    log_marginal_likelihood,
)

VARIANCE_FLOOR = 1e-12


@dataclass
class ExpertPool:
    experts: list[LocalDataset]
    n_in: int

    def __post_init__(self):
        if not self.experts:
            raise ValueError("an expert pool needs at least one expert")
        for e in self.experts:
            if e.n_in != self.n_in:
                raise ValueError(f"expert input dimension {e.n_in} != pool n_in {self.n_in}")

    @property
    def M(self) -> int:
        return len(self.experts)

    @property
    def N(self) -> int:
        return sum(len(e) for e in self.experts)

    @property
    def sizes(self) -> list[int]:
        return [len(e) for e in self.experts]


@dataclass
class LocalPrediction:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.variance = np.asarray(self.variance, dtype=float).reshape(-1)
        if self.mean.shape != self.variance.shape:
            raise ValueError("mean and variance must have equal length")
        if np.any(~(self.variance > 0)):
            raise ValueError("local variances must be strictly positive")

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.variance


def partition_indices(inputs: np.ndarray, M: int, strategy: str = "random", seed=None) -> list[np.ndarray]:
    """Split ``range(N)`` into ``M`` disjoint index blocks.

    ``random`` shuffles and then cuts, ``spatial-blocks`` sorts on the first
    input coordinate. Blocks hold ``N // M`` points; the last block also
    takes the remainder.
    """
    N = inputs.shape[0]
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if N < M:
        raise ValueError(f"cannot split {N} points across {M} experts")
    if M == 1 and strategy in ("random", "spatial-blocks"):
        return [np.arange(N)]
    if strategy == "random":
        order = np.random.default_rng(seed).permutation(N)
    elif strategy == "spatial-blocks":
        order = np.argsort(inputs[:, 0], kind="stable")
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    size = N // M
    cuts = [k * size for k in range(M)] + [N]
    return [order[cuts[k] : cuts[k + 1]] for k in range(M)]


def partition_dataset(full: LocalDataset, M: int, strategy: str = "random", seed=None) -> ExpertPool:
    """Distribute a dataset over ``M`` experts, keeping each point's prior mean."""
    blocks = partition_indices(full.inputs, M, strategy, seed)
    experts = [
        LocalDataset(full.inputs[idx], full.outputs[idx], full.prior_mean[idx]) for idx in blocks
    ]
    return ExpertPool(experts, full.n_in)


def local_likelihood(expert: LocalDataset, theta: Hyperparams) -> float:
    return log_marginal_likelihood(expert, theta)


def local_predict(expert: LocalDataset, theta: Hyperparams, prior_at_test, X_test) -> LocalPrediction:
    res = gpr_predict(expert, theta, prior_at_test, X_test)
    return LocalPrediction(res.mean, np.maximum(res.variance, VARIANCE_FLOOR))


def fuse_sums(precision_sum, weighted_mean_sum, floor: float = 0.0) -> PredictionResult:
    """Recover the fused posterior from the two aggregated sums.

    ``precision_sum`` is the sum of local inverse variances and
    ``weighted_mean_sum`` the sum of inverse-variance-weighted local means.
    """
    precision_sum = np.asarray(precision_sum, dtype=float)
    if floor > 0:
        precision_sum = np.maximum(precision_sum, floor)
    var = 1.0 / precision_sum
    return PredictionResult(var * np.asarray(weighted_mean_sum, dtype=float), var)


def poe_fuse(locals_: Sequence[LocalPrediction]) -> PredictionResult:
    """Precision-weighted product-of-experts fusion.

    Sums run in list order so results do not depend on scheduling.
    """
    if len(locals_) == 0:
        raise ValueError("poe_fuse needs at least one local prediction")
    if len(locals_) == 1:
        only = locals_[0]
        return PredictionResult(only.mean.copy(), only.variance.copy())
    n = locals_[0].mean.shape[0]
    if any(lp.mean.shape[0] != n for lp in locals_):
        raise ValueError("all local predictions must cover the same test points")
    prec = np.zeros(n)
    wmean = np.zeros(n)
    for lp in locals_:
        p = lp.precision
        prec += p
        wmean += p * lp.mean
    return fuse_sums(prec, wmean)


def local_predictions(pool: ExpertPool, theta: Hyperparams, priors_at_test, X_test) -> list[LocalPrediction]:
    if len(priors_at_test) != pool.M:
        raise ValueError(f"need one prior vector per expert ({pool.M}), got {len(priors_at_test)}")
    return [
        local_predict(e, theta, prior, X_test) for e, prior in zip(pool.experts, priors_at_test)
    ]


def ideal_dgpr_predict(pool: ExpertPool, theta: Hyperparams, priors_at_test, X_test) -> PredictionResult:
    """DGPR-PoE prediction with error-free aggregation."""
    return poe_fuse(local_predictions(pool, theta, priors_at_test, X_test))


def sum_local_likelihoods(pool: ExpertPool, theta: Hyperparams) -> float:
    return math.fsum(local_likelihood(e, theta) for e in pool.experts)
