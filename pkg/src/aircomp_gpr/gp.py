"""Exact Gaussian process regression with an exponential kernel.

Every distributed expert runs these routines on its local data, and the
same routines on the pooled data give the full-GPR baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, LinAlgError
from scipy.spatial.distance import cdist

LOG_2PI = math.log(2.0 * math.pi)

# Diagonal jitter ladder, relative to mean(diag(A)).
JITTER_START = 1e-10
JITTER_MAX = 1e-4


class SingularMatrixError(np.linalg.LinAlgError):
    """Cholesky factorization failed even with the largest jitter."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class Hyperparams:
    """Kernel variance ``psi1``, length scale ``psi2`` and noise std ``sigma_eps``."""

    psi1: float
    psi2: float
    sigma_eps: float = 0.0

    def __post_init__(self):
        vals = (self.psi1, self.psi2, self.sigma_eps)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"hyperparameters must be finite, got {vals}")
        if self.psi1 <= 0 or self.psi2 <= 0:
            raise ValueError(f"psi1 and psi2 must be positive, got {vals}")
        if self.sigma_eps < 0:
            raise ValueError(f"sigma_eps must be non-negative, got {self.sigma_eps}")

    @property
    def noise_var(self) -> float:
        return self.sigma_eps**2

    def to_log(self) -> np.ndarray:
        """Unconstrained coordinates ``(log psi1, log psi2, log sigma_eps^2)``."""
        return np.array([math.log(self.psi1), math.log(self.psi2), math.log(self.noise_var)])

    @classmethod
    def from_log(cls, z) -> "Hyperparams":
        z = np.asarray(z, dtype=float)
        return cls(psi1=math.exp(z[0]), psi2=math.exp(z[1]), sigma_eps=math.exp(0.5 * z[2]))


def as_inputs(X) -> np.ndarray:
    """Coerce inputs to a 2-D float array of shape (n, n_in)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"inputs must be at most 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs contain non-finite values")
    return X


@dataclass
class LocalDataset:
    """Inputs, outputs and prior mean vector held by one node.

    ``inputs`` is stored as an (N, n_in) array. When ``prior_mean`` is
    omitted the local sample mean of the outputs is used.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    prior_mean: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = as_inputs(self.inputs)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        if self.prior_mean is None:
            self.prior_mean = np.full_like(self.outputs, self.outputs.mean() if self.outputs.size else 0.0)
        else:
            self.prior_mean = np.broadcast_to(
                np.asarray(self.prior_mean, dtype=float), self.outputs.shape
            ).copy()
        n = self.inputs.shape[0]
        if n < 1:
            raise ValueError("a dataset needs at least one point")
        if self.outputs.shape[0] != n or self.prior_mean.shape[0] != n:
            raise ValueError(
                f"length mismatch: {n} inputs, {self.outputs.shape[0]} outputs, "
                f"{self.prior_mean.shape[0]} prior means"
            )
        if not (np.all(np.isfinite(self.outputs)) and np.all(np.isfinite(self.prior_mean))):
            raise ValueError("outputs and prior mean must be finite")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def residual(self) -> np.ndarray:
        return self.outputs - self.prior_mean


@dataclass
class PredictionResult:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.variance = np.asarray(self.variance, dtype=float).reshape(-1)
        if self.mean.shape != self.variance.shape:
            raise ValueError("mean and variance must have equal length")

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def __len__(self) -> int:
        return self.mean.shape[0]


def kernel_eval(xi, xj, psi: Hyperparams) -> float:
    """``psi1 * exp(-||xi - xj|| / psi2)`` for a single pair of inputs."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(xj))):
        raise ValueError("kernel inputs must be finite")
    if xi.shape != xj.shape:
        raise ValueError(f"input dimension mismatch: {xi.shape} vs {xj.shape}")
    return float(psi.psi1 * math.exp(-float(np.linalg.norm(xi - xj)) / psi.psi2))


def kernel_from_distances(D: np.ndarray, psi: Hyperparams) -> np.ndarray:
    return psi.psi1 * np.exp(-D / psi.psi2)


def pairwise_distances(XA, XB=None) -> np.ndarray:
    XA = as_inputs(XA)
    XB = XA if XB is None else as_inputs(XB)
    return cdist(XA, XB)


def kernel_matrix(X, psi: Hyperparams, X2=None) -> np.ndarray:
    """Kernel matrix between the rows of ``X`` (and ``X2`` if given)."""
    X = as_inputs(X)
    if X.shape[0] == 0:
        raise ValueError("kernel_matrix needs at least one input")
    return kernel_from_distances(pairwise_distances(X, X2), psi)


@dataclass
class CholeskyFactor:
    """Lower Cholesky factor of ``A + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0
    logdet: float = field(init=False)

    def __post_init__(self):
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def solve(self, B) -> np.ndarray:
        return cho_solve((self.lower, True), B, check_finite=False)


def psd_factor(A) -> CholeskyFactor:
    """Cholesky-factor a symmetric matrix, escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * mean(diag(A))`` and grows tenfold up to
    ``1e-4 * mean(diag(A))``; :class:`SingularMatrixError` is raised past that.
    """
    A = np.asarray(A, dtype=float)
    try:
        return CholeskyFactor(cholesky(A, lower=True, check_finite=False))
    except LinAlgError:
        pass
    scale = float(np.mean(np.diag(A)))
    if not math.isfinite(scale) or scale <= 0:
        raise SingularMatrixError("matrix has non-positive or non-finite diagonal", 0.0)
    eye = np.eye(A.shape[0])
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return CholeskyFactor(cholesky(A + jitter * eye, lower=True, check_finite=False), jitter)
        except LinAlgError:
            rel *= 10.0
    raise SingularMatrixError(
        f"Cholesky failed with jitter up to {JITTER_MAX * scale:.3g}", JITTER_MAX * scale
    )


def psd_solve(A, B, return_logdet: bool = False):
    """Return ``A^{-1} B`` (and optionally ``log det A``) via Cholesky."""
    fac = psd_factor(A)
    x = fac.solve(np.asarray(B, dtype=float))
    if return_logdet:
        return x, fac.logdet
    return x


def _noisy_cov(D: np.ndarray, theta: Hyperparams) -> np.ndarray:
    K = kernel_from_distances(D, theta)
    K[np.diag_indices_from(K)] += theta.noise_var
    return K


def lml_from_distances(D: np.ndarray, residual: np.ndarray, theta: Hyperparams) -> float:
    """Log marginal likelihood given the precomputed pairwise distance matrix."""
    fac = psd_factor(_noisy_cov(D, theta))
    alpha = fac.solve(residual)
    n = residual.shape[0]
    return float(-0.5 * residual @ alpha - 0.5 * fac.logdet - 0.5 * n * LOG_2PI)


def log_marginal_likelihood(data: LocalDataset, theta: Hyperparams) -> float:
    return lml_from_distances(pairwise_distances(data.inputs), data.residual, theta)


def gpr_predict(data: LocalDataset, theta: Hyperparams, prior_at_test, X_test) -> PredictionResult:
    """Posterior mean and variance of the latent function at ``X_test``.

    ``prior_at_test`` is the prior mean evaluated at the test inputs; the
    caller decides which prior model to use.
    """
    X_test = as_inputs(X_test)
    if X_test.shape[1] != data.n_in:
        raise ValueError(f"test inputs have {X_test.shape[1]} dims, data has {data.n_in}")
    prior_at_test = np.broadcast_to(np.asarray(prior_at_test, dtype=float), (X_test.shape[0],))
    fac = psd_factor(_noisy_cov(pairwise_distances(data.inputs), theta))
    Ks = kernel_matrix(data.inputs, theta, X_test)  # (N, n_test)
    mean = prior_at_test + Ks.T @ fac.solve(data.residual)
    v = fac.solve(Ks)
    var = theta.psi1 - np.einsum("ij,ij->j", Ks, v)
    return PredictionResult(mean, np.maximum(var, 0.0))
