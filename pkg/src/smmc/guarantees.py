"""Distribution-free error bounds around a trained posterior.

Inductive conformal prediction turns calibration residuals into a constant
(ICP) or per-point (NICP) half-width around the predictive mean.  A
Chernoff correction transfers the bound from SMC estimates to the exact
satisfaction function, and a Catoni-style PAC-Bayes bound controls the
posterior-expected generalisation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .bnn import BnnPosterior, kl_weights
from .dataset import Dataset
from .gp import GpFactorizationError, GpPosterior, kernel_matrix
from .posterior import Posterior

NORMALIZERS = ("id", "posterior-std", "posterior-quantile")
NORMALIZER_FLOOR = 1e-6


class DegenerateNormalizerError(ValueError):
    pass


def check_trials(calibration: Dataset, training_trials: int | None) -> None:
    if training_trials is not None and calibration.trials != training_trials:
        raise ValueError(
            f"calibration uses {calibration.trials} trials per point but training used {training_trials}; "
            "the conformal guarantee needs them equal"
        )


def normalizer_values(posterior: Posterior, thetas, normalizer: str, epsilon: float = 0.05):
    """Difficulty estimate u(theta) and whether the floor had to be applied."""
    if normalizer not in NORMALIZERS:
        raise ValueError(f"unknown normalizer {normalizer!r}; choose from {NORMALIZERS}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if normalizer == "id":
        return np.ones(len(thetas)), False
    pred = posterior.predict(thetas)
    if normalizer == "posterior-std":
        u = np.asarray(pred.std, dtype=float)
    else:
        lo, hi = pred.interval(epsilon)
        u = np.asarray(hi - lo, dtype=float)
    if not np.all(np.isfinite(u)) or np.any(u <= 0):
        raise DegenerateNormalizerError(f"{normalizer} normalizer is zero or non-finite at some points")
    clamped = bool(np.any(u < NORMALIZER_FLOOR))
    return np.maximum(u, NORMALIZER_FLOOR), clamped


@dataclass(frozen=True)
class CalibrationScores:
    raw: np.ndarray
    normalized: np.ndarray
    normalizer: str
    epsilon: float
    clamped: bool = False


def nonconformity_scores(
    posterior: Posterior,
    calibration: Dataset,
    normalizer: str = "posterior-std",
    epsilon: float = 0.05,
    training_trials: int | None = None,
) -> CalibrationScores:
    """Absolute residuals between SMC estimates and the predictive mean, optionally normalized."""
    if calibration.role != "calibration":
        raise ValueError(f"expected a calibration dataset, got role {calibration.role!r}")
    check_trials(calibration, training_trials)
    thetas = calibration.raw_thetas
    raw = np.abs(calibration.frequencies - posterior.mean(thetas))
    u, clamped = normalizer_values(posterior, thetas, normalizer, epsilon)
    return CalibrationScores(raw, raw / u, normalizer, epsilon, clamped)


def conformal_rank(n: int, epsilon: float) -> int:
    """1-based order statistic used as the conformal quantile."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    # the small tolerance keeps exact products such as 201 * 0.95 from rounding up
    return math.ceil((n + 1) * (1 - epsilon) - 1e-9)


def conformal_quantile(scores, epsilon: float) -> float:
    """The ``ceil((N+1)(1-eps))``-th smallest score, ``inf`` when that rank exceeds N."""
    scores = np.sort(np.asarray(scores, dtype=float))
    if scores.size == 0:
        raise ValueError("need at least one calibration score")
    k = conformal_rank(len(scores), epsilon)
    return math.inf if k > len(scores) else float(scores[k - 1])


@dataclass(frozen=True)
class GuaranteeBound:
    """Half-width bound ``|target(theta) - mean(theta)| <= half_width(theta)``.

    Holds with probability at least ``1 - epsilon_total`` for a new
    exchangeable point.
    """

    kind: str
    epsilon_total: float
    tau: float
    target: str
    normalizer: str
    posterior: Posterior = field(repr=False)
    offset: float = 0.0
    epsilon: float = 0.05
    clamped: bool = False

    @property
    def vacuous(self) -> bool:
        return not math.isfinite(self.tau) or self.epsilon_total >= 1

    def half_width(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self.kind.startswith("nicp"):
            u, _ = normalizer_values(self.posterior, thetas, self.normalizer, self.epsilon)
            base = self.tau * u
        else:
            base = np.full(len(thetas), self.tau)
        return base + self.offset

    def band(self, thetas) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Predictive mean with lower and upper bound, clipped to [0, 1]."""
        mean = self.posterior.mean(thetas)
        w = self.half_width(thetas)
        return mean, np.clip(mean - w, 0, 1), np.clip(mean + w, 0, 1)

    def coverage(self, dataset: Dataset) -> float:
        """Fraction of points whose SMC estimate lies within the bound."""
        thetas = dataset.raw_thetas
        err = np.abs(dataset.frequencies - self.posterior.mean(thetas))
        return float(np.mean(err <= self.half_width(thetas)))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon_total": self.epsilon_total,
            "tau": self.tau if math.isfinite(self.tau) else "inf",
            "offset": self.offset,
            "target": self.target,
            "normalizer": self.normalizer,
            "vacuous": self.vacuous,
            "normalizer_clamped": self.clamped,
        }


def icp_bound(posterior: Posterior, calibration: Dataset, epsilon: float = 0.05, training_trials=None):
    scores = nonconformity_scores(posterior, calibration, "id", epsilon, training_trials)
    tau = conformal_quantile(scores.raw, epsilon)
    return GuaranteeBound("icp", epsilon, tau, "smc-estimate", "id", posterior, 0.0, epsilon)


def nicp_bound(
    posterior: Posterior,
    calibration: Dataset,
    epsilon: float = 0.05,
    normalizer: str = "posterior-std",
    training_trials=None,
):
    if normalizer == "id":
        raise ValueError("NICP needs a non-constant normalizer; use icp_bound for the identity")
    scores = nonconformity_scores(posterior, calibration, normalizer, epsilon, training_trials)
    tau = conformal_quantile(scores.normalized, epsilon)
    return GuaranteeBound("nicp", epsilon, tau, "smc-estimate", normalizer, posterior, 0.0, epsilon, scores.clamped)


def chernoff_half_width(trials: int, epsilon2: float) -> float:
    """T such that ``2 exp(-2 M T^2) = epsilon2``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 < epsilon2 < 1:
        raise ValueError("epsilon2 must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / epsilon2) / (2.0 * trials))


def chernoff_significance(trials: int, half_width: float) -> float:
    return 2.0 * math.exp(-2.0 * trials * half_width**2)


def combined_bound(base: GuaranteeBound, trials: int, epsilon2: float) -> GuaranteeBound:
    """Widen an SMC-target bound by the Chernoff half-width; significances add (union bound)."""
    if base.target != "smc-estimate" or base.kind not in ("icp", "nicp"):
        raise ValueError("combined_bound expects a plain ICP or NICP bound")
    return GuaranteeBound(
        base.kind + "+chernoff",
        base.epsilon_total + epsilon2,
        base.tau,
        "exact-satisfaction-function",
        base.normalizer,
        base.posterior,
        base.offset + chernoff_half_width(trials, epsilon2),
        base.epsilon,
        base.clamped,
    )


def pac_bayes_objective(lam, empirical_error, kl, n, epsilon, C=1.0):
    """Right-hand side of the Catoni bound at a given lambda > 0."""
    lam = np.asarray(lam, dtype=float)
    return empirical_error + lam * C**2 / (8.0 * n) + (kl + math.log(1.0 / epsilon)) / lam


def pac_bayes_lambda(kl: float, n: int, epsilon: float, C: float = 1.0) -> float:
    return math.sqrt(8.0 * n * (kl + math.log(1.0 / epsilon)) / C**2)


def pac_bayes_bound(empirical_error: float, kl: float, n: int, epsilon: float = 0.05, C: float = 1.0) -> float:
    """Catoni bound at its optimal lambda: ``emp + C sqrt((KL + ln(1/eps)) / (2n))``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kl < 0:
        raise ValueError("KL must be nonnegative")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if C <= 0:
        raise ValueError("C must be positive")
    lam = pac_bayes_lambda(kl, n, epsilon, C)
    return float(pac_bayes_objective(lam, empirical_error, kl, n, epsilon, C))


def gaussian_kl(mean_q, cov_q, mean_p, cov_p) -> float:
    """KL[N(mean_q, cov_q) || N(mean_p, cov_p)] with Cholesky factors."""
    n = len(mean_q)
    Lq = np.linalg.cholesky(cov_q)
    Lp = np.linalg.cholesky(cov_p)
    A = solve_triangular(Lp, Lq, lower=True)
    b = solve_triangular(Lp, np.asarray(mean_p) - np.asarray(mean_q), lower=True)
    logdet = 2.0 * (np.log(np.diag(Lp)).sum() - np.log(np.diag(Lq)).sum())
    return float(0.5 * ((A * A).sum() + b @ b - n + logdet))


def gp_training_kl(posterior: GpPosterior, thetas, max_tries: int = 6) -> float:
    """KL between q(g) and the reference-kernel prior, jointly at ``thetas``.

    The joint q covariance is ``K_tt - K_tm K_mm^-1 K_mt + K_tm K_mm^-1 S S^T K_mm^-1 K_mt``.
    Both covariances get the state's relative jitter, escalated tenfold on
    factorization failure.
    """
    state = posterior.state
    X = posterior.scaling.apply(thetas)
    reference = posterior.reference_kernel or state.kernel
    jitter = state.jitter
    for _ in range(max_tries):
        try:
            Kmm = kernel_matrix(state.kernel, state.Z, jitter=jitter * state.kernel.variance)
            Kmt = kernel_matrix(state.kernel, state.Z, X)
            Ktt = kernel_matrix(state.kernel, X, jitter=jitter * state.kernel.variance)
            B = np.linalg.solve(Kmm, Kmt)
            SB = np.tril(state.S).T @ B
            cov_q = Ktt - Kmt.T @ B + SB.T @ SB
            cov_q = 0.5 * (cov_q + cov_q.T)
            cov_p = kernel_matrix(reference, X, jitter=jitter * reference.variance)
            return max(gaussian_kl(B.T @ state.eta, cov_q, np.zeros(len(X)), cov_p), 0.0)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GpFactorizationError(f"covariance factorization failed up to relative jitter {jitter / 10:g}")


def kl_for_pac(posterior: Posterior, training: Dataset | np.ndarray) -> float:
    """KL term of the PAC-Bayes bound for either back end."""
    if isinstance(posterior, BnnPosterior):
        return kl_weights(posterior)
    if isinstance(posterior, GpPosterior):
        thetas = training.raw_thetas if isinstance(training, Dataset) else training
        return gp_training_kl(posterior, thetas)
    raise TypeError(f"unsupported posterior type {type(posterior).__name__}")


@dataclass(frozen=True)
class ExpectedError:
    mean: float
    stderr: float
    n_samples: int


def expected_errors(posterior: Posterior, dataset: Dataset, n_samples: int = 1000, seed: int = 0) -> ExpectedError:
    """Monte-Carlo estimate of the posterior-expected mean absolute error on ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if n_samples < 2:
        raise ValueError("need at least two posterior samples")
    samples = posterior.sample(dataset.raw_thetas, n_samples, seed)
    per_sample = np.abs(samples - dataset.frequencies).mean(axis=1)
    return ExpectedError(float(per_sample.mean()), float(per_sample.std(ddof=1) / math.sqrt(n_samples)), n_samples)


@dataclass(frozen=True)
class PacBayesReport:
    bound: float
    empirical_error: float
    empirical_stderr: float
    kl: float
    n: int
    epsilon: float
    lam: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pac_bayes_report(
    posterior: Posterior, training: Dataset, epsilon: float = 0.05, n_samples: int = 1000, seed: int = 0
) -> PacBayesReport:
    emp = expected_errors(posterior, training, n_samples, seed)
    kl = kl_for_pac(posterior, training)
    n = len(training)
    return PacBayesReport(
        pac_bayes_bound(emp.mean, kl, n, epsilon), emp.mean, emp.stderr, kl, n, epsilon, pac_bayes_lambda(kl, n, epsilon)
    )
