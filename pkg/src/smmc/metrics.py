"""Test-set metrics: RMSE, interval accuracy and average credible-interval width."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .posterior import Posterior, Prediction


def _check_test(test: Dataset) -> None:
    if len(test) == 0:
        raise ValueError("test dataset is empty")
    if test.role != "test":
        raise ValueError(f"expected a test dataset, got role {test.role!r}")


def _rmse(freq, mean) -> float:
    return float(np.sqrt(np.mean((freq - mean) ** 2)))


def _accuracy(freq, half, lo, hi) -> float:
    return float(np.mean(np.maximum(freq - half, lo) <= np.minimum(freq + half, hi)))


def rmse(posterior: Posterior, test: Dataset) -> float:
    """Root mean squared residual between SMC estimates and the predictive mean."""
    _check_test(test)
    return _rmse(test.frequencies, posterior.mean(test.raw_thetas))


def accuracy(posterior: Posterior, test: Dataset, epsilon: float = 0.05, z: float = 1.96) -> float:
    """Fraction of points where the SMC confidence interval meets the credible interval."""
    _check_test(test)
    if z <= 0:
        raise ValueError("z must be positive")
    lo, hi = posterior.predict(test.raw_thetas).interval(epsilon)
    return _accuracy(test.frequencies, test.smc(z).ci_halfwidth, lo, hi)


def uncertainty_width(posterior: Posterior, test: Dataset, epsilon: float = 0.05) -> float:
    """Average width of the central ``1 - epsilon`` credible intervals."""
    _check_test(test)
    lo, hi = posterior.predict(test.raw_thetas).interval(epsilon)
    return float(np.mean(hi - lo))


def smc_width(test: Dataset, z: float = 1.96) -> float:
    """Average width of the SMC confidence intervals, the reference for ``uncertainty_width``."""
    return float(np.mean(2 * test.smc(z).ci_halfwidth))


@dataclass(frozen=True)
class EvaluationReport:
    rmse: float
    accuracy: float
    uncertainty_width: float
    test_uncertainty_width: float
    epsilon: float
    z: float
    n_points: int
    trials: int
    thetas: np.ndarray
    smc_mean: np.ndarray
    smc_halfwidth: np.ndarray
    pred_mean: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray

    def summary(self) -> dict:
        return {
            "rmse": self.rmse,
            "accuracy": self.accuracy,
            "uncertainty_width": self.uncertainty_width,
            "test_uncertainty_width": self.test_uncertainty_width,
            "epsilon": self.epsilon,
            "z": self.z,
            "n_points": self.n_points,
            "trials": self.trials,
        }

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        """JSON summary plus a plot-ready per-point CSV (``<json stem>.csv`` by default)."""
        json_path = Path(json_path)
        csv_path = Path(csv_path) if csv_path is not None else json_path.with_suffix(".csv")
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        d = self.thetas.shape[1]
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                [f"theta_{k}" for k in range(d)] + ["smc_mean", "smc_lo", "smc_hi", "pred_mean", "cred_lo", "cred_hi"]
            )
            for j in range(self.n_points):
                row = list(self.thetas[j]) + [
                    self.smc_mean[j],
                    self.smc_mean[j] - self.smc_halfwidth[j],
                    self.smc_mean[j] + self.smc_halfwidth[j],
                    self.pred_mean[j],
                    self.q_lo[j],
                    self.q_hi[j],
                ]
                writer.writerow([repr(float(v)) for v in row])


def evaluate(posterior: Posterior, test: Dataset, epsilon: float = 0.05, z: float = 1.96) -> EvaluationReport:
    """All three metrics from a single prediction pass."""
    _check_test(test)
    if z <= 0:
        raise ValueError("z must be positive")
    thetas = test.raw_thetas
    pred: Prediction = posterior.predict(thetas)
    lo, hi = pred.interval(epsilon)
    freq = test.frequencies
    half = test.smc(z).ci_halfwidth
    return EvaluationReport(
        rmse=_rmse(freq, pred.mean),
        accuracy=_accuracy(freq, half, lo, hi),
        uncertainty_width=float(np.mean(hi - lo)),
        test_uncertainty_width=float(np.mean(2 * half)),
        epsilon=epsilon,
        z=z,
        n_points=len(test),
        trials=test.trials,
        thetas=thetas,
        smc_mean=freq,
        smc_halfwidth=half,
        pred_mean=np.asarray(pred.mean),
        q_lo=np.asarray(lo),
        q_hi=np.asarray(hi),
    )


def report_schema() -> dict:
    with resources.files("smmc").joinpath("data").joinpath("report_schema.json").open() as fh:
        return json.load(fh)
