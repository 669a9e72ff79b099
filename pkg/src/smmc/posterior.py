"""Common interface of trained satisfaction-function posteriors.

Both back ends answer the same questions about f(theta) in [0, 1]: the
predictive mean, standard deviation, quantiles, and joint samples.  Bundles
are JSON documents tagged with ``kind`` so any consumer can reload them.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np


class Prediction(ABC):
    """Per-point predictive summary for a batch of parameter vectors."""

    mean: np.ndarray
    std: np.ndarray

    @abstractmethod
    def quantile(self, p: float) -> np.ndarray: ...

    def interval(self, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
        """Central ``1 - epsilon`` credible interval."""
        return self.quantile(epsilon / 2), self.quantile(1 - epsilon / 2)


class SamplePrediction(Prediction):
    """Empirical predictive distribution from ``(C, n)`` function samples."""

    def __init__(self, samples: np.ndarray):
        self.samples = np.asarray(samples)
        # centring on one draw is exact for identical samples, so a degenerate posterior has std exactly 0
        centred = self.samples - self.samples[:1]
        self.mean = self.samples[0] + centred.mean(axis=0)
        self.std = centred.std(axis=0, ddof=1) if len(self.samples) > 1 else np.zeros(self.samples.shape[1])

    def quantile(self, p: float) -> np.ndarray:
        # an order statistic, no interpolation
        return np.quantile(self.samples, p, axis=0, method="inverted_cdf")


class Posterior(ABC):
    kind: str

    @abstractmethod
    def predict(self, thetas) -> Prediction:
        """Predictive summary at raw (unscaled) parameter vectors."""

    @abstractmethod
    def sample(self, thetas, n_samples: int, seed: int) -> np.ndarray:
        """``(n_samples, n)`` joint draws of f at ``thetas``."""

    @abstractmethod
    def to_dict(self) -> dict: ...

    def mean(self, thetas) -> np.ndarray:
        return self.predict(thetas).mean

    def std(self, thetas) -> np.ndarray:
        return self.predict(thetas).std

    def quantile(self, thetas, p: float) -> np.ndarray:
        return self.predict(thetas).quantile(p)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def posterior_from_dict(doc: dict) -> Posterior:
    kind = doc.get("kind")
    if kind == "gp":
        from .gp import GpPosterior

        return GpPosterior.from_dict(doc)
    if kind == "bnn":
        from .bnn import BnnPosterior

        return BnnPosterior.from_dict(doc)
    raise ValueError(f"unknown posterior kind {kind!r}")


def load_posterior(path: str | Path) -> Posterior:
    with open(path) as fh:
        return posterior_from_dict(json.load(fh))
