"""Small hand-controlled posteriors for testing the guarantee and metric layers."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from smmc.posterior import Posterior, Prediction


class NormalPrediction(Prediction):
    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)

    def quantile(self, p):
        return np.clip(self.mean + self.std * ndtri(p), 0.0, 1.0)


class FixedPosterior(Posterior):
    """Predictive mean and std given as functions of the raw parameters."""

    kind = "fixed"

    def __init__(self, mean_fn, std_fn=None):
        self.mean_fn = mean_fn
        self.std_fn = std_fn or (lambda th: np.full(len(th), 0.05))

    def predict(self, thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        return NormalPrediction(self.mean_fn(thetas), self.std_fn(thetas))

    def sample(self, thetas, n_samples, seed):
        pred = self.predict(thetas)
        rng = np.random.default_rng(seed)
        return np.clip(pred.mean + pred.std * rng.standard_normal((n_samples, len(pred.mean))), 0, 1)

    def to_dict(self):
        return {"kind": self.kind}


class LookupPosterior(FixedPosterior):
    """Returns the given means/stds row by row, for hand-worked examples."""

    def __init__(self, means, stds):
        super().__init__(lambda th: np.asarray(means, float)[: len(th)], lambda th: np.asarray(stds, float)[: len(th)])
