"""Datasets of (parameter, successes, trials) triples built by simulation and monitoring."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .pctmc import CompiledModel, PCTMCModel, make_rng, simulate_batch
from .stl import Formula, check_formula, format_formula, monitor

ROLES = ("train", "calibration", "test")
# spawn-key prefix per role, so the three sets draw from disjoint streams
_ROLE_KEY = {"train": 0, "calibration": 1, "test": 2}
STRATEGIES = ("uniform-grid", "uniform-random", "log-random")


@dataclass(frozen=True)
class Scaling:
    """Per-dimension affine map from ``[lo, hi]`` onto ``[-1, 1]``.

    Degenerate dimensions (``lo == hi``) map to 0.
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_space(cls, space) -> Scaling:
        space = np.asarray(space, dtype=float).reshape(-1, 2)
        return cls(space[:, 0].copy(), space[:, 1].copy())

    @property
    def _width(self):
        return self.hi - self.lo

    def apply(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        width = self._width
        safe = np.where(width > 0, width, 1.0)
        return np.where(width > 0, 2.0 * (thetas - self.lo) / safe - 1.0, 0.0)

    def inverse(self, scaled) -> np.ndarray:
        scaled = np.atleast_2d(np.asarray(scaled, dtype=float))
        return self.lo + (scaled + 1.0) * self._width / 2.0

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, doc) -> Scaling:
        return cls(np.asarray(doc["lo"], dtype=float), np.asarray(doc["hi"], dtype=float))


@dataclass(frozen=True)
class SmcEstimate:
    mean: float
    std: float
    ci_halfwidth: float


def smc_estimate(successes, trials, z: float = 1.96) -> SmcEstimate:
    """SMC point estimate with a normal-approximation confidence half-width.

    ``std`` is the Bessel-corrected standard deviation of the Bernoulli sample.
    Array inputs are handled elementwise.
    """
    successes = np.asarray(successes, dtype=float)
    trials = np.asarray(trials, dtype=float)
    if np.any(trials < 1):
        raise ValueError("trials must be >= 1")
    mean = successes / trials
    bessel = np.where(trials > 1, trials / np.maximum(trials - 1, 1), 0.0)
    std = np.sqrt(np.clip(mean * (1 - mean), 0, None) * bessel)
    half = z * std / np.sqrt(trials)
    if mean.ndim == 0:
        return SmcEstimate(float(mean), float(std), float(half))
    return SmcEstimate(mean, std, half)


@dataclass(frozen=True)
class Dataset:
    thetas: np.ndarray  # (N, d) raw parameter values
    successes: np.ndarray  # (N,)
    trials: int
    role: str
    scaling: Scaling
    scaled: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown dataset role {self.role!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.thetas.ndim != 2 or len(self.thetas) != len(self.successes):
            raise ValueError("thetas must be (N, d) with one success count per row")
        if np.any(self.successes < 0) or np.any(self.successes > self.trials):
            raise ValueError("successes must lie in [0, trials]")

    def __len__(self) -> int:
        return len(self.successes)

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    @property
    def raw_thetas(self) -> np.ndarray:
        return self.scaling.inverse(self.thetas) if self.scaled else self.thetas

    @property
    def scaled_thetas(self) -> np.ndarray:
        return self.thetas if self.scaled else self.scaling.apply(self.thetas)

    @property
    def frequencies(self) -> np.ndarray:
        return self.successes / self.trials

    def smc(self, z: float = 1.96) -> SmcEstimate:
        return smc_estimate(self.successes, np.full(len(self), self.trials), z)

    def subset(self, index) -> Dataset:
        return replace(self, thetas=self.thetas[index], successes=self.successes[index])


def sample_parameters(space, n: int, strategy: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` parameter vectors from the box ``space`` (a list of ``[lo, hi]``).

    ``uniform-grid`` is a full tensor grid over the non-degenerate dimensions
    including endpoints, so ``n`` must be a perfect power of their count.
    """
    space = np.asarray(space, dtype=float).reshape(-1, 2)
    lo, hi = space[:, 0], space[:, 1]
    if n < 1:
        raise ValueError("n must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    if strategy == "uniform-grid":
        free = np.flatnonzero(hi > lo)
        out = np.tile(lo, (n, 1))
        if len(free) == 0:
            return out
        per_dim = round(n ** (1.0 / len(free)))
        if per_dim ** len(free) != n:
            raise ValueError(f"a {len(free)}-dimensional grid cannot have exactly {n} points")
        axes = [np.linspace(lo[k], hi[k], per_dim) for k in free]
        mesh = np.meshgrid(*axes, indexing="ij")
        for k, grid in zip(free, mesh):
            out[:, k] = grid.ravel()
        return out
    if rng is None:
        raise ValueError("random strategies need a generator")
    u = rng.random((n, len(lo)))
    if strategy == "uniform-random":
        return lo + u * (hi - lo)
    if np.any(lo <= 0):
        raise ValueError("log-random sampling needs strictly positive lower bounds")
    return np.exp(np.log(lo) + u * (np.log(hi) - np.log(lo)))


def _count_successes(compiled, species, phi, theta, runs, horizon, rng) -> int:
    trajectories = simulate_batch(compiled, theta, horizon, runs, rng, species)
    return sum(monitor(phi, tr, checked=True) for tr in trajectories)


def generate_dataset(
    model: PCTMCModel,
    formula: Formula,
    thetas,
    trials: int,
    horizon: float,
    role: str,
    seed: int,
    threads: int | None = None,
    formula_text: str | None = None,
) -> Dataset:
    """Simulate ``trials`` paths at every parameter vector and count satisfying ones.

    Point ``i`` uses its own generator seeded from ``(seed, role, i)``, so the
    result does not depend on ``threads`` or on how points are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if role not in ROLES:
        raise ValueError(f"unknown dataset role {role!r}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != model.n_params:
        raise ValueError(f"thetas have {thetas.shape[1]} columns, model has {model.n_params} parameters")
    check_formula(formula, model.species, horizon)
    compiled = CompiledModel.from_model(model)

    def work(i):
        rng = make_rng(seed, _ROLE_KEY[role], i)
        return _count_successes(compiled, model.species, formula, thetas[i], trials, horizon, rng)

    threads = threads or os.cpu_count() or 1
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            successes = list(pool.map(work, range(len(thetas))))
    else:
        successes = [work(i) for i in range(len(thetas))]
    meta = {
        "seed": int(seed),
        "model_hash": model.content_hash(),
        "formula": formula_text if formula_text is not None else format_formula(formula),
        "horizon": float(horizon),
    }
    return Dataset(
        thetas=thetas,
        successes=np.asarray(successes, dtype=np.int64),
        trials=int(trials),
        role=role,
        scaling=Scaling.from_space(model.param_space),
        meta=meta,
    )


def scale_inputs(dataset: Dataset) -> Dataset:
    """Copy of ``dataset`` whose parameters are mapped onto ``[-1, 1]``."""
    if dataset.scaled:
        return dataset
    return replace(dataset, thetas=dataset.scaling.apply(dataset.thetas), scaled=True)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``<path>`` as CSV (raw parameters) and ``<path>.json`` as its sidecar."""
    path = Path(path)
    thetas = dataset.raw_thetas
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"theta_{k}" for k in range(dataset.dim)] + ["successes", "trials"])
        for row, s in zip(thetas, dataset.successes):
            writer.writerow([repr(float(v)) for v in row] + [int(s), dataset.trials])
    sidecar = {"role": dataset.role, "scaling": dataset.scaling.to_dict(), **dataset.meta}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    d = sum(1 for h in header if h.startswith("theta_"))
    if not rows:
        raise ValueError(f"dataset {path} has no rows")
    thetas = np.array([[float(v) for v in r[:d]] for r in rows], dtype=float)
    successes = np.array([int(r[d]) for r in rows], dtype=np.int64)
    trials = {int(r[d + 1]) for r in rows}
    if len(trials) != 1:
        raise ValueError(f"dataset {path} mixes different trial counts {sorted(trials)}")
    meta = {k: v for k, v in sidecar.items() if k not in ("role", "scaling")}
    return Dataset(
        thetas=thetas,
        successes=successes,
        trials=trials.pop(),
        role=sidecar["role"],
        scaling=Scaling.from_dict(sidecar["scaling"]),
        meta=meta,
    )


def binomial_log_pmf(successes, trials, p):
    """log Binomial(successes | trials, p) with ``p`` clipped away from 0 and 1."""
    p = np.clip(p, 1e-12, 1 - 1e-12)
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    coef = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return coef + k * np.log(p) + (n - k) * np.log1p(-p)


__all__ = [
    "Dataset", "ROLES", "STRATEGIES", "Scaling", "SmcEstimate", "binomial_log_pmf", "generate_dataset",
    "load_dataset", "sample_parameters", "save_dataset", "scale_inputs", "smc_estimate",
]
