"""Mean-field variational Bayesian neural network for the satisfaction function.

Weights are independent Gaussians q(w) = N(mu, diag(std^2)).  The network
maps scaled parameters through LeakyReLU hidden layers to a sigmoid output
in (0, 1).  Training maximises the reparameterised ELBO; the prior can be
centred on a deterministic network fitted to the same data.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import Dataset, Scaling
from .gp import TrainingDivergedError
from .posterior import Posterior, SamplePrediction

DTYPE = torch.float64
_LOG_CLIP_LO = math.log(1e-12)
_LOG_CLIP_HI = math.log1p(-1e-12)


@dataclass(frozen=True)
class BnnArchitecture:
    input_dim: int
    hidden_widths: tuple[int, ...] = (64, 64, 64)
    negative_slope: float = 0.01

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("layer widths must be >= 1")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) of every affine layer, output layer last."""
        sizes = [self.input_dim, *self.hidden_widths, 1]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "negative_slope": self.negative_slope,
        }

    @classmethod
    def from_dict(cls, doc) -> BnnArchitecture:
        return cls(int(doc["input_dim"]), tuple(int(w) for w in doc["hidden_widths"]), float(doc["negative_slope"]))


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def _logits_t(weights, X, arch: BnnArchitecture):
    """Output pre-activations for a batch of weight vectors: (S, P) x (n, d) -> (S, n)."""
    S = weights.shape[0]
    h = X.expand(S, *X.shape)
    offset = 0
    shapes = arch.layer_shapes
    for layer, (fan_out, fan_in) in enumerate(shapes):
        W = weights[:, offset:offset + fan_out * fan_in].reshape(S, fan_out, fan_in)
        offset += fan_out * fan_in
        b = weights[:, offset:offset + fan_out]
        offset += fan_out
        h = torch.baddbmm(b[:, None, :], h, W.transpose(1, 2))
        if layer < len(shapes) - 1:
            h = torch.nn.functional.leaky_relu(h, arch.negative_slope)
    return h[..., 0]


def forward(weights, theta, arch: BnnArchitecture) -> np.ndarray:
    """Network output f_w(theta) in (0, 1) for scaled inputs.

    ``weights`` is one flat vector (P,) or a stack (S, P); ``theta`` is one
    point (d,) or a batch (n, d).
    """
    w = _t(weights)
    x = _t(theta)
    if w.shape[-1] != arch.n_params:
        raise ValueError(f"weight vector has {w.shape[-1]} entries, architecture needs {arch.n_params}")
    if x.shape[-1] != arch.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, architecture expects {arch.input_dim}")
    single_w, single_x = w.ndim == 1, x.ndim == 1
    with torch.no_grad():
        out = torch.sigmoid(_logits_t(w.reshape(-1, arch.n_params), x.reshape(-1, arch.input_dim), arch)).numpy()
    if single_w:
        out = out[0]
    if single_x:
        out = out[..., 0]
    return out


def _binomial_ll_t(logits, k, n):
    lp = torch.nn.functional.logsigmoid(logits).clamp(_LOG_CLIP_LO, _LOG_CLIP_HI)
    lq = torch.nn.functional.logsigmoid(-logits).clamp(_LOG_CLIP_LO, _LOG_CLIP_HI)
    coef = torch.lgamma(n + 1) - torch.lgamma(k + 1) - torch.lgamma(n - k + 1)
    return coef + k * lp + (n - k) * lq


@dataclass(frozen=True)
class WeightPrior:
    center: np.ndarray
    std: np.ndarray
    provenance: dict = field(default_factory=dict)

    @classmethod
    def standard_normal(cls, arch: BnnArchitecture) -> WeightPrior:
        return cls(np.zeros(arch.n_params), np.ones(arch.n_params), {"type": "standard-normal"})

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "std": self.std.tolist(), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, doc) -> WeightPrior:
        return cls(np.asarray(doc["center"], dtype=float), np.asarray(doc["std"], dtype=float), doc.get("provenance", {}))


def layer_prior_std(arch: BnnArchitecture) -> np.ndarray:
    """Per-weight prior std 1/m, m the width of the layer (fan-in for the output layer)."""
    out = []
    shapes = arch.layer_shapes
    for layer, (fan_out, fan_in) in enumerate(shapes):
        width = fan_out if layer < len(shapes) - 1 else fan_in
        out.append(np.full(fan_out * fan_in + fan_out, 1.0 / width))
    return np.concatenate(out)


def _kl_t(mu, log_std, center, prior_std):
    var_ratio = torch.exp(2 * log_std) / prior_std**2
    return 0.5 * (var_ratio + (mu - center) ** 2 / prior_std**2 - 1.0 - torch.log(var_ratio)).sum()


@dataclass
class BnnPosterior(Posterior):
    arch: BnnArchitecture
    mu: np.ndarray
    log_std: np.ndarray
    prior: WeightPrior
    scaling: Scaling
    n_samples: int = 1000
    seed: int = 0
    diagnostics: dict = field(default_factory=dict)
    kind: str = "bnn"

    def predict(self, thetas) -> SamplePrediction:
        return predict_bnn(self, thetas, self.n_samples, self.seed)

    def sample(self, thetas, n_samples: int, seed: int) -> np.ndarray:
        return predict_bnn(self, thetas, n_samples, seed).samples

    def to_dict(self) -> dict:
        return {
            "kind": "bnn",
            "architecture": self.arch.to_dict(),
            "mu": self.mu.tolist(),
            "log_std": self.log_std.tolist(),
            "prior": self.prior.to_dict(),
            "scaling": self.scaling.to_dict(),
            "n_samples": self.n_samples,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc) -> BnnPosterior:
        return cls(
            arch=BnnArchitecture.from_dict(doc["architecture"]),
            mu=np.asarray(doc["mu"], dtype=float),
            log_std=np.asarray(doc["log_std"], dtype=float),
            prior=WeightPrior.from_dict(doc["prior"]),
            scaling=Scaling.from_dict(doc["scaling"]),
            n_samples=int(doc.get("n_samples", 1000)),
            seed=int(doc.get("seed", 0)),
            diagnostics=doc.get("diagnostics", {}),
        )


def kl_weights(posterior: BnnPosterior) -> float:
    """Sum over weights of KL[N(mu, std^2) || N(center, prior_std^2)]."""
    with torch.no_grad():
        return float(
            _kl_t(_t(posterior.mu), _t(posterior.log_std), _t(posterior.prior.center), _t(posterior.prior.std))
        )


def _batch(batch: Dataset):
    X = _t(batch.scaled_thetas)
    k = _t(batch.successes.astype(float))
    return X, k, torch.full_like(k, float(batch.trials))


def _elbo_t(mu, log_std, center, prior_std, X, k, n, n_total, noise, arch):
    w = mu + torch.exp(log_std) * noise  # (n_mc, P)
    ll = _binomial_ll_t(_logits_t(w, X, arch), k, n)  # (n_mc, B)
    return (n_total / X.shape[0]) * ll.sum(1).mean() - _kl_t(mu, log_std, center, prior_std)


def elbo_bnn(
    posterior: BnnPosterior,
    batch: Dataset,
    n_total: int,
    n_mc: int = 1,
    seed: int = 0,
    noise: np.ndarray | None = None,
    grad: bool = False,
):
    """Reparameterised ELBO estimate with ``n_mc`` weight samples.

    Pass ``noise`` (n_mc, P) to fix the standard-normal draws.  With
    ``grad=True`` returns ``(value, {"mu": ..., "log_std": ...})``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if noise is None:
        gen = torch.Generator().manual_seed(int(seed))
        xi = torch.randn(n_mc, posterior.arch.n_params, generator=gen, dtype=DTYPE)
    else:
        xi = _t(noise).reshape(-1, posterior.arch.n_params)
    mu = _t(posterior.mu).requires_grad_(grad)
    log_std = _t(posterior.log_std).requires_grad_(grad)
    with torch.set_grad_enabled(grad):
        value = _elbo_t(
            mu, log_std, _t(posterior.prior.center), _t(posterior.prior.std), *_batch(batch), n_total, xi,
            posterior.arch,
        )
    if not torch.isfinite(value):
        raise FloatingPointError("non-finite ELBO")
    if not grad:
        return float(value)
    value.backward()
    return value.item(), {"mu": mu.grad.numpy().copy(), "log_std": log_std.grad.numpy().copy()}


@dataclass(frozen=True)
class BnnConfig:
    hidden_widths: tuple[int, ...] = (64, 64, 64)
    negative_slope: float = 0.01
    epochs: int = 2000
    batch_size: int = 100
    learning_rate: float = 1e-3
    n_mc: int = 1
    seed: int = 0
    pretrain: bool = True
    n_samples: int = 1000


def _init_weights(arch: BnnArchitecture, gen: torch.Generator) -> torch.Tensor:
    parts = []
    for fan_out, fan_in in arch.layer_shapes:
        bound = 1.0 / math.sqrt(fan_in)
        parts.append((torch.rand(fan_out * fan_in + fan_out, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
    return torch.cat(parts)


def _minibatches(n_points, batch_size, rng):
    perm = torch.as_tensor(rng.permutation(n_points))
    for start in range(0, n_points, batch_size):
        yield perm[start:start + batch_size]


def pretrain_prior(dataset: Dataset, arch: BnnArchitecture, config: BnnConfig = BnnConfig()) -> WeightPrior:
    """Fit a deterministic network by maximum likelihood and centre the prior on it."""
    if dataset.role != "train":
        raise ValueError(f"expected a training dataset, got role {dataset.role!r}")
    gen = torch.Generator().manual_seed(config.seed)
    w = _init_weights(arch, gen).requires_grad_(True)
    opt = torch.optim.Adam([w], lr=config.learning_rate)
    X, k, n = _batch(dataset)
    rng = np.random.default_rng([config.seed, 2])
    losses = []
    for epoch in range(config.epochs):
        total = 0.0
        for idx in _minibatches(len(dataset), config.batch_size, rng):
            opt.zero_grad()
            loss = -_binomial_ll_t(_logits_t(w[None, :], X[idx], arch)[0], k[idx], n[idx]).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"prior pretraining diverged at epoch {epoch}", {"loss_trace": losses})
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        losses.append(total / len(dataset))
    provenance = {
        "type": "pretrained",
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "seed": config.seed,
        "final_nll": losses[-1] if losses else None,
    }
    return WeightPrior(w.detach().numpy().copy(), layer_prior_std(arch), provenance)


def train_bnn(dataset: Dataset, config: BnnConfig = BnnConfig(), prior: WeightPrior | None = None) -> BnnPosterior:
    """Adam ascent on the reparameterised ELBO, starting from q = prior."""
    if dataset.role != "train":
        raise ValueError(f"expected a training dataset, got role {dataset.role!r}")
    arch = BnnArchitecture(dataset.dim, tuple(config.hidden_widths), config.negative_slope)
    if prior is None:
        prior = pretrain_prior(dataset, arch, config) if config.pretrain else WeightPrior.standard_normal(arch)
    center, prior_std = _t(prior.center), _t(prior.std)
    mu = center.clone().requires_grad_(True)
    log_std = torch.log(prior_std).clone().requires_grad_(True)
    opt = torch.optim.Adam([mu, log_std], lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed + 1)
    X, k, n = _batch(dataset)
    N = len(dataset)
    rng = np.random.default_rng([config.seed, 3])
    trace = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        total, batches = 0.0, 0
        for idx in _minibatches(N, config.batch_size, rng):
            opt.zero_grad()
            xi = torch.randn(config.n_mc, arch.n_params, generator=gen, dtype=DTYPE)
            value = _elbo_t(mu, log_std, center, prior_std, X[idx], k[idx], n[idx], N, xi, arch)
            if not torch.isfinite(value):
                raise TrainingDivergedError(f"non-finite ELBO at epoch {epoch}", {"elbo_trace": trace})
            (-value).backward()
            opt.step()
            total += value.item()
            batches += 1
        trace.append(total / batches)
    diagnostics = {
        "elbo_trace": trace,
        "epochs": config.epochs,
        "train_seconds": time.perf_counter() - started,
        "prior_provenance": prior.provenance,
        "config": {**config.__dict__, "hidden_widths": list(config.hidden_widths)},
    }
    return BnnPosterior(
        arch, mu.detach().numpy().copy(), log_std.detach().numpy().copy(), prior, dataset.scaling,
        config.n_samples, config.seed, diagnostics,
    )


def predict_bnn(posterior: BnnPosterior, thetas, n_samples: int = 1000, seed: int = 0, chunk: int = 100):
    """Empirical predictive distribution from ``n_samples`` weight draws."""
    if n_samples < 2:
        raise ValueError("need at least two posterior samples")
    X = _t(posterior.scaling.apply(thetas))
    gen = torch.Generator().manual_seed(int(seed))
    mu, std = _t(posterior.mu), torch.exp(_t(posterior.log_std))
    out = []
    with torch.no_grad():
        for start in range(0, n_samples, chunk):
            size = min(chunk, n_samples - start)
            w = mu + std * torch.randn(size, posterior.arch.n_params, generator=gen, dtype=DTYPE)
            out.append(torch.sigmoid(_logits_t(w, X, posterior.arch)))
    return SamplePrediction(torch.cat(out).numpy())
