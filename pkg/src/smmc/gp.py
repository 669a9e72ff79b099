"""Sparse variational GP classification of the satisfaction function.

The latent function g has a zero-mean RBF-kernel GP prior and f = link(g).
The variational distribution over the inducing values u = g(Z) is
N(eta, S S^T).  Training maximises the ELBO

    (N / |B|) * sum_{i in B} E_q(g_i)[log Binomial(L_i | M, link(g_i))] - KL[q(u) || p(u)]

with Adam over the variational parameters, the inducing inputs and the log
kernel hyperparameters.  During optimisation the variational parameters are
held in whitened form (u = L_mm w) and mapped back to (eta, S) afterwards.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy.special import ndtr, ndtri

from .dataset import Dataset, Scaling
from .posterior import Posterior, Prediction

DTYPE = torch.float64
LINKS = ("probit", "logit")
_LOG_CLIP_LO = math.log(1e-12)
_LOG_CLIP_HI = math.log1p(-1e-12)


class GpFactorizationError(RuntimeError):
    """Cholesky factorisation of a kernel matrix failed."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class RbfKernel:
    log_lengthscale: np.ndarray
    log_variance: float

    @classmethod
    def default(cls, dim: int, lengthscale: float = 0.5, variance: float = 1.0) -> RbfKernel:
        return cls(np.full(dim, math.log(lengthscale)), math.log(variance))

    @property
    def variance(self) -> float:
        return math.exp(self.log_variance)

    def to_dict(self) -> dict:
        return {"log_lengthscale": np.asarray(self.log_lengthscale).tolist(), "log_variance": float(self.log_variance)}

    @classmethod
    def from_dict(cls, doc) -> RbfKernel:
        return cls(np.asarray(doc["log_lengthscale"], dtype=float), float(doc["log_variance"]))


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def _rbf(X, Y, log_ls, log_var):
    Xs = X / torch.exp(log_ls)
    Ys = Y / torch.exp(log_ls)
    sq = (Xs * Xs).sum(-1)[:, None] + (Ys * Ys).sum(-1)[None, :] - 2.0 * Xs @ Ys.T
    return torch.exp(log_var) * torch.exp(-0.5 * sq.clamp_min(0.0))


def kernel_matrix(kernel: RbfKernel, X, Y=None, jitter: float = 0.0) -> np.ndarray:
    """Gram matrix k(X, Y).  With ``Y`` omitted, returns k(X, X) + jitter * I."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sym = Y is None
    Y = X if sym else np.atleast_2d(np.asarray(Y, dtype=float))
    d = len(kernel.log_lengthscale)
    if X.shape[1] != d or Y.shape[1] != d:
        raise ValueError(f"kernel has {d} input dimensions, got {X.shape[1]} and {Y.shape[1]}")
    diff = (X[:, None, :] - Y[None, :, :]) / np.exp(kernel.log_lengthscale)
    K = kernel.variance * np.exp(-0.5 * (diff**2).sum(-1))
    if sym:
        K = K + jitter * np.eye(len(X))
    return K


def _cholesky(K):
    L, info = torch.linalg.cholesky_ex(K)
    if int(info) != 0:
        raise GpFactorizationError(
            "kernel matrix is not positive definite; increase the jitter or remove duplicated inducing inputs"
        )
    return L


def gauss_hermite(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[h(X)], X ~ N(0, 1): sum_k w_k h(x_k)."""
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


def _log_link(g, link):
    """log link(g) and log(1 - link(g)), both clipped to [log 1e-12, log(1 - 1e-12)]."""
    if link == "probit":
        lp, lq = torch.special.log_ndtr(g), torch.special.log_ndtr(-g)
    else:
        lp, lq = -torch.nn.functional.softplus(-g), -torch.nn.functional.softplus(g)
    return lp.clamp(_LOG_CLIP_LO, _LOG_CLIP_HI), lq.clamp(_LOG_CLIP_LO, _LOG_CLIP_HI)


def _log_binom_coef(k, n):
    return torch.lgamma(n + 1) - torch.lgamma(k + 1) - torch.lgamma(n - k + 1)


def _expected_log_lik_t(mean, var, k, n, n_nodes, link="probit"):
    x, w = gauss_hermite(n_nodes)
    g = mean[..., None] + torch.sqrt(var)[..., None] * _t(x)
    lp, lq = _log_link(g, link)
    ll = k[..., None] * lp + (n - k)[..., None] * lq
    return _log_binom_coef(k, n) + (ll * _t(w)).sum(-1)


def expected_log_lik(mean, var, successes, trials, n_nodes: int = 20, link: str = "probit"):
    """Gauss-Hermite estimate of E_{g ~ N(mean, var)}[log Binomial(successes | trials, link(g))]."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    out = _expected_log_lik_t(_t(mean), _t(var), _t(successes), _t(trials), n_nodes, link)
    out = out.numpy()
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GpVariationalState:
    Z: np.ndarray  # (m, d) inducing inputs, in scaled parameter space
    eta: np.ndarray  # (m,)
    S: np.ndarray  # (m, m) lower triangular, positive diagonal
    kernel: RbfKernel
    jitter: float = 1e-6  # relative to the kernel variance

    @property
    def m(self) -> int:
        return len(self.eta)

    @property
    def abs_jitter(self) -> float:
        return self.jitter * self.kernel.variance

    @classmethod
    def prior(cls, Z, kernel: RbfKernel, jitter: float = 1e-6) -> GpVariationalState:
        """State whose q(u) equals the prior p(u) = N(0, K_mm)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        K = kernel_matrix(kernel, Z, jitter=jitter * kernel.variance)
        return cls(Z, np.zeros(len(Z)), np.linalg.cholesky(K), kernel, jitter)

    def to_dict(self) -> dict:
        return {
            "Z": self.Z.tolist(),
            "eta": self.eta.tolist(),
            "S": self.S.tolist(),
            "kernel": self.kernel.to_dict(),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, doc) -> GpVariationalState:
        return cls(
            np.asarray(doc["Z"], dtype=float),
            np.asarray(doc["eta"], dtype=float),
            np.asarray(doc["S"], dtype=float),
            RbfKernel.from_dict(doc["kernel"]),
            float(doc["jitter"]),
        )


def _state_tensors(state: GpVariationalState, requires_grad=False):
    params = {
        "eta": _t(state.eta),
        "S": _t(state.S),
        "Z": _t(state.Z),
        "log_lengthscale": _t(state.kernel.log_lengthscale),
        "log_variance": _t(state.kernel.log_variance),
    }
    if requires_grad:
        for v in params.values():
            v.requires_grad_(True)
    return params


def _marginals_t(p, X, jitter):
    """q(g) marginal means and variances at X from (eta, S, Z, kernel) tensors."""
    m = p["eta"].shape[0]
    var0 = torch.exp(p["log_variance"])
    Kmm = _rbf(p["Z"], p["Z"], p["log_lengthscale"], p["log_variance"]) + jitter * var0 * torch.eye(m, dtype=DTYPE)
    L = _cholesky(Kmm)
    Kmx = _rbf(p["Z"], X, p["log_lengthscale"], p["log_variance"])
    A = torch.linalg.solve_triangular(L, Kmx, upper=False)  # L^-1 K_mx
    B = torch.linalg.solve_triangular(L.T, A, upper=True)  # K_mm^-1 K_mx
    mean = B.T @ p["eta"]
    S = torch.tril(p["S"])
    var = var0 * (1.0 + jitter) - (A * A).sum(0) + ((S.T @ B) ** 2).sum(0)
    return mean, var, L


def _kl_t(p, L):
    S = torch.tril(p["S"])
    m = S.shape[0]
    LiS = torch.linalg.solve_triangular(L, S, upper=False)
    Lie = torch.linalg.solve_triangular(L, p["eta"][:, None], upper=False)
    logdet_K = 2.0 * torch.log(torch.diagonal(L)).sum()
    logdet_S = 2.0 * torch.log(torch.abs(torch.diagonal(S))).sum()
    return 0.5 * ((LiS * LiS).sum() + (Lie * Lie).sum() - m + logdet_K - logdet_S)


def q_g_marginals(state: GpVariationalState, X) -> tuple[np.ndarray, np.ndarray]:
    """Means and variances of q(g(x)) at the rows of ``X`` (scaled space)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with torch.no_grad():
        mean, var, _ = _marginals_t(_state_tensors(state), _t(X), state.jitter)
    return mean.numpy(), var.clamp_min(1e-300).numpy()


def kl_inducing(state: GpVariationalState) -> float:
    """KL[N(eta, S S^T) || N(0, K_mm)]."""
    with torch.no_grad():
        p = _state_tensors(state)
        m = state.m
        Kmm = _rbf(p["Z"], p["Z"], p["log_lengthscale"], p["log_variance"])
        Kmm = Kmm + state.abs_jitter * torch.eye(m, dtype=DTYPE)
        return float(_kl_t(p, _cholesky(Kmm)))


def _batch_arrays(batch: Dataset):
    X = _t(batch.scaled_thetas)
    k = _t(batch.successes.astype(float))
    n = torch.full_like(k, float(batch.trials))
    return X, k, n


def _elbo_t(p, X, k, n, n_total, jitter, n_nodes, link):
    mean, var, L = _marginals_t(p, X, jitter)
    ell = _expected_log_lik_t(mean, var.clamp_min(1e-12), k, n, n_nodes, link)
    return (n_total / X.shape[0]) * ell.sum() - _kl_t(p, L)


def elbo_gp(state: GpVariationalState, batch: Dataset, n_total: int, n_nodes: int = 20, link: str = "probit") -> float:
    """Minibatch ELBO estimate, rescaled to a dataset of ``n_total`` points."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    with torch.no_grad():
        return float(_elbo_t(_state_tensors(state), *_batch_arrays(batch), n_total, state.jitter, n_nodes, link))


def elbo_gp_grad(state: GpVariationalState, batch: Dataset, n_total: int, n_nodes: int = 20, link: str = "probit"):
    """ELBO value and its gradients w.r.t. eta, S (lower triangle), Z and the log kernel parameters."""
    p = _state_tensors(state, requires_grad=True)
    value = _elbo_t(p, *_batch_arrays(batch), n_total, state.jitter, n_nodes, link)
    value.backward()
    grads = {name: t.grad.numpy().copy() for name, t in p.items()}
    grads["S"] = np.tril(grads["S"])
    return value.item(), grads


# -- whitened parameterisation used by the optimiser --------------------------------

def _whitened_elbo_t(w, X, k, n, n_total, jitter, n_nodes, link):
    Z, v, R = w["Z"], w["v"], torch.tril(w["R"])
    m = v.shape[0]
    var0 = torch.exp(w["log_variance"])
    Kmm = _rbf(Z, Z, w["log_lengthscale"], w["log_variance"]) + jitter * var0 * torch.eye(m, dtype=DTYPE)
    L = _cholesky(Kmm)
    A = torch.linalg.solve_triangular(L, _rbf(Z, X, w["log_lengthscale"], w["log_variance"]), upper=False)
    mean = A.T @ v
    var = var0 * (1.0 + jitter) - (A * A).sum(0) + ((R.T @ A) ** 2).sum(0)
    ell = _expected_log_lik_t(mean, var.clamp_min(1e-12), k, n, n_nodes, link)
    kl = 0.5 * ((R * R).sum() + (v * v).sum() - m - 2.0 * torch.log(torch.abs(torch.diagonal(R))).sum())
    return (n_total / X.shape[0]) * ell.sum() - kl


def _whitened_to_state(w, jitter) -> GpVariationalState:
    with torch.no_grad():
        Z = w["Z"]
        m = Z.shape[0]
        var0 = torch.exp(w["log_variance"])
        Kmm = _rbf(Z, Z, w["log_lengthscale"], w["log_variance"]) + jitter * var0 * torch.eye(m, dtype=DTYPE)
        L = _cholesky(Kmm)
        R = torch.tril(w["R"])
        R = R * torch.sign(torch.diagonal(R))[None, :]  # same R R^T, positive diagonal
        kernel = RbfKernel(w["log_lengthscale"].numpy().copy(), float(w["log_variance"]))
        return GpVariationalState(Z.numpy().copy(), (L @ w["v"]).numpy(), (L @ R).numpy(), kernel, jitter)


def _state_to_whitened(state: GpVariationalState):
    p = _state_tensors(state)
    with torch.no_grad():
        Kmm = _rbf(p["Z"], p["Z"], p["log_lengthscale"], p["log_variance"])
        L = _cholesky(Kmm + state.abs_jitter * torch.eye(state.m, dtype=DTYPE))
        v = torch.linalg.solve_triangular(L, p["eta"][:, None], upper=False)[:, 0]
        R = torch.linalg.solve_triangular(L, torch.tril(p["S"]), upper=False)
    return {
        "v": v,
        "R": R,
        "Z": p["Z"],
        "log_lengthscale": p["log_lengthscale"],
        "log_variance": p["log_variance"],
    }


@dataclass(frozen=True)
class GpConfig:
    m_max: int = 1000
    epochs: int = 2000
    batch_size: int = 100
    learning_rate: float = 1e-3
    n_nodes: int = 20
    seed: int = 0
    jitter: float = 1e-6
    lengthscale: float = 0.5
    variance: float = 1.0
    link: str = "probit"
    learn_inducing: bool = True


class GpPrediction(Prediction):
    def __init__(self, latent_mean, latent_var, n_nodes=20, link="probit"):
        self.latent_mean = np.asarray(latent_mean)
        self.latent_var = np.asarray(latent_var)
        self.link = link
        x, w = gauss_hermite(n_nodes)
        f = _link_np(self.latent_mean[:, None] + np.sqrt(self.latent_var)[:, None] * x, link)
        self.mean = f @ w
        self.std = np.sqrt(np.clip(f**2 @ w - self.mean**2, 0.0, None))

    def quantile(self, p: float) -> np.ndarray:
        # a monotone link maps latent Gaussian quantiles to f quantiles exactly
        return _link_np(self.latent_mean + np.sqrt(self.latent_var) * ndtri(p), self.link)


def _link_np(g, link):
    return ndtr(g) if link == "probit" else 1.0 / (1.0 + np.exp(-g))


@dataclass
class GpPosterior(Posterior):
    state: GpVariationalState
    scaling: Scaling
    link: str = "probit"
    n_nodes: int = 20
    reference_kernel: RbfKernel | None = None
    diagnostics: dict = field(default_factory=dict)
    kind: str = "gp"

    def _scaled(self, thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        inside = (thetas >= self.scaling.lo - 1e-12) & (thetas <= self.scaling.hi + 1e-12)
        if not inside.all():
            warnings.warn("predicting outside the training parameter space (extrapolation)", stacklevel=3)
        return self.scaling.apply(thetas)

    def latent(self, thetas):
        return q_g_marginals(self.state, self._scaled(thetas))

    def predict(self, thetas) -> GpPrediction:
        mean, var = self.latent(thetas)
        return GpPrediction(mean, var, self.n_nodes, self.link)

    def sample(self, thetas, n_samples: int, seed: int) -> np.ndarray:
        """Independent draws of f at each point from its marginal q(g)."""
        mean, var = self.latent(thetas)
        rng = np.random.default_rng(seed)
        g = mean + np.sqrt(var) * rng.standard_normal((n_samples, len(mean)))
        return _link_np(g, self.link)

    def to_dict(self) -> dict:
        return {
            "kind": "gp",
            "link": self.link,
            "n_nodes": self.n_nodes,
            "state": self.state.to_dict(),
            "scaling": self.scaling.to_dict(),
            "reference_kernel": None if self.reference_kernel is None else self.reference_kernel.to_dict(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc) -> GpPosterior:
        ref = doc.get("reference_kernel")
        return cls(
            state=GpVariationalState.from_dict(doc["state"]),
            scaling=Scaling.from_dict(doc["scaling"]),
            link=doc.get("link", "probit"),
            n_nodes=int(doc.get("n_nodes", 20)),
            reference_kernel=None if ref is None else RbfKernel.from_dict(ref),
            diagnostics=doc.get("diagnostics", {}),
        )


def predict_gp(posterior: GpPosterior, thetas) -> GpPrediction:
    return posterior.predict(thetas)


def init_state(dataset: Dataset, config: GpConfig) -> GpVariationalState:
    """Prior-matching state with inducing inputs drawn from the training inputs."""
    X = dataset.scaled_thetas
    m = min(config.m_max, len(X))
    perm = np.random.default_rng(config.seed).permutation(len(X))
    Z = X[perm[:m]].copy()
    kernel = RbfKernel.default(X.shape[1], config.lengthscale, config.variance)
    return GpVariationalState.prior(Z, kernel, config.jitter)


def train_gp(dataset: Dataset, config: GpConfig = GpConfig(), init: GpVariationalState | None = None) -> GpPosterior:
    """Fit the sparse variational GP by minibatch Adam ascent on the ELBO."""
    if dataset.role != "train":
        raise ValueError(f"expected a training dataset, got role {dataset.role!r}")
    if config.link not in LINKS:
        raise ValueError(f"unknown link {config.link!r}")
    torch.manual_seed(config.seed)
    state = init if init is not None else init_state(dataset, config)
    reference = state.kernel
    w = _state_to_whitened(state)
    for name, t in w.items():
        t.requires_grad_(name != "Z" or config.learn_inducing)
    opt = torch.optim.Adam([t for t in w.values() if t.requires_grad], lr=config.learning_rate)

    X, k, n = _batch_arrays(dataset)
    N = len(dataset)
    rng = np.random.default_rng([config.seed, 1])
    trace = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        perm = torch.as_tensor(rng.permutation(N))
        total, batches = 0.0, 0
        for start in range(0, N, config.batch_size):
            idx = perm[start:start + config.batch_size]
            opt.zero_grad()
            value = _whitened_elbo_t(w, X[idx], k[idx], n[idx], N, state.jitter, config.n_nodes, config.link)
            if not torch.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite ELBO at epoch {epoch}; lower the learning rate or raise the jitter",
                    {"elbo_trace": trace, "epoch": epoch},
                )
            (-value).backward()
            opt.step()
            total += value.item()
            batches += 1
        trace.append(total / batches)
    elapsed = time.perf_counter() - started

    final = _whitened_to_state(w, state.jitter)
    with torch.no_grad():
        final_elbo = float(_whitened_elbo_t(w, X, k, n, N, state.jitter, config.n_nodes, config.link))
    diagnostics = {
        "elbo_trace": trace,
        "final_elbo": final_elbo,
        "epochs": config.epochs,
        "m": final.m,
        "train_seconds": elapsed,
        "config": config.__dict__,
    }
    return GpPosterior(final, dataset.scaling, config.link, config.n_nodes, reference, diagnostics)


def with_state(posterior: GpPosterior, state: GpVariationalState) -> GpPosterior:
    return replace(posterior, state=state)
