import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln, ndtr

from smmc.dataset import Dataset, Scaling
from smmc.gp import (
    GpConfig, GpPosterior, GpPrediction, GpVariationalState, RbfKernel, elbo_gp, elbo_gp_grad, expected_log_lik,
    kernel_matrix, kl_inducing, predict_gp, q_g_marginals, train_gp,
)
from smmc.gp import _state_to_whitened, _whitened_elbo_t, _batch_arrays
from smmc.posterior import posterior_from_dict


def random_state(rng, m, d=1, jitter=1e-6):
    Z = rng.uniform(-1, 1, size=(m, d))
    kernel = RbfKernel(np.log(rng.uniform(0.4, 1.5, size=d)), float(np.log(rng.uniform(0.5, 2.0))))
    S = np.tril(rng.normal(size=(m, m)) * 0.3)
    S[np.diag_indices(m)] = rng.uniform(0.3, 1.0, size=m)
    return GpVariationalState(Z, rng.normal(size=m), S, kernel, jitter)


def toy_dataset(rng, n, d=1, trials=10):
    X = rng.uniform(-1, 1, size=(n, d))
    scaling = Scaling(-np.ones(d), np.ones(d))
    return Dataset(X, rng.integers(0, trials + 1, size=n), trials, "train", scaling)


# --- kernel -----------------------------------------------------------------


def test_kernel_hand_computed():
    X = np.array([[0.0], [1.0], [3.0]])
    K = kernel_matrix(RbfKernel(np.zeros(1), 0.0), X)
    e = math.exp
    expected = np.array(
        [[1, e(-0.5), e(-4.5)], [e(-0.5), 1, e(-2.0)], [e(-4.5), e(-2.0), 1]]
    )
    assert np.max(np.abs(K - expected)) <= 1e-12


def test_kernel_diagonal_gets_jitter_and_far_points_vanish():
    k = RbfKernel(np.log([0.5, 2.0]), np.log(3.0))
    X = np.array([[0.1, 0.2]])
    assert kernel_matrix(k, X, jitter=1e-6)[0, 0] == pytest.approx(3.0 + 1e-6, abs=1e-15)
    assert kernel_matrix(k, X, np.array([[1e3, 1e3]]))[0, 0] == 0.0


def test_kernel_anisotropic_formula(rng):
    k = RbfKernel(np.log([0.5, 2.0]), np.log(1.7))
    X, Y = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    diff = (X[:, None, :] - Y[None, :, :]) / np.array([0.5, 2.0])
    assert np.allclose(kernel_matrix(k, X, Y), 1.7 * np.exp(-0.5 * (diff**2).sum(-1)), atol=1e-12, rtol=0)


# --- variational marginals --------------------------------------------------


def dense_oracle(state, X):
    Kmm = kernel_matrix(state.kernel, state.Z, jitter=state.abs_jitter)
    Kxm = kernel_matrix(state.kernel, X, state.Z)
    Kxx = kernel_matrix(state.kernel, X, jitter=state.abs_jitter)
    A = Kxm @ np.linalg.inv(Kmm)
    S = np.tril(state.S)
    return A @ state.eta, np.diag(Kxx + A @ (S @ S.T - Kmm) @ A.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 8), st.integers(1, 2))
def test_marginals_prior_identity(seed, m, n, d):
    rng = np.random.default_rng(seed)
    state = GpVariationalState.prior(rng.uniform(-1, 1, (m, d)), RbfKernel(np.log(np.full(d, 0.7)), 0.3))
    X = rng.uniform(-1, 1, (n, d))
    mean, var = q_g_marginals(state, X)
    assert np.max(np.abs(mean)) <= 1e-8
    assert np.max(np.abs(var - kernel_matrix(state.kernel, X, jitter=state.abs_jitter).diagonal())) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 8), st.integers(1, 2))
def test_marginals_match_dense_inverse(seed, m, n, d):
    rng = np.random.default_rng(seed)
    state = random_state(rng, m, d, jitter=1e-4)
    X = rng.uniform(-1, 1, (n, d))
    mean, var = q_g_marginals(state, X)
    ref_mean, ref_var = dense_oracle(state, X)
    assert np.max(np.abs(mean - ref_mean)) <= 1e-8
    assert np.max(np.abs(var - ref_var)) <= 1e-8
    assert np.all(var > 0)


def test_marginals_at_inducing_points_return_eta(rng):
    Z = np.array([[-0.9], [-0.2], [0.5]])
    state = GpVariationalState.prior(Z, RbfKernel(np.log([0.3]), 0.0))
    eta = rng.normal(size=3)
    state = GpVariationalState(Z, eta, state.S, state.kernel, state.jitter)
    mean, _ = q_g_marginals(state, Z)
    # K_zm = K_mm - jitter I, so A = I - jitter K_mm^-1 and the gap is exactly jitter K_mm^-1 eta
    Kmm = kernel_matrix(state.kernel, Z, jitter=state.abs_jitter)
    gap = state.abs_jitter * np.linalg.solve(Kmm, eta)
    assert np.max(np.abs(mean - (eta - gap))) <= 1e-10
    assert np.max(np.abs(mean - eta)) <= 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_kl_nonnegative_and_zero_at_prior(seed, m):
    rng = np.random.default_rng(seed)
    state = random_state(rng, m)
    assert kl_inducing(state) >= 0
    prior = GpVariationalState.prior(state.Z, state.kernel)
    assert abs(kl_inducing(prior)) <= 1e-9


# --- expected log-likelihood ------------------------------------------------


def binom_logpmf(k, n, p):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1) + k * np.log(p) + (n - k) * np.log1p(-p)


def test_expected_loglik_degenerate_variance():
    assert expected_log_lik(0.0, 1e-14, 1, 2) == pytest.approx(math.log(0.5), abs=1e-10)


def test_expected_loglik_monte_carlo():
    rng = np.random.default_rng(0)
    g = 0.3 + math.sqrt(0.5) * rng.standard_normal(10**7)
    samples = binom_logpmf(7, 10, np.clip(ndtr(g), 1e-12, 1 - 1e-12))
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(expected_log_lik(0.3, 0.5, 7, 10, n_nodes=25) - samples.mean()) <= 3 * se


@settings(max_examples=100)
@given(st.floats(-4, 4), st.floats(1e-6, 4), st.integers(1, 60), st.data())
def test_expected_loglik_nonpositive(mean, var, trials, data):
    k = data.draw(st.integers(0, trials))
    assert expected_log_lik(mean, var, k, trials) <= 1e-12


def test_logit_link_degenerate():
    # logistic(0) = 0.5 as well
    assert expected_log_lik(0.0, 1e-14, 1, 2, link="logit") == pytest.approx(math.log(0.5), abs=1e-10)


# --- ELBO -------------------------------------------------------------------


def test_elbo_at_prior_is_expected_likelihood_only(rng):
    data = toy_dataset(rng, 6)
    state = GpVariationalState.prior(data.thetas[:3], RbfKernel.default(1))
    mean, var = q_g_marginals(state, data.thetas)
    ell = sum(expected_log_lik(mean[i], var[i], data.successes[i], data.trials) for i in range(6))
    assert elbo_gp(state, data, n_total=6) == pytest.approx(ell, rel=1e-10)


def test_elbo_minibatch_scaling(rng):
    data = toy_dataset(rng, 6)
    state = random_state(rng, 3)
    half = data.subset(slice(0, 3))
    mean, var = q_g_marginals(state, half.thetas)
    ell = sum(expected_log_lik(mean[i], var[i], half.successes[i], half.trials) for i in range(3))
    assert elbo_gp(state, half, n_total=6) == pytest.approx(2 * ell - kl_inducing(state), rel=1e-10)


def test_whitened_elbo_equals_spec_form(rng):
    data = toy_dataset(rng, 7)
    state = random_state(rng, 4)
    X, k, n = _batch_arrays(data)
    with torch.no_grad():
        white = float(_whitened_elbo_t(_state_to_whitened(state), X, k, n, 7, state.jitter, 20, "probit"))
    assert white == pytest.approx(elbo_gp(state, data, 7), rel=1e-9)


def _perturbed(state, name, index, h):
    fields = {
        "eta": state.eta.copy(), "S": state.S.copy(), "Z": state.Z.copy(),
        "log_lengthscale": state.kernel.log_lengthscale.copy(), "log_variance": state.kernel.log_variance,
    }
    if name == "log_variance":
        fields[name] += h
    else:
        fields[name][index] += h
    kernel = RbfKernel(fields["log_lengthscale"], fields["log_variance"])
    return GpVariationalState(fields["Z"], fields["eta"], fields["S"], kernel, state.jitter)


def gp_gradient_mismatch(state, data, h=1e-5):
    """Largest relative gap between autograd and central differences over all ELBO inputs."""
    _, grads = elbo_gp_grad(state, data, len(data))
    worst = 0.0
    coords = [("eta", (i,)) for i in range(state.m)]
    coords += [("S", (i, j)) for i in range(state.m) for j in range(i + 1)]
    coords += [("Z", idx) for idx in np.ndindex(*state.Z.shape)]
    coords += [("log_lengthscale", (i,)) for i in range(len(state.kernel.log_lengthscale))]
    coords += [("log_variance", ())]
    for name, idx in coords:
        fd = (elbo_gp(_perturbed(state, name, idx, h), data, len(data))
              - elbo_gp(_perturbed(state, name, idx, -h), data, len(data))) / (2 * h)
        g = float(np.asarray(grads[name])[idx])
        worst = max(worst, abs(g - fd) / max(abs(fd), 1e-3))
    return worst, len(coords)


def test_elbo_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    state = random_state(rng, 2, 1, jitter=1e-4)
    data = toy_dataset(rng, 5)
    worst, count = gp_gradient_mismatch(state, data)
    assert count <= 20
    assert worst <= 1e-3


# --- prediction -------------------------------------------------------------


def test_prediction_median_and_quantiles():
    pred = GpPrediction(np.array([0.0, 1.2]), np.array([0.4, 0.1]))
    assert pred.quantile(0.5)[0] == 0.5
    assert pred.quantile(0.5)[1] == ndtr(1.2)


def test_prediction_std_vanishes_with_variance():
    assert GpPrediction(np.array([0.4]), np.array([1e-16])).std[0] <= 1e-7


@settings(max_examples=100)
@given(st.floats(-5, 5), st.floats(1e-8, 9))
def test_prediction_ordering(mean, var):
    pred = GpPrediction(np.array([mean]), np.array([var]))
    lo, hi = pred.interval(0.05)
    assert 0 <= lo[0] <= pred.mean[0] + 1e-12 and pred.mean[0] <= hi[0] + 1e-12 and hi[0] <= 1


def test_constant_dataset_learns_high_probability():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, size=(40, 1))
    data = Dataset(X, np.full(40, 20), 20, "train", Scaling.from_space([[0, 1]]))
    post = train_gp(data, GpConfig(m_max=10, epochs=300, batch_size=20, learning_rate=0.01))
    grid = np.linspace(0, 1, 25)[:, None]
    assert predict_gp(post, grid).mean.min() >= 0.95


def test_training_deterministic_and_round_trip():
    rng = np.random.default_rng(1)
    data = toy_dataset(rng, 30)
    cfg = GpConfig(m_max=5, epochs=5, batch_size=10, seed=4)
    a, b = train_gp(data, cfg), train_gp(data, cfg)
    assert np.array_equal(a.state.eta, b.state.eta) and np.array_equal(a.state.S, b.state.S)
    assert a.diagnostics["elbo_trace"] == b.diagnostics["elbo_trace"]
    back = posterior_from_dict(a.to_dict())
    assert isinstance(back, GpPosterior)
    X = rng.uniform(-1, 1, size=(4, 1))
    assert np.array_equal(back.predict(X).mean, a.predict(X).mean)


def test_training_rejects_wrong_role():
    rng = np.random.default_rng(1)
    data = toy_dataset(rng, 10)
    with pytest.raises(ValueError):
        train_gp(Dataset(data.thetas, data.successes, data.trials, "test", data.scaling), GpConfig(epochs=1))


def test_extrapolation_warns():
    rng = np.random.default_rng(1)
    post = train_gp(toy_dataset(rng, 10), GpConfig(m_max=3, epochs=1))
    with pytest.warns(UserWarning, match="extrapolation"):
        post.predict(np.array([[3.0]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        post.predict(np.array([[0.5]]))


def test_zero_learning_rate_keeps_prior():
    rng = np.random.default_rng(2)
    data = toy_dataset(rng, 12)
    post = train_gp(data, GpConfig(m_max=4, epochs=2, batch_size=6, learning_rate=0.0))
    assert kl_inducing(post.state) <= 1e-9
