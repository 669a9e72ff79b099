import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smmc.dataset import (
    Dataset, Scaling, binomial_log_pmf, generate_dataset, load_dataset, sample_parameters, save_dataset,
    scale_inputs, smc_estimate,
)
from smmc.pctmc import bundled_model, make_rng
from smmc.stl import Not, TrueF, parse_stl

SPACE_A = [[0.005, 0.3], [0.05, 0.05]]


def test_degenerate_space():
    out = sample_parameters([[1.0, 1.0]], 5, "uniform-random", make_rng(0))
    assert out.shape == (5, 1) and np.all(out == 1.0)


def test_grid_endpoints():
    assert sample_parameters([[0.0, 1.0]], 3, "uniform-grid").ravel().tolist() == [0.0, 0.5, 1.0]


def test_grid_skips_degenerate_dimension():
    out = sample_parameters(SPACE_A, 500, "uniform-grid")
    assert out.shape == (500, 2) and np.all(out[:, 1] == 0.05)
    assert out[0, 0] == 0.005 and out[-1, 0] == 0.3


def test_grid_needs_perfect_power():
    with pytest.raises(ValueError):
        sample_parameters([[0, 1], [0, 1]], 10, "uniform-grid")
    assert len(sample_parameters([[0, 1], [0, 1]], 9, "uniform-grid")) == 9


def test_log_random_median():
    n = 100_000
    x = sample_parameters([[0.001, 1.0]], n, "log-random", make_rng(1)).ravel()
    # log x is uniform; the sample median of log x has std ~ (b-a) / (2 sqrt(n))
    span = math.log(1.0) - math.log(0.001)
    assert abs(np.log(np.median(x)) - np.log(math.sqrt(0.001))) <= 3 * span / (2 * math.sqrt(n))


def test_log_random_rejects_nonpositive():
    with pytest.raises(ValueError):
        sample_parameters([[0.0, 1.0]], 3, "log-random", make_rng(0))


def test_random_sampling_deterministic():
    a = sample_parameters(SPACE_A, 10, "uniform-random", make_rng(3))
    b = sample_parameters(SPACE_A, 10, "uniform-random", make_rng(3))
    assert np.array_equal(a, b)


def test_smc_degenerate_and_full():
    e = smc_estimate(0, 100)
    assert (e.mean, e.std, e.ci_halfwidth) == (0.0, 0.0, 0.0)
    assert smc_estimate(1000, 1000).mean == 1.0


def test_smc_half():
    e = smc_estimate(50, 100, 1.96)
    assert e.mean == 0.5
    assert e.std == pytest.approx(0.5 * math.sqrt(100 / 99), abs=1e-12)
    assert e.std == pytest.approx(0.50251, abs=1e-5)
    assert e.ci_halfwidth == pytest.approx(0.09849, abs=1e-5)


@settings(max_examples=100)
@given(st.integers(1, 200), st.data())
def test_smc_std_is_bessel_sample_std(trials, data):
    k = data.draw(st.integers(0, trials))
    bits = np.r_[np.ones(k), np.zeros(trials - k)]
    expected = bits.std(ddof=1) if trials > 1 else 0.0
    assert smc_estimate(k, trials).std == pytest.approx(expected, abs=1e-12)


def _sir():
    return bundled_model().with_param_space(SPACE_A)


def test_tautology_and_contradiction():
    thetas = sample_parameters(SPACE_A, 4, "uniform-random", make_rng(0))
    assert np.all(generate_dataset(_sir(), TrueF(), thetas, 7, 10.0, "train", 0).successes == 7)
    assert np.all(generate_dataset(_sir(), Not(TrueF()), thetas, 7, 10.0, "train", 0).successes == 0)


def test_generate_independent_of_threads():
    phi = parse_stl("(I > 0) U[100,120] (I == 0)")
    thetas = sample_parameters(SPACE_A, 6, "uniform-random", make_rng(0))
    a = generate_dataset(_sir(), phi, thetas, 20, 120.0, "train", 5, threads=1)
    b = generate_dataset(_sir(), phi, thetas, 20, 120.0, "train", 5, threads=3)
    assert np.array_equal(a.successes, b.successes)
    c = generate_dataset(_sir(), phi, thetas, 20, 120.0, "test", 5, threads=1)
    assert a.meta == c.meta


def test_generate_rejects_long_formula():
    with pytest.raises(ValueError):
        generate_dataset(_sir(), parse_stl("F[0,200] I > 0"), [[0.1, 0.05]], 5, 120.0, "train", 0)


def test_sir_config_a_shape():
    grid = sample_parameters(SPACE_A, 500, "uniform-grid")
    ds = generate_dataset(_sir(), parse_stl("(I > 0) U[100,120] (I == 0)"), grid, 50, 120.0, "train", 0)
    assert len(ds) == 500 and ds.trials == 50 and ds.dim == 2
    assert 0 <= ds.successes.min() and ds.successes.max() <= 50


def test_roles_disjoint():
    rng = make_rng(0)
    sets = [sample_parameters(SPACE_A, 200, "uniform-random", rng) for _ in range(3)]
    rows = [set(map(tuple, s)) for s in sets]
    assert not (rows[0] & rows[1]) and not (rows[0] & rows[2]) and not (rows[1] & rows[2])


def test_scaling_endpoints_and_round_trip():
    sc = Scaling.from_space([[0.005, 0.3], [1.0, 1.0]])
    out = sc.apply([[0.005, 1.0], [0.3, 1.0], [0.1525, 1.0]])
    assert out[:, 0].tolist() == [-1.0, 1.0, 0.0] and np.all(out[:, 1] == 0.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.01, 10))
def test_scaling_invertible_and_monotone(point, width):
    lo = np.array([-5.0, 0.0])
    sc = Scaling(lo, lo + np.array([10.0, width]))
    x = np.array([[point[0], width * 0.3], [point[1], width * 0.7]])
    back = sc.inverse(sc.apply(x))
    assert np.allclose(back, x, atol=1e-12, rtol=0)
    order = np.argsort(x[:, 0])
    assert np.all(np.diff(sc.apply(x)[order, 0]) >= 0)


def test_scale_inputs_keeps_raw_view():
    ds = Dataset(np.array([[0.005, 0.05], [0.3, 0.05]]), np.array([1, 2]), 3, "train", Scaling.from_space(SPACE_A))
    scaled = scale_inputs(ds)
    assert scaled.scaled and scaled.thetas[:, 0].tolist() == [-1.0, 1.0]
    assert np.allclose(scaled.raw_thetas, ds.thetas)


def test_dataset_invariants():
    sc = Scaling.from_space(SPACE_A)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([1, 5]), 4, "train", sc)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([1, 1]), 4, "validation", sc)


def test_csv_round_trip(tmp_path):
    thetas = sample_parameters(SPACE_A, 5, "uniform-random", make_rng(0))
    ds = generate_dataset(_sir(), TrueF(), thetas, 3, 10.0, "calibration", 0, formula_text="true")
    save_dataset(ds, tmp_path / "c.csv")
    back = load_dataset(tmp_path / "c.csv")
    assert np.array_equal(back.thetas, ds.thetas) and np.array_equal(back.successes, ds.successes)
    assert back.role == "calibration" and back.meta["formula"] == "true"
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "theta_0,theta_1,successes,trials"


def test_load_rejects_empty_and_mixed(tmp_path):
    ds = Dataset(np.array([[0.1, 0.05]]), np.array([1]), 3, "test", Scaling.from_space(SPACE_A))
    save_dataset(ds, tmp_path / "t.csv")
    (tmp_path / "t.csv").write_text("theta_0,theta_1,successes,trials\n")
    with pytest.raises(ValueError, match="no rows"):
        load_dataset(tmp_path / "t.csv")
    (tmp_path / "t.csv").write_text("theta_0,theta_1,successes,trials\n0.1,0.05,1,3\n0.2,0.05,1,4\n")
    with pytest.raises(ValueError, match="mixes"):
        load_dataset(tmp_path / "t.csv")


@pytest.mark.parametrize("trials", range(1, 11))
def test_binomial_pmf_matches_enumeration(trials):
    # probability of k successes by summing the probabilities of all 2^M bit strings
    for p in (0.13, 0.5, 0.91):
        mass = np.zeros(trials + 1)
        for bits in product((0, 1), repeat=trials):
            k = sum(bits)
            mass[k] += p**k * (1 - p) ** (trials - k)
        got = np.exp(binomial_log_pmf(np.arange(trials + 1), trials, p))
        assert np.max(np.abs(got - mass)) <= 1e-12
