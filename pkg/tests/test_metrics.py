import csv
import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smmc.dataset import Dataset, Scaling
from smmc.metrics import accuracy, evaluate, report_schema, rmse, smc_width, uncertainty_width

from fakes import FixedPosterior, LookupPosterior

SCALING = Scaling(np.zeros(1), np.ones(1))


def make_test_set(successes, trials=100):
    successes = np.asarray(successes)
    return Dataset(np.linspace(0, 1, len(successes))[:, None], successes, trials, "test", SCALING)


def random_test_set(rng, n=40, trials=100):
    return Dataset(rng.uniform(0, 1, (n, 1)), rng.integers(0, trials + 1, n), trials, "test", SCALING)


def test_rmse_examples():
    data = make_test_set([0, 100])
    assert rmse(FixedPosterior(lambda th: np.full(len(th), 0.5)), data) == pytest.approx(0.5, abs=1e-15)
    assert rmse(LookupPosterior([0.0, 1.0], [0.1, 0.1]), data) == 0.0


def test_accuracy_extremes():
    data = make_test_set([50, 20, 90])
    half = data.smc(1.96).ci_halfwidth
    # normal credible interval with z = 1.96 reproduces the SMC interval
    post = LookupPosterior(data.frequencies, half / 1.959963984540054)
    assert accuracy(post, data) == 1.0
    assert accuracy(LookupPosterior([0.99, 0.99, 0.01], [1e-4] * 3), data) == 0.0


def test_degenerate_posterior_has_zero_width():
    data = make_test_set([10, 60])
    assert uncertainty_width(LookupPosterior([0.2, 0.5], [0.0, 0.0]), data) == 0.0


def test_width_shrinks_with_epsilon(rng):
    data = random_test_set(rng)
    post = FixedPosterior(lambda th: 0.3 + 0.4 * th[:, 0], lambda th: 0.05 + 0.05 * th[:, 0])
    widths = [uncertainty_width(post, data, eps) for eps in (0.01, 0.05, 0.2, 0.5)]
    assert all(w >= 0 for w in widths) and widths == sorted(widths, reverse=True)


def test_empty_or_wrong_role_rejected():
    post = FixedPosterior(lambda th: np.full(len(th), 0.5))
    empty = Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 10, "test", SCALING)
    for fn in (rmse, accuracy, uncertainty_width, evaluate):
        with pytest.raises(ValueError):
            fn(post, empty)
    with pytest.raises(ValueError):
        rmse(post, Dataset(np.zeros((1, 1)), np.zeros(1, dtype=int), 10, "train", SCALING))
    with pytest.raises(ValueError):
        accuracy(post, make_test_set([3]), z=0.0)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    data = random_test_set(rng)
    post = FixedPosterior(lambda th: 0.2 + 0.6 * th[:, 0], lambda th: 0.01 + 0.1 * th[:, 0])
    perm = rng.permutation(len(data))
    shuffled = data.subset(perm)
    assert rmse(post, shuffled) == pytest.approx(rmse(post, data), rel=1e-12)
    assert accuracy(post, shuffled) == accuracy(post, data)
    assert uncertainty_width(post, shuffled) == pytest.approx(uncertainty_width(post, data), rel=1e-12)
    assert 0 <= rmse(post, data) <= 1


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 10.0))
def test_accuracy_monotone_in_width(seed, factor):
    rng = np.random.default_rng(seed)
    data = random_test_set(rng)
    narrow = FixedPosterior(lambda th: 0.2 + 0.6 * th[:, 0], lambda th: np.full(len(th), 0.01))
    wide = FixedPosterior(lambda th: 0.2 + 0.6 * th[:, 0], lambda th: np.full(len(th), 0.01 * factor))
    assert accuracy(wide, data) >= accuracy(narrow, data)


def test_evaluate_agrees_with_single_metrics(rng):
    data = random_test_set(rng)
    post = FixedPosterior(lambda th: 0.2 + 0.6 * th[:, 0], lambda th: 0.02 + 0.1 * th[:, 0])
    report = evaluate(post, data)
    assert report.rmse == rmse(post, data)
    assert report.accuracy == accuracy(post, data)
    assert report.uncertainty_width == uncertainty_width(post, data)
    assert report.test_uncertainty_width == smc_width(data)


def test_report_files(tmp_path, rng):
    data = random_test_set(rng, n=7)
    report = evaluate(FixedPosterior(lambda th: 0.2 + 0.6 * th[:, 0]), data)
    report.write(tmp_path / "report.json")
    doc = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(doc, report_schema())
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["theta_0", "smc_mean", "smc_lo", "smc_hi", "pred_mean", "cred_lo", "cred_hi"]
    assert len(rows) == 8
    first = [float(v) for v in rows[1]]
    assert first[1] == pytest.approx(data.frequencies[0])
    assert first[2] <= first[1] <= first[3] and first[5] <= first[6]


def test_schema_rejects_missing_keys():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"rmse": 0.1}, report_schema())


@pytest.mark.slow
def test_smc_reference_width_sir(sir_pipeline):
    # SIR configuration (a) with 1000 trials per test point
    width = smc_width(sir_pipeline.test)
    assert math.isfinite(width) and abs(width - 0.044) <= 0.004, width
