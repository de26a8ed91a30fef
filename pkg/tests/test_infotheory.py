import numpy as np
import pytest

from agents.core.errors import ConfigError, DegenerateColumnError, InputError
from agents.core.infotheory import (
    SampleColumn,
    estimate_cmi,
    estimate_mi,
    normalize,
    normalized_cmi,
    normalized_mi,
    standardize,
    white_noise,
)


def gaussian_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = rho * x + np.sqrt(1 - rho**2) * rng.standard_normal(n)
    return standardize(x), standardize(y)


def markov_chain(n=2000, sigma=0.7, seed=0):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(n)
    h = f + sigma * rng.standard_normal(n)
    g = h + sigma * rng.standard_normal(n)
    return standardize(f), standardize(g), standardize(h)


def xor_columns(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.integers(0, 2, n).astype(float)
    x2 = rng.integers(0, 2, n).astype(float)
    return x1, x2, np.logical_xor(x1, x2).astype(float)


def test_standardize_population_moments():
    z = standardize(SampleColumn(np.array([1.0, 2.0, 3.0, 4.0]), name="a"))
    assert z.mean() == pytest.approx(0.0, abs=1e-15)
    assert z.std() == pytest.approx(1.0)


def test_standardize_rejects_constant_and_short_columns():
    with pytest.raises(DegenerateColumnError):
        standardize(np.ones(30))
    with pytest.raises(InputError):
        standardize([1.0])


def test_sample_column_rejects_non_finite():
    with pytest.raises(InputError):
        SampleColumn(np.array([1.0, np.inf]))


def test_neighbour_count_bounds():
    x = np.random.default_rng(0).standard_normal(40)
    with pytest.raises(ConfigError):
        estimate_mi(x, x, k=2)
    with pytest.raises(ConfigError):
        estimate_mi(x, x, k=11)
    with pytest.raises(InputError):
        estimate_mi(x[:19], x[:19], k=3)


@pytest.mark.parametrize("rho", [0.3, 0.6])
def test_gaussian_mi_accuracy(rho):
    truth = -0.5 * np.log(1 - rho**2)
    estimates = [estimate_mi(*gaussian_pair(rho, 2000, seed), seed=seed) for seed in range(10)]
    assert np.mean(estimates) == pytest.approx(truth, abs=0.03)


@pytest.mark.slow
def test_strongly_correlated_gaussian_mi():
    truth = -0.5 * np.log(1 - 0.9**2)
    estimates = [estimate_mi(*gaussian_pair(0.9, 2000, seed), seed=seed) for seed in range(10)]
    assert np.mean(estimates) == pytest.approx(truth, abs=0.03)


def test_noise_never_replays_data_from_the_same_seed():
    data = np.random.default_rng(4).standard_normal(500)
    noise = white_noise(500, seed=4)
    assert not np.allclose(noise, data)
    np.testing.assert_array_equal(noise, white_noise(500, seed=4))


def test_markov_chain_conditional_independence():
    f, g, h = markov_chain()
    assert abs(estimate_cmi(f, g, h)) <= 0.03
    assert estimate_mi(f, g) >= 0.1


def test_conditioning_on_the_middle_link_lowers_information():
    f, g, h = markov_chain()
    assert estimate_mi(f, g) - estimate_cmi(f, g, h) >= 0.05


def test_mi_is_symmetric():
    x, y = gaussian_pair(0.6, 800, 3)
    assert estimate_mi(x, y, seed=2) == pytest.approx(estimate_mi(y, x, seed=2), abs=1e-12)


def test_identical_columns_saturate_above_two_nats():
    x, _ = gaussian_pair(0.5, 2000, 6)
    noise = white_noise(2000, seed=6)
    assert estimate_cmi(x, x.copy(), noise, k=3) > 2.0


def test_independent_uniforms_near_zero():
    estimates = []
    for seed in range(5):
        a, b = np.random.default_rng(seed).uniform(0.0, 1.0, size=(2, 2000))
        estimates.append(estimate_mi(standardize(a), standardize(b), seed=seed))
    assert np.mean(estimates) == pytest.approx(0.0, abs=0.02)


def test_cmi_invariant_to_row_permutation():
    f, g, h = markov_chain(n=500, seed=2)
    order = np.random.default_rng(9).permutation(500)
    assert estimate_cmi(f[order], g[order], h[order]) == pytest.approx(
        estimate_cmi(f, g, h), abs=1e-12)


def test_xor_relevance_and_complementarity():
    x1, x2, y = xor_columns()
    assert abs(estimate_mi(x2, y)) < 0.05
    assert estimate_cmi(x2, x1, y) == pytest.approx(np.log(2), abs=0.02)


def test_duplicate_column_is_fully_redundant():
    x, _ = gaussian_pair(0.5, 300, 1)
    assert normalized_mi(x, x.copy()).normalized == 1.0


def test_independent_columns_near_zero():
    rng = np.random.default_rng(5)
    a, b = standardize(rng.standard_normal(1000)), standardize(rng.standard_normal(1000))
    estimate = normalized_mi(a, b, seed=3)
    assert 0.0 <= estimate.normalized < 0.05
    assert (estimate.k_neighbors, estimate.seed) == (7, 3)


def test_normalized_cmi_of_markov_chain_is_small():
    f, g, h = markov_chain(n=1000, seed=4)
    assert normalized_cmi(f, g, h).normalized < 0.05


def test_normalize_clips_and_rejects_nonpositive_denominator():
    assert normalize(5.0, 2.0, 3.0) == 1.0
    assert normalize(-0.1, 2.0, 3.0) == 0.0
    assert normalize(1.0, 2.0, 4.0) == 0.5
    with pytest.raises(DegenerateColumnError):
        normalize(0.1, 0.0, 1.0)


def test_estimates_are_repeatable():
    f, g, h = markov_chain(n=400, seed=8)
    assert estimate_mi(f, g, seed=1) == estimate_mi(f, g, seed=1)
