import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ali_lab.autodiff import ContractError
from ali_lab.mixture import (
    GaussianMixture,
    assign_components,
    grid_rows,
    log_density,
    make_grid_mixture,
    responsibilities,
    sample,
)
from ali_lab.nn import make_rng

coords = st.floats(-1e6, 1e6, allow_nan=False)


def test_side_five_has_25_components():
    mix = make_grid_mixture(5, 2.0, 0.05)
    assert mix.n_components == 25
    assert np.allclose(mix.weights, 1 / 25)
    assert np.allclose(mix.covariances, 0.05**2 * np.eye(2))


def test_side_one_is_origin():
    mix = make_grid_mixture(1, 2.0, 0.3)
    assert mix.centroids.tolist() == [[0.0, 0.0]]


def test_side_two_centroids():
    mix = make_grid_mixture(2, 2.0, 0.1)
    assert sorted(map(tuple, mix.centroids.tolist())) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def test_rows_run_along_second_coordinate():
    mix = make_grid_mixture(3, 1.0, 0.1)
    rows = grid_rows(np.arange(9), 3)
    for r in range(3):
        assert np.all(mix.centroids[rows == r, 1] == mix.centroids[rows == r][0, 1])


@pytest.mark.parametrize("args", [(0, 1.0, 1.0), (2, 0.0, 1.0), (2, 1.0, -1.0)])
def test_bad_grid_arguments(args):
    with pytest.raises(ContractError):
        make_grid_mixture(*args)


def test_invariants_rejected():
    c, s = np.zeros((2, 2)), np.stack([np.eye(2)] * 2)
    with pytest.raises(ContractError):
        GaussianMixture(c, s, np.array([0.7, 0.7]))
    with pytest.raises(ContractError):
        GaussianMixture(c, np.stack([np.eye(2), -np.eye(2)]), np.array([0.5, 0.5]))
    with pytest.raises(ContractError):
        GaussianMixture(c, np.stack([np.eye(2), [[1.0, 0.5], [0.0, 1.0]]]), np.array([0.5, 0.5]))


def test_component_frequencies_binomial_bound():
    n = 25000
    _, labels = sample(make_grid_mixture(5, 2.0, 0.05), n, make_rng(0))
    counts = np.bincount(labels, minlength=25)
    p = 1 / 25
    assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))


def test_tiny_sigma_samples_sit_on_centroids():
    mix = make_grid_mixture(3, 2.0, 1e-9)
    x, labels = sample(mix, 100, make_rng(1))
    np.testing.assert_allclose(x, mix.centroids[labels], atol=1e-7)


def test_sampling_is_deterministic():
    mix = make_grid_mixture(5, 2.0, 0.05)
    a, la = sample(mix, 1000, make_rng(5))
    b, lb = sample(mix, 1000, make_rng(5))
    assert a.tobytes() == b.tobytes() and np.array_equal(la, lb)


def test_sample_rejects_empty():
    with pytest.raises(ContractError):
        sample(make_grid_mixture(2, 1.0, 0.1), 0, make_rng(0))


def test_equidistant_point_splits_evenly():
    mix = make_grid_mixture(2, 2.0, 0.5)
    two = GaussianMixture(mix.centroids[:2], mix.covariances[:2], np.array([0.5, 0.5]))
    np.testing.assert_allclose(responsibilities(two, np.array([0.0, -1.0])), [0.5, 0.5], atol=1e-15)


def test_point_at_centroid_dominates():
    mix = make_grid_mixture(5, 2.0, 0.05)
    r = responsibilities(mix, mix.centroids[7])
    assert r[7] > 1 - 1e-6


def test_standard_gaussian_log_density_at_origin():
    mix = GaussianMixture(np.zeros((1, 2)), np.eye(2)[None], np.ones(1))
    assert log_density(mix, np.zeros(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-15)


def test_zero_weight_component_is_ignored():
    c = np.array([[0.0, 0.0], [3.0, -1.0]])
    s = np.stack([np.eye(2), 0.2 * np.eye(2)])
    mix = GaussianMixture(c, s, np.array([1.0, 0.0]))
    first = GaussianMixture(c[:1], s[:1], np.ones(1))
    pts = make_rng(2).standard_normal((20, 2))
    np.testing.assert_allclose(log_density(mix, pts), log_density(first, pts), rtol=0, atol=1e-14)


def test_density_integrates_to_one():
    mix = make_grid_mixture(3, 1.0, 0.2)
    g = np.linspace(-3, 3, 601)
    gx, gy = np.meshgrid(g, g)
    dens = np.exp(log_density(mix, np.column_stack([gx.ravel(), gy.ravel()])))
    assert abs(dens.sum() * (g[1] - g[0]) ** 2 - 1.0) < 1e-3


def test_argmax_recovers_labels_when_well_separated():
    mix = make_grid_mixture(5, 2.0, 0.1)  # spacing / sigma = 20
    x, labels = sample(mix, 20000, make_rng(3))
    assert np.mean(assign_components(mix, x) == labels) > 0.999


def test_ties_go_to_lowest_index():
    mix = make_grid_mixture(2, 2.0, 0.5)
    assert assign_components(mix, np.zeros((1, 2))).tolist() == [0]


def test_scaled_mixture_matches_scaled_samples():
    mix = make_grid_mixture(5, 2.0, 0.05)
    x, _ = sample(mix, 500, make_rng(4))
    small = mix.scaled(0.25)
    np.testing.assert_allclose(
        log_density(small, x * 0.25), log_density(mix, x) - 2 * np.log(0.25), rtol=1e-12
    )


def test_json_round_trip():
    mix = make_grid_mixture(3, 1.5, 0.1)
    back = GaussianMixture.from_dict(mix.to_dict())
    assert np.array_equal(back.centroids, mix.centroids)
    assert np.array_equal(back.covariances, mix.covariances)


@settings(max_examples=100, deadline=None)
@given(coords, coords)
def test_responsibilities_normalized_and_density_finite(a, b):
    mix = make_grid_mixture(5, 2.0, 0.05)
    r = responsibilities(mix, np.array([a, b]))
    assert abs(r.sum() - 1.0) <= 1e-12
    assert np.isfinite(log_density(mix, np.array([a, b])))
