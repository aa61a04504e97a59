from typing import List

import numpy as np
import pytest

from hyprl.errors import GpError, GridError, HypRLError, ShapeError, UsageError
from hyprl.schemas import Trial
from hyprl.tuner import Tuner
from hyprl.tuners import get_tuner_cls, gen_tuners
from hyprl.tuners.gp import (
    GpSurrogate,
    KernelKind,
    cholesky_with_jitter,
    expected_improvement,
    fit_gp,
    gp_posterior,
    gp_posterior_batch,
    kernel_matrix,
)
from hyprl.tuners.randomsearch import RandomSearchTuner, random_search
from hyprl.tuners.smbo import IGpTuner, SpearmintTuner, smbo_run

from .conftest import make_md


@pytest.fixture
def quadratic_md():
    x = np.arange(20)
    return make_md([((x - 13) / 19.0) ** 2 + 0.05])


def test_random_search_full_budget_is_permutation(small_grid):
    order = random_search(small_grid, len(small_grid), np.random.default_rng(0))
    assert sorted(order) == list(range(len(small_grid)))


def test_random_search_is_reproducible(small_grid):
    first = random_search(small_grid, 4, np.random.default_rng(9))
    assert first == random_search(small_grid, 4, np.random.default_rng(9))
    assert len(set(first)) == 4


def test_random_search_budget_errors(small_grid):
    with pytest.raises(GridError, match="exceeds grid size"):
        random_search(small_grid, 7, np.random.default_rng(0))
    with pytest.raises(GridError):
        random_search(small_grid, -1, np.random.default_rng(0))


def test_random_search_first_draw_is_uniform():
    grid = make_md([[0.1, 0.2, 0.3, 0.4]]).grid
    hits = sum(random_search(grid, 1, np.random.default_rng(seed))[0] == 0 for seed in range(10_000))
    assert 0.23 <= hits / 10_000 <= 0.27


def test_random_tuner_record(toy_md):
    record = RandomSearchTuner(toy_md).run(0, 4, np.random.default_rng(1), seed=1)
    assert record.method == "random"
    assert sorted(record.config_ids) == [0, 1, 2, 3]
    assert record.losses == [toy_md.loss(0, c) for c in record.config_ids]
    assert all(trial.seconds >= 0 for trial in record.trials)


def test_tuner_rejects_bad_budget(toy_md):
    tuner = RandomSearchTuner(toy_md)
    with pytest.raises(GridError):
        tuner.run(0, 0, np.random.default_rng(0))
    with pytest.raises(GridError):
        tuner.run(0, 5, np.random.default_rng(0))


def test_tuner_rejects_repeated_suggestion(toy_md):
    class Stubborn(Tuner):
        method = "stubborn"

        def suggest(self, trials: List[Trial], rng: np.random.Generator) -> int:
            return 0

    with pytest.raises(HypRLError, match="invalid config 0 at t=2"):
        Stubborn(toy_md).run(0, 2, np.random.default_rng(0))


def test_rng_for_is_keyed_by_dataset():
    first = Tuner.rng_for(3, 1).random()
    assert first == Tuner.rng_for(3, 1).random()
    assert first != Tuner.rng_for(3, 2).random()


def test_single_observation_interpolation():
    sur = GpSurrogate(
        X=[[0.3, 0.6]], y=[0.7], kind=KernelKind.SE_ARD,
        lengthscales=[0.5, 0.5], signal_variance=1.0, noise_variance=0.0,
    )
    mean, variance = gp_posterior(sur, np.array([0.3, 0.6]))
    assert mean == pytest.approx(0.7)
    assert variance == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("kind", list(KernelKind))
def test_far_from_data_reverts_to_prior(kind):
    sur = GpSurrogate(
        X=[[0.0], [0.1]], y=[0.2, 0.4], kind=kind,
        lengthscales=[0.1], signal_variance=2.0, noise_variance=1e-6, prior_mean=0.3,
    )
    mean, variance = gp_posterior(sur, np.array([50.0]))
    assert mean == pytest.approx(0.3)
    assert variance == pytest.approx(2.0)


@pytest.mark.parametrize("kind", list(KernelKind))
def test_posterior_matches_dense_solve(kind):
    rng = np.random.default_rng(4)
    X, y, X_star = rng.random((8, 3)), rng.random(8), rng.random((5, 3))
    sur = GpSurrogate(X, y, kind, np.array([0.4, 0.7, 1.2]), 0.8, 1e-3, prior_mean=float(y.mean()))
    mean, variance = gp_posterior_batch(sur, X_star)

    K = sur.gram()
    k_star = kernel_matrix(kind, X, X_star, sur.lengthscales, 0.8)
    expected_mean = sur.prior_mean + k_star.T @ np.linalg.solve(K, y - sur.prior_mean)
    expected_var = 0.8 - np.einsum("ij,ij->j", k_star, np.linalg.solve(K, k_star))
    np.testing.assert_allclose(mean, expected_mean, atol=1e-8)
    np.testing.assert_allclose(variance, expected_var, atol=1e-8)
    assert np.all(variance >= 0)
    assert np.all(variance <= 0.8 + 1e-3)


def test_surrogate_shape_errors():
    with pytest.raises(ShapeError):
        GpSurrogate([[0.0], [1.0]], [0.1], KernelKind.SE_ARD, [1.0], 1.0, 0.0)
    with pytest.raises(ShapeError):
        GpSurrogate([[0.0, 1.0]], [0.1], KernelKind.SE_ARD, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        GpSurrogate([[0.0]], [0.1], KernelKind.SE_ARD, [-1.0], 1.0, 0.0)
    sur = GpSurrogate([[0.0]], [0.1], KernelKind.SE_ARD, [1.0], 1.0, 0.0)
    with pytest.raises(ShapeError):
        gp_posterior_batch(sur, np.zeros((1, 2)))


def test_kernel_values():
    a, b = np.array([[0.0]]), np.array([[1.0]])
    se = kernel_matrix(KernelKind.SE_ARD, a, b, np.array([1.0]), 2.0)
    assert se[0, 0] == pytest.approx(2.0 * np.exp(-0.5))
    matern = kernel_matrix(KernelKind.MATERN52, a, b, np.array([1.0]), 1.0)
    assert matern[0, 0] == pytest.approx((1 + np.sqrt(5) + 5 / 3) * np.exp(-np.sqrt(5)))
    assert kernel_matrix(KernelKind.MATERN52, a, a, np.array([1.0]), 3.0)[0, 0] == pytest.approx(3.0)


@pytest.mark.parametrize("kind", list(KernelKind))
def test_cholesky_on_random_inputs(kind):
    rng = np.random.default_rng(8)
    X = rng.random((30, 4))
    K = kernel_matrix(kind, X, X, np.full(4, 0.5), 1.0)
    L, lower = cholesky_with_jitter(K)
    assert lower
    factor = np.tril(L)
    np.testing.assert_allclose(factor @ factor.T, K, atol=1e-6)


def test_cholesky_recovers_duplicated_points():
    X = np.array([[0.2], [0.2], [0.5]])
    K = kernel_matrix(KernelKind.SE_ARD, X, X, np.array([1.0]), 1.0)
    L, _ = cholesky_with_jitter(K)
    factor = np.tril(L)
    np.testing.assert_allclose(factor @ factor.T, K, atol=1e-5)


def test_cholesky_gives_up_on_indefinite_matrix():
    with pytest.raises(GpError):
        cholesky_with_jitter(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_expected_improvement_values():
    assert expected_improvement(0.5, 0.0, 0.3) == 0.0
    assert expected_improvement(0.1, 0.0, 0.3) == pytest.approx(0.2)
    assert expected_improvement(0.3, 1.0, 0.3) == pytest.approx(0.39894, abs=1e-5)
    sigmas = np.array([0.01, 0.1, 0.5, 1.0, 2.0])
    values = expected_improvement(np.full(5, 0.4), sigmas**2, 0.3)
    assert isinstance(values, np.ndarray)
    assert np.all(np.diff(values) > 0)
    assert np.all(values >= 0)


@pytest.mark.parametrize("kind", list(KernelKind))
@pytest.mark.parametrize("seed", range(8))
def test_no_improvement_expected_at_observed_points(kind, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    X, y = rng.random((n, 3)), rng.random(n)
    signal = float(rng.uniform(0.5, 2.0))
    sur = GpSurrogate(X, y, kind, np.full(3, 0.2), signal, 0.0, prior_mean=float(y.mean()))
    mean, variance = gp_posterior_batch(sur, X)
    np.testing.assert_allclose(mean, y, atol=1e-9)
    assert np.all(expected_improvement(mean, variance, float(y.min())) <= 1e-9)


def test_fit_gp_respects_noise_floor():
    rng = np.random.default_rng(2)
    X = rng.random((6, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    sur = fit_gp(X, y, KernelKind.MATERN52, iterations=20)
    assert sur.noise_variance >= 1e-6 * (1 - 1e-9)
    assert sur.prior_mean == pytest.approx(y.mean())


def test_fit_gp_on_constant_losses():
    sur = fit_gp(np.array([[0.0], [0.5], [1.0]]), np.full(3, 0.4), KernelKind.SE_ARD)
    mean, variance = gp_posterior(sur, np.array([0.25]))
    assert mean == pytest.approx(0.4, abs=1e-6)
    assert variance >= 0


@pytest.mark.parametrize("tuner_cls", [IGpTuner, SpearmintTuner])
def test_smbo_initial_design_is_random_search(quadratic_md, tuner_cls):
    record = tuner_cls(quadratic_md).run(0, 3, np.random.default_rng(5))
    assert record.config_ids == random_search(quadratic_md.grid, 3, np.random.default_rng(5))


@pytest.mark.parametrize("kernel", ["se_ard", "matern52"])
def test_smbo_never_repeats(quadratic_md, kernel):
    record = smbo_run(quadratic_md, 0, 10, kernel, np.random.default_rng(3))
    assert len(set(record.config_ids)) == 10
    assert record.method == ("i-gp" if kernel == "se_ard" else "spearmint")


def test_smbo_is_deterministic(quadratic_md):
    first = smbo_run(quadratic_md, 0, 8, KernelKind.SE_ARD, np.random.default_rng(1))
    second = smbo_run(quadratic_md, 0, 8, KernelKind.SE_ARD, np.random.default_rng(1))
    assert first == second


def test_smbo_beats_random_on_smooth_response(quadratic_md):
    smbo_best, random_best = [], []
    for seed in range(20):
        smbo = smbo_run(quadratic_md, 0, 8, KernelKind.SE_ARD, np.random.default_rng(seed))
        rand = RandomSearchTuner(quadratic_md).run(0, 8, np.random.default_rng(seed))
        smbo_best.append(smbo.best_so_far(8))
        random_best.append(rand.best_so_far(8))
    assert np.median(smbo_best) <= np.median(random_best)


def test_registry():
    assert get_tuner_cls("I-GP") is IGpTuner
    assert get_tuner_cls("random") is RandomSearchTuner
    with pytest.raises(UsageError, match="unknown method"):
        get_tuner_cls("bohb")


def test_gen_tuners(toy_md):
    tuners = list(gen_tuners(["random", "spearmint"], toy_md))
    assert [tuner.method for tuner in tuners] == ["random", "spearmint"]
