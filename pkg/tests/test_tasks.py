"""Tests for the synthetic quadratic task."""

import numpy as np
import pytest

from fedmask.tasks import (
    QuadraticTask,
    constant_step,
    decaying_step,
    reference_descent,
)


def test_optimum_is_stationary_point():
    task = QuadraticTask.generate(20, 8, mu=0.5, lipschitz=5.0, seed=1)
    w_star = task.optimum()
    grad = task.population_gradient(w_star)
    assert np.max(np.abs(grad)) < 1e-12


def test_optimum_minimizes_against_perturbations():
    task = QuadraticTask.generate(10, 4, seed=2)
    w_star = task.optimum()
    f_star = task.population_loss(w_star)
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = w_star + rng.normal(0, 0.5, size=4)
        assert task.population_loss(w) > f_star


def test_gradient_matches_finite_difference():
    task = QuadraticTask.generate(5, 3, seed=3)
    rng = np.random.default_rng(1)
    w = rng.normal(size=3)
    g = task.gradient(2, w)
    eps = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = eps
        fd = (task.client_loss(2, w + e) - task.client_loss(2, w - e)) / (2 * eps)
        assert abs(fd - g[d]) < 1e-5


def test_population_gradient_is_mean_of_clients():
    task = QuadraticTask.generate(7, 5, seed=4)
    w = np.linspace(-1, 1, 5)
    mean_g = np.mean([task.gradient(i, w) for i in range(7)], axis=0)
    assert np.allclose(task.population_gradient(w), mean_g)
    assert np.allclose(task.subset_gradient(range(7), w), mean_g)


def test_curvature_bounds_respected():
    task = QuadraticTask.generate(50, 6, mu=2.0, lipschitz=9.0, seed=5)
    assert np.all(task.curvatures >= 2.0)
    assert np.all(task.curvatures <= 9.0)
    assert task.mu == 2.0 and task.lipschitz == 9.0


def test_split_mode_separates_population_optima():
    task = QuadraticTask.generate(
        40, 6, heterogeneity="split", split_index=20, split_offset=4.0, seed=6
    )
    slow_opt = task.optimum_of(range(20))
    fast_opt = task.optimum_of(range(20, 40))
    # the two subgroup optima sit on opposite sides, far apart
    assert np.all(slow_opt < 0)
    assert np.all(fast_opt > 0)
    assert np.linalg.norm(fast_opt - slow_opt) > 4.0
    # global optimum lies between them
    w_star = task.optimum()
    assert np.linalg.norm(w_star) < np.linalg.norm(fast_opt)


def test_generation_is_deterministic_and_seed_sensitive():
    a = QuadraticTask.generate(10, 4, seed=7)
    b = QuadraticTask.generate(10, 4, seed=7)
    c = QuadraticTask.generate(10, 4, seed=8)
    assert np.array_equal(a.targets, b.targets)
    assert np.array_equal(a.curvatures, b.curvatures)
    assert not np.array_equal(a.targets, c.targets)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        QuadraticTask.generate(5, 3, heterogeneity="weird")
    with pytest.raises(ValueError):
        QuadraticTask.generate(5, 3, mu=2.0, lipschitz=1.0)
    with pytest.raises(ValueError):
        QuadraticTask.generate(5, 3, heterogeneity="split", split_index=99)


def test_reference_descent_converges_to_optimum():
    task = QuadraticTask.generate(12, 5, mu=1.0, lipschitz=8.0, seed=9)
    w = reference_descent(task, 400, constant_step(task.lipschitz))
    assert task.distance_to_optimum(w) < 1e-6
    assert task.suboptimality(w) < 1e-12


def test_decaying_step_schedule():
    step = decaying_step(1.0, 10.0)
    assert step(0) == pytest.approx(0.1)
    assert step(10) < step(0)
    task = QuadraticTask.generate(8, 4, mu=1.0, lipschitz=6.0, seed=10)
    w = reference_descent(task, 3000, decaying_step(task.mu, task.lipschitz))
    assert task.distance_to_optimum(w) < 1e-2


def test_per_client_transform_is_applied():
    task = QuadraticTask.generate(6, 3, seed=11)
    w_plain = reference_descent(task, 5, constant_step(task.lipschitz))
    w_zeroed = reference_descent(
        task, 5, constant_step(task.lipschitz), per_client_transform=lambda g: g * 0.0
    )
    assert np.array_equal(w_zeroed, np.zeros(3))
    assert not np.array_equal(w_plain, w_zeroed)
