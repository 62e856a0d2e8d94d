import itertools

import numpy as np
import pytest

from expectile_group_lasso import loss
from expectile_group_lasso.design import GroupedCoefficients, GroupedDesign, GroupSpec
from expectile_group_lasso.loss import LossSpec
from expectile_group_lasso.solver import (
    DimensionError, IllConditionedError, PenaltySpec, SolverOptions, adaptive_weights, default_cap, fit_penalized,
    fit_unpenalized, group_prox, kkt_residual, lambda_max, loss_gradient, objective_penalized,
    objective_unpenalized, pilot_and_weights, prox_gradient_step)

from .conftest import QS, TAUS, make_instance


def pilot_penalty(design, y, spec, lam, gamma=1.0):
    _, weights = pilot_and_weights(design, y, spec, gamma)
    return PenaltySpec(lam, gamma, weights)


def assert_kkt_certificate(design, y, spec, pen, fit):
    """Converged fits satisfy KKT and every active coordinate is a strict local minimum."""
    assert fit.converged
    assert fit.kkt_residual <= 1e-6

    base = objective_penalized(design, y, fit.beta.beta, spec, pen, intercept=fit.intercept or 0.0)
    for j in fit.active:
        for k in range(design.groups.slices[j].start, design.groups.slices[j].stop):
            for sign in (1.0, -1.0):
                moved = np.array(fit.beta.beta)
                moved[k] += sign * 1e-2
                assert objective_penalized(design, y, moved, spec, pen, intercept=fit.intercept or 0.0) > base


def test_objective_unpenalized():
    design = GroupedDesign(np.zeros((1, 1)), GroupSpec.ungrouped(1))

    assert objective_unpenalized(design, [2.0], [0.0], LossSpec(0.5)) == 2.0


def test_objective_unpenalized_zero_residuals(instance):
    design, _, spec = instance
    beta = np.array([1.0, -2.0, 0.5, 3.0])

    assert objective_unpenalized(design, design.X @ beta, beta, spec) == 0.0


def test_objectives_match_naive(instance):
    design, y, _ = instance
    spec = LossSpec(0.3, 1.5)
    beta = np.array([0.2, -0.4, 1.0, 0.0])
    pen = PenaltySpec(0.1, 1.0, [2.0, 0.5, 3.0])

    naive = 0.0
    for i in range(design.n):
        u = y[i] - sum(design.X[i, k] * beta[k] for k in range(design.r))
        naive += abs(spec.tau - (u < 0)) * abs(u) ** spec.q

    assert objective_unpenalized(design, y, beta, spec) == pytest.approx(naive, rel=1e-12)

    penalty = 0.1 * (2.0 * 0.2 + 0.5 * np.hypot(0.4, 1.0) + 0.0)
    assert objective_penalized(design, y, beta, spec, pen) == pytest.approx(naive / design.n + penalty, rel=1e-12)

    zero = PenaltySpec(0.0, 1.0, [1.0, 1.0, 1.0])
    assert objective_penalized(design, y, beta, spec, zero) == pytest.approx(naive / design.n, rel=1e-12)
    assert objective_penalized(design, y, np.zeros(4), spec, pen) == pytest.approx(
        np.sum(loss.rho(y, spec)) / design.n, rel=1e-12)


def test_objective_penalized_pinned_group(instance):
    design, y, spec = instance
    pen = PenaltySpec(0.1, 1.0, [1.0, np.inf, 1.0])

    assert objective_penalized(design, y, [0.1, 0.2, 0.0, 0.3], spec, pen) == np.inf
    assert np.isfinite(objective_penalized(design, y, [0.1, 0.0, 0.0, 0.3], spec, pen))


def test_dimension_errors(instance):
    design, y, spec = instance

    with pytest.raises(DimensionError):
        objective_unpenalized(design, y, np.zeros(3), spec)

    with pytest.raises(DimensionError):
        objective_unpenalized(design, y[:-1], np.zeros(4), spec)

    with pytest.raises(DimensionError):
        objective_penalized(design, y, np.zeros(4), spec, PenaltySpec(0.1, 1.0, [1.0, 1.0]))

    with pytest.raises(DimensionError):
        fit_penalized(design, y, spec, PenaltySpec(0.1, 1.0, [1.0, 1.0, 1.0, 1.0]))


@pytest.mark.parametrize('q,tau', itertools.product(QS, TAUS))
def test_loss_gradient_matches_finite_difference(q, tau):
    design, y, _ = make_instance(int(q * 10 + tau * 100))
    spec = LossSpec(tau, q)
    rng = np.random.default_rng(int(q * 100 + tau * 10))
    step = 1e-6

    for _ in range(20):
        beta = rng.normal(0.0, 1.0, design.r)
        gradient = loss_gradient(design, y, beta, spec)

        numeric = np.empty(design.r)
        for k in range(design.r):
            e = np.zeros(design.r)
            e[k] = step
            numeric[k] = (objective_unpenalized(design, y, beta + e, spec)
                          - objective_unpenalized(design, y, beta - e, spec)) / (2 * step * design.n)

        np.testing.assert_allclose(gradient, numeric, rtol=1e-5, atol=1e-8)


def test_loss_gradient_with_intercept(instance):
    design, y, spec = instance

    gradient = loss_gradient(design, y, np.zeros(4), spec, intercept=0.5)

    assert gradient.shape == (5,)
    assert gradient[-1] == pytest.approx(np.mean(loss.g(y - 0.5, spec)))


@pytest.mark.parametrize('seed', range(20))
def test_fit_unpenalized_is_least_squares_at_half(seed):
    design, y, spec = make_instance(seed, n=40, sizes=(2, 1, 3), tau=0.5)

    fit = fit_unpenalized(design, y, spec)

    ols = np.linalg.solve(design.X.T @ design.X, design.X.T @ y)
    assert fit.converged
    np.testing.assert_allclose(fit.beta.beta, ols, atol=1e-8)


@pytest.mark.parametrize('tau,q', ((0.2, 2.0), (0.7, 3.0), (0.5, 1.5)))
def test_fit_unpenalized_noiseless(tau, q):
    beta = np.array([1.0, -2.0, 0.5, 3.0])
    design, y, spec = make_instance(5, sizes=(1, 2, 1), tau=tau, q=q, noise=0.0, beta=beta)

    fit = fit_unpenalized(design, y, spec)

    assert fit.converged
    np.testing.assert_allclose(fit.beta.beta, beta, atol=1e-8)


def test_fit_unpenalized_stationary(sparse_instance):
    design, y, spec = sparse_instance

    fit = fit_unpenalized(design, y, spec)

    assert fit.converged
    assert np.linalg.norm(loss_gradient(design, y, fit.beta, spec)) <= 1e-6
    assert fit.active.indices == (0, 1, 2, 3)


def test_fit_unpenalized_expectile_of_constant_design(rng):
    y = rng.standard_normal(1000)
    design = GroupedDesign(np.ones((1000, 1)), GroupSpec.ungrouped(1))
    spec = LossSpec(0.7)

    fit = fit_unpenalized(design, y, spec, opts=SolverOptions(tol_kkt=1e-10))

    # golden section search on the same sample objective
    a, b = -3.0, 3.0
    ratio = (np.sqrt(5) - 1) / 2
    for _ in range(200):
        c, d = b - ratio * (b - a), a + ratio * (b - a)
        if np.sum(loss.rho(y - c, spec)) < np.sum(loss.rho(y - d, spec)):
            b = d
        else:
            a = c

    assert fit.beta.beta[0] == pytest.approx((a + b) / 2, abs=1e-6)


def test_fit_unpenalized_intercept(instance):
    design, y, spec = instance

    fit = fit_unpenalized(design, y + 3.0, spec, intercept=True)
    plain = fit_unpenalized(design, y, spec, intercept=True)

    assert fit.intercept == pytest.approx(plain.intercept + 3.0, abs=1e-8)
    np.testing.assert_allclose(fit.beta.beta, plain.beta.beta, atol=1e-8)


def test_fit_unpenalized_ill_conditioned(rng):
    X = rng.standard_normal((30, 2))
    design = GroupedDesign(np.column_stack([X, X[:, 0]]), GroupSpec.ungrouped(3))

    with pytest.raises(IllConditionedError) as excinfo:
        fit_unpenalized(design, rng.standard_normal(30), LossSpec(0.5))

    assert excinfo.value.min_eigen < 1e-10


@pytest.mark.parametrize('v,threshold,expected', (
    ((3.0, 4.0), 5.0, (0.0, 0.0)),
    ((3.0, 4.0), 2.5, (1.5, 2.0)),
    ((3.0, 4.0), 0.0, (3.0, 4.0)),
    ((0.0, 0.0), 0.0, (0.0, 0.0)),
    ((-1.0,), 0.25, (-0.75,)),
))
def test_group_prox(v, threshold, expected):
    np.testing.assert_allclose(group_prox(np.array(v), threshold), expected)


def test_group_prox_exact_zero():
    out = group_prox(np.array([1e-3, -2e-3]), 1.0)

    assert np.all(out == 0.0)

    with pytest.raises(ValueError):
        group_prox(np.array([1.0]), -1.0)


def test_adaptive_weights():
    spec = GroupSpec((2, 1, 1, 1))
    beta = GroupedCoefficients([0.6, 0.8, 4.0, 0.0, 0.01], spec)

    np.testing.assert_allclose(adaptive_weights(beta, 0.5), [1.0, 0.5, np.inf, 10.0])
    np.testing.assert_allclose(adaptive_weights(beta, 1.0, cap=default_cap(100)), [1.0, 0.25, 10.0, 10.0])

    with pytest.raises(ValueError):
        adaptive_weights(beta, 0.0)

    with pytest.raises(ValueError):
        adaptive_weights(beta, 1.0, cap=0.0)


@pytest.mark.parametrize('kwargs', (
    {'lam': -1.0, 'gamma': 1.0, 'weights': [1.0]},
    {'lam': np.inf, 'gamma': 1.0, 'weights': [1.0]},
    {'lam': 1.0, 'gamma': 0.0, 'weights': [1.0]},
    {'lam': 1.0, 'gamma': 1.0, 'weights': []},
    {'lam': 1.0, 'gamma': 1.0, 'weights': [1.0, 0.0]},
    {'lam': 1.0, 'gamma': 1.0, 'weights': [np.nan]},
))
def test_penalty_spec_invalid(kwargs):
    with pytest.raises(ValueError):
        PenaltySpec(**kwargs)


def test_solver_options_from_config(caplog):
    opts = SolverOptions.from_config({'max_iter': 50, 'tol_kkt': 1e-8, 'unknown': 1})

    assert opts.max_iter == 50
    assert opts.tol_kkt == 1e-8
    assert 'unknown' in caplog.text
    assert SolverOptions.from_config(None) == SolverOptions()

    with pytest.raises(ValueError):
        SolverOptions(backtrack_factor=1.0)


def penalized_grid(design, y, spec, lam, weights, b1, b2):
    """Penalized objective of a two-column design on a coefficient grid, accumulated row by row."""
    values = np.zeros(np.broadcast(b1, b2).shape)
    for i in range(design.n):
        values += loss.rho(y[i] - design.X[i, 0] * b1 - design.X[i, 1] * b2, spec)
    return values / design.n + lam * (weights[0] * np.abs(b1) + weights[1] * np.abs(b2))


def test_grid_search_oracle():
    design, y, spec = make_instance(7, n=50, sizes=(1, 1), tau=0.5, beta=(1.0, -0.8))
    lam, weights = 0.15, (1.0, 1.5)
    pen = PenaltySpec(lam, 1.0, weights)

    fit = fit_penalized(design, y, spec, pen)

    coarse = np.linspace(-3.0, 3.0, 601)
    values = penalized_grid(design, y, spec, lam, weights, coarse[:, None], coarse[None, :])
    i, j = np.unravel_index(np.argmin(values), values.shape)

    # refine at resolution 1e-3 around the coarse minimum
    fine1 = coarse[i] + np.linspace(-0.02, 0.02, 41)
    fine2 = coarse[j] + np.linspace(-0.02, 0.02, 41)
    values = penalized_grid(design, y, spec, lam, weights, fine1[:, None], fine2[None, :])
    i, j = np.unravel_index(np.argmin(values), values.shape)

    assert fit.beta.beta[0] == pytest.approx(fine1[i], abs=2e-3)
    assert fit.beta.beta[1] == pytest.approx(fine2[j], abs=2e-3)
    assert fit.objective <= values[i, j] + 1e-9
    assert len(fit.active) == 2
    assert kkt_residual(design, y, [fine1[i], fine2[j]], spec, pen) <= 5e-3


@pytest.mark.parametrize('tau', TAUS)
def test_fit_penalized_kkt_certificate(sparse_instance, tau):
    design, y, _ = sparse_instance
    spec = LossSpec(tau)
    pen = pilot_penalty(design, y, spec, lam=0.05)

    fit = fit_penalized(design, y, spec, pen)

    assert_kkt_certificate(design, y, spec, pen, fit)
    assert {0, 1}.issubset(fit.active.indices)
    assert kkt_residual(design, y, fit.beta, spec, pen) == pytest.approx(fit.kkt_residual)


def test_fit_penalized_general_q(sparse_instance):
    design, y, _ = sparse_instance
    spec = LossSpec(0.6, 3.0)
    pen = pilot_penalty(design, y, spec, lam=0.05)

    fit = fit_penalized(design, y, spec, pen)

    assert_kkt_certificate(design, y, spec, pen, fit)


def test_fit_penalized_history_monotone(sparse_instance):
    design, y, spec = sparse_instance
    pen = pilot_penalty(design, y, spec, lam=0.02)

    fit = fit_penalized(design, y, spec, pen)

    assert len(fit.history) > 1
    assert all(b <= a for a, b in zip(fit.history, fit.history[1:]))
    assert fit.objective == pytest.approx(fit.history[-1])


def test_fit_penalized_lambda_zero_is_unpenalized(sparse_instance):
    design, y, spec = sparse_instance

    pilot = fit_unpenalized(design, y, spec)
    fit = fit_penalized(design, y, spec, PenaltySpec(0.0, 1.0, np.ones(design.p)), opts=SolverOptions(tol_kkt=1e-8))

    assert np.max(np.abs(fit.beta.beta - pilot.beta.beta)) <= 1e-7


def test_fit_penalized_kkt_residual_increases_off_optimum(sparse_instance):
    design, y, spec = sparse_instance
    pen = pilot_penalty(design, y, spec, lam=0.05)
    fit = fit_penalized(design, y, spec, pen)

    k = design.groups.slices[fit.active.indices[0]].start
    moved = np.array(fit.beta.beta)
    moved[k] += 0.1

    assert kkt_residual(design, y, moved, spec, pen) > fit.kkt_residual


def test_fit_penalized_warm_start(sparse_instance):
    design, y, spec = sparse_instance
    pen = pilot_penalty(design, y, spec, lam=0.05)

    cold = fit_penalized(design, y, spec, pen)
    warm = fit_penalized(design, y, spec, pen, warm_start=cold.beta)

    np.testing.assert_allclose(warm.beta.beta, cold.beta.beta, atol=1e-5)
    assert warm.iterations <= cold.iterations


def test_fit_penalized_pinned_group(sparse_instance):
    design, y, spec = sparse_instance
    weights = np.ones(design.p)
    weights[0] = np.inf

    fit = fit_penalized(design, y, spec, PenaltySpec(0.01, 1.0, weights), warm_start=np.ones(design.r))

    assert fit.converged
    assert np.all(fit.beta.blocks()[0] == 0.0)
    assert 0 not in fit.active


@pytest.mark.parametrize('seed', range(50))
def test_lambda_max_gives_exact_zero(seed):
    design, y, spec = make_instance(100 + seed, n=40, sizes=(1, 2, 2), tau=0.3 + 0.4 * (seed % 2))
    _, weights = pilot_and_weights(design, y, spec, gamma=1.0)

    lam = lambda_max(design, y, spec, weights)

    at_max = fit_penalized(design, y, spec, PenaltySpec(lam, 1.0, weights))
    above = fit_penalized(design, y, spec, PenaltySpec(1.5 * lam, 1.0, weights))
    below = fit_penalized(design, y, spec, PenaltySpec(0.9 * lam, 1.0, weights))

    assert np.all(at_max.beta.beta == 0.0)
    assert np.all(above.beta.beta == 0.0)
    assert len(at_max.active) == 0
    assert kkt_residual(design, y, np.zeros(design.r), spec, PenaltySpec(lam, 1.0, weights)) <= 1e-12
    assert len(below.active) > 0


def test_lambda_max_with_intercept(sparse_instance):
    design, y, spec = sparse_instance
    weights = np.ones(design.p)

    lam = lambda_max(design, y + 10.0, spec, weights, intercept=True)
    fit = fit_penalized(design, y + 10.0, spec, PenaltySpec(lam, 1.0, weights), intercept=True)

    assert np.all(fit.beta.beta == 0.0)
    # the intercept alone is the tau-expectile of the response
    assert np.mean(loss.g(y + 10.0 - fit.intercept, spec)) == pytest.approx(0.0, abs=1e-6)


def test_prox_gradient_step(instance):
    design, y, spec = instance
    beta = np.array([0.5, 0.1, -0.1, 2.0])

    free = prox_gradient_step(design, y, beta, spec, PenaltySpec(0.0, 1.0, [1.0, 1.0, 1.0]), 0.1)
    np.testing.assert_allclose(free, beta - 0.1 * loss_gradient(design, y, beta, spec))

    shrunk = prox_gradient_step(design, y, beta, spec, PenaltySpec(100.0, 1.0, [1.0, 1.0, 1.0]), 0.1)
    assert np.all(shrunk == 0.0)


@pytest.mark.parametrize('q', (1.5, 2.0, 3.0))
def test_fit_penalized_is_prox_gradient_fixed_point(sparse_instance, q):
    design, y, _ = sparse_instance
    spec = LossSpec(0.7, q)
    pen = pilot_penalty(design, y, spec, lam=0.05)
    opts = SolverOptions()
    fit = fit_penalized(design, y, spec, pen, opts=opts)
    step = design.n / np.linalg.norm(design.X, 2) ** 2

    moved = prox_gradient_step(design, y, fit.beta.beta, spec, pen, step)

    assert fit.converged
    assert np.linalg.norm(moved - fit.beta.beta) <= 10 * opts.tol_kkt


@pytest.mark.parametrize('order', ((1, 0, 2, 3), (3, 2, 1, 0), (2, 0, 3, 1)))
def test_fit_penalized_permutation_equivariance(sparse_instance, order):
    design, y, spec = sparse_instance
    pen = pilot_penalty(design, y, spec, lam=0.05)
    permuted_pen = PenaltySpec(pen.lam, pen.gamma, [pen.weights[j] for j in order])

    fit = fit_penalized(design, y, spec, pen)
    permuted = fit_penalized(design.permuted(order), y, spec, permuted_pen)

    blocks = fit.beta.blocks()
    expected = np.concatenate([blocks[j] for j in order])
    np.testing.assert_allclose(permuted.beta.beta, expected, rtol=0, atol=1e-10)
    assert sorted(order[j] for j in permuted.active) == sorted(fit.active)
