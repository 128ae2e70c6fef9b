import math

import numpy as np
import pytest

from leaftransfer.groups import GroupFamily, act_on_task, affine, identity, random_element, translation
from leaftransfer.learning import (
    FitResult,
    LearnerConfig,
    Method,
    RankDeficientError,
    check_equivariance,
    feature_space,
    fit_multitask,
    fit_on_leaf,
    fit_scratch,
    fourier_space,
    homomorphism_gap,
    identity_gap,
    leaf_model,
    mse_gradient,
    mse_loss,
    parameter_action,
)
from leaftransfer.taskspace import Dataset, sample_dataset, sinusoid

GD = Method.GRADIENT_DESCENT


def line_space():
    return feature_space([lambda x: np.ones_like(x), lambda x: x], leaf_idx=[0, 1], names=["1", "x"])


def sin_space(phase=0.0, omega=1.0):
    return feature_space([lambda x: np.ones_like(x), lambda x: np.sin(omega * x + phase)],
                         leaf_idx=[0], names=["1", "sin"])


def test_constant_target_exact():
    x = np.linspace(0, 1, 10)
    res = fit_scratch(Dataset(x, np.full(10, 2.0)), line_space())
    np.testing.assert_allclose(res.theta, [2.0, 0.0], atol=1e-12)
    assert res.final_loss <= 1e-12


def test_three_point_least_squares():
    # normal equations [[3, 3], [3, 5]] theta = [3, 5] give theta = (0, 1)
    res = fit_scratch(Dataset(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 2.0])), line_space())
    np.testing.assert_allclose(res.theta, [0.0, 1.0], atol=1e-14)


def test_gradient_descent_matches_closed_form():
    space = fourier_space(2)
    data = sample_dataset(sinusoid(1.3, 2, 0.4, 0.2), 40, 0.1, 8)
    exact = fit_scratch(data, space)
    gd = fit_scratch(data, space, LearnerConfig(GD, max_iters=100_000, step=0.5, tol=1e-12))
    assert np.max(np.abs(gd.theta - exact.theta)) <= 1e-4


def test_gradient_descent_curve_non_increasing():
    space = fourier_space(3)
    data = sample_dataset(sinusoid(2, 3, 1.0, 0.5), 20, 0.2, 2)
    res = fit_scratch(data, space, LearnerConfig(GD, max_iters=3000, step=5.0))
    losses = [v for _, v in res.loss_curve]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert res.loss_curve[0][0] == 0 and res.loss_curve[-1][0] == res.iterations_used


def test_rank_deficient_fit_raises():
    with pytest.raises(RankDeficientError):
        fit_scratch(Dataset(np.array([0.5]), np.array([1.0])), line_space())


def test_l2_resolves_rank_deficiency():
    res = fit_scratch(Dataset(np.array([0.5]), np.array([1.0])), line_space(), LearnerConfig(l2=1e-3))
    assert np.all(np.isfinite(res.theta))


def test_fit_on_leaf_full_partition_equals_scratch():
    space = fourier_space(2, leaf_idx=range(5))
    data = sample_dataset(sinusoid(1, 2, 0.3, 0.1), 30, 0.1, 4)
    for cfg in (LearnerConfig(), LearnerConfig(GD, max_iters=500)):
        a, b = fit_scratch(data, space, cfg), fit_on_leaf(data, space, [], cfg)
        assert np.array_equal(a.theta, b.theta)
        assert a.loss_curve == b.loss_curve


def test_fit_on_leaf_recovers_offset_and_scale():
    omega, phase = 2.0, 0.7
    space = feature_space([lambda x: np.ones_like(x), lambda x: np.sin(omega * x + phase)], leaf_idx=[0, 1])
    task = act_on_task(affine(2, 3), sinusoid(1, omega, phase, 0))
    res = fit_on_leaf(sample_dataset(task, 25, 0.0, 1), space, [])
    np.testing.assert_allclose(res.theta, [2.0, 3.0], atol=1e-10)


def test_fit_on_leaf_wrong_leaf_loss_bound():
    space = sin_space()
    data = sample_dataset(sinusoid(1.5, 1, 0, 0.5), 30, 0.05, 6)
    wrong = np.array([0.4])
    # oracle: best constant for the residual after the frozen feature
    resid = data.targets - wrong[0] * np.sin(data.inputs)
    best = np.mean((resid - resid.mean()) ** 2)
    for cfg in (LearnerConfig(), LearnerConfig(GD, max_iters=2000)):
        res = fit_on_leaf(data, space, wrong, cfg)
        assert res.final_loss >= best - 1e-15
        assert res.theta[1] == wrong[0]
    assert fit_on_leaf(data, space, wrong).final_loss == pytest.approx(best, rel=1e-12)


@pytest.mark.parametrize("cfg", [LearnerConfig(), LearnerConfig(GD, max_iters=200, step=3.0)])
def test_fit_on_leaf_never_touches_invariant_block(cfg):
    space = fourier_space(3)
    rng = np.random.default_rng(0)
    for seed in range(20):
        frozen = rng.normal(size=len(space.inv_idx)) * 1e3 + 1e-7
        res = fit_on_leaf(sample_dataset(sinusoid(1, 2, 0, 1), 15, 0.1, seed), space, frozen, cfg)
        assert res.theta[list(space.inv_idx)].tobytes() == frozen.tobytes()


def test_fit_on_leaf_rejects_wrong_frozen_length():
    with pytest.raises(ValueError):
        fit_on_leaf(sample_dataset(sinusoid(), 10), fourier_space(1), [1.0, 2.0, 3.0])


def test_leaf_search_space_is_smaller():
    space = fourier_space(3)
    assert len(space.leaf_idx) < space.dim


def test_multitask_recovers_shared_amplitude():
    space = sin_space()
    base = sinusoid(1.7, 1, 0, 0)
    offsets = (0.3, -1.2, 2.5)
    data = [sample_dataset(act_on_task(translation(a), base), 30, 0.0, i) for i, a in enumerate(offsets)]
    res = fit_multitask(data, space, LearnerConfig(max_iters=500, tol=1e-14))
    assert res.shared_inv[0] == pytest.approx(1.7, abs=1e-6)
    np.testing.assert_allclose([leaf[0] for leaf in res.per_task_leaf], offsets, atol=1e-6)
    assert all(b <= a + 1e-15 for a, b in zip(res.objective, res.objective[1:]))


def test_multitask_duplicated_task_matches_scratch():
    space = fourier_space(2)
    data = sample_dataset(sinusoid(1.2, 2, 0.5, 0.3), 30, 0.2, 3)
    res = fit_multitask([data] * 4, space, LearnerConfig(max_iters=200, tol=1e-15))
    scratch = fit_scratch(data, space).theta
    np.testing.assert_allclose(res.shared_inv, scratch[list(space.inv_idx)], atol=1e-10)
    for leaf in res.per_task_leaf:
        np.testing.assert_allclose(leaf, scratch[list(space.leaf_idx)], atol=1e-10)


def test_multitask_objective_monotone_with_noise():
    space = fourier_space(3)
    rng = np.random.default_rng(2)
    base = sinusoid(1, 2, 0.3, 0)
    data = [sample_dataset(act_on_task(random_element(GroupFamily.TRANSLATION, rng), base), 12, 0.3, s)
            for s in range(5)]
    res = fit_multitask(data, space, LearnerConfig(max_iters=50, tol=1e-16, l2=0.01))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res.objective, res.objective[1:]))


def test_multitask_needs_two_datasets():
    with pytest.raises(ValueError):
        fit_multitask([sample_dataset(sinusoid(), 10)], fourier_space(1))


def test_multitask_affine_heads_recover_leaf():
    space = fourier_space(3)
    rng = np.random.default_rng(5)
    base = sinusoid(1.0, 2.0, 0.9, 0.0)
    elems = [random_element(GroupFamily.AFFINE, rng, 2.0) for _ in range(4)]
    data = [sample_dataset(act_on_task(g, base), 20, 0.0, i) for i, g in enumerate(elems)]
    res = fit_multitask(data, space, LearnerConfig(max_iters=200, tol=1e-15), heads=GroupFamily.AFFINE)
    assert all(b <= a * (1 + 1e-12) + 1e-28 for a, b in zip(res.objective, res.objective[1:]))
    assert res.objective[-1] < 1e-20

    leaf_space, frozen = leaf_model(space, res)
    assert leaf_space.dim == 2 and frozen.size == 0
    target = act_on_task(affine(-0.7, 1.8), base)
    fit = fit_on_leaf(sample_dataset(target, 5, 0.0, 99), leaf_space, frozen)
    x = np.linspace(0, 2 * math.pi, 50)
    np.testing.assert_allclose(leaf_space.predict(fit.theta, x), target(x), atol=1e-9)


def test_single_point_leaf_is_exact_scratch_is_min_norm():
    space = sin_space()
    truth = sinusoid(1.0, 1, 0, 0.8)
    data = sample_dataset(truth, 1, 0.0, 3)
    leaf = fit_on_leaf(data, space, [1.0])
    x = np.linspace(0, 2 * math.pi, 50)
    np.testing.assert_allclose(space.predict(leaf.theta, x), truth(x), atol=1e-12)

    with pytest.raises(RankDeficientError):
        fit_scratch(data, space)
    design = space.design(data.inputs)
    min_norm = np.linalg.pinv(design) @ data.targets
    gd = fit_scratch(data, space, LearnerConfig(GD, max_iters=50_000, tol=1e-14))
    np.testing.assert_allclose(gd.theta, min_norm, atol=1e-8)
    assert np.max(np.abs(space.predict(min_norm, x) - truth(x))) > 0.1


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(13)
    space = fourier_space(3)
    worst = 0.0
    for i in range(100):
        data = sample_dataset(sinusoid(*rng.uniform([0.5, 0.5, -3, -1], [2, 3, 3, 1])), 15, 0.1, i)
        theta = rng.normal(size=space.dim)
        l2 = float(rng.choice([0.0, 0.1]))
        grad = mse_gradient(theta, data, space, l2)
        fd = np.empty_like(theta)
        for j in range(space.dim):
            e = np.zeros_like(theta)
            e[j] = 1e-6
            fd[j] = (mse_loss(theta + e, data, space, l2) - mse_loss(theta - e, data, space, l2)) / 2e-6
        worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(grad))
    assert worst <= 1e-5


def test_fit_result_round_trip():
    res = fit_scratch(sample_dataset(sinusoid(), 10, 0.1, 1), fourier_space(1), LearnerConfig(GD, max_iters=5))
    back = FitResult.from_dict(res.to_dict())
    assert back.to_dict() == res.to_dict()
    assert res.curve_csv().splitlines()[0] == "iter,loss"
    assert len(res.curve_csv().splitlines()) == len(res.loss_curve) + 1


def test_equivariance_translation_example(sin_task):
    space = sin_space()
    rep = check_equivariance(space, parameter_action(space, "translation"), sin_task, translation(2.0))
    assert rep.passed and rep.param_gap <= 1e-9
    assert rep.theta_g[0] - rep.theta_f[0] == pytest.approx(2.0, abs=1e-12)


def test_equivariance_identity_gap_zero(sin_task):
    space = fourier_space(2)
    for fam in ("translation", "affine"):
        rep = check_equivariance(space, parameter_action(space, fam), sin_task, identity(GroupFamily.parse(fam)))
        assert rep.param_gap == 0.0


def test_equivariance_affine_example(sin_task):
    space = sin_space()
    rep = check_equivariance(space, parameter_action(space, "affine"), sin_task, affine(1, 2))
    np.testing.assert_allclose(rep.theta_g, [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(parameter_action(space, "affine")(affine(1, 2), rep.theta_f), [1.0, 2.0], atol=1e-12)
    assert rep.passed


@pytest.mark.parametrize("family", ["translation", "affine"])
def test_equivariance_with_ridge(family):
    space = fourier_space(3)
    rng = np.random.default_rng(4)
    action = parameter_action(space, family)
    for _ in range(10):
        f = sinusoid(1.0, 2.0, rng.uniform(-3, 3), 0.2)
        rep = check_equivariance(space, action, f, random_element(GroupFamily.parse(family), rng, 3.0),
                                 LearnerConfig(l2=0.1), 30, 1e-9)
        assert rep.passed


@pytest.mark.parametrize("family", ["translation", "affine"])
def test_parameter_action_homomorphism(family):
    fam = GroupFamily.parse(family)
    action = parameter_action(fourier_space(2), fam)
    rng = np.random.default_rng(6)
    for _ in range(1000):
        g1, g2 = random_element(fam, rng), random_element(fam, rng)
        theta = rng.normal(size=5)
        assert homomorphism_gap(action, g1, g2, theta) <= 1e-9
        assert identity_gap(action, theta) == 0.0


def test_partition_must_cover():
    with pytest.raises(ValueError):
        fourier_space(1).with_partition([0], [0, 1])
