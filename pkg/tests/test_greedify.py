from __future__ import annotations

import math

import numpy as np
import pytest

from klgreed.errors import NotDifferentiableError, TemperatureDomainError
from klgreed.greedify import (
    HARD_FKL,
    HARD_RKL,
    SOFT_FKL,
    SOFT_RKL,
    VARIANTS,
    KlVariant,
    grad_all_actions,
    grad_fkl_wis,
    grad_reparam,
    grad_sampled,
    hard_limit_check,
    loss,
    loss_surface,
    wis_weights,
)
from klgreed.mdp import bimodal_bandit
from klgreed.policy import SoftmaxPolicy, SquashedGaussianPolicy, rng_stream, sample, softplus_inv
from klgreed.target import boltzmann_probs


def fd_loss(variant, policy, q, tau, s, h=1e-6):
    base = policy.params()
    out = np.zeros_like(base)
    for i in range(len(base)):
        e = np.zeros_like(base)
        e[i] = h
        out[i] = (loss(variant, policy.with_params(base + e), q, tau, s) - loss(variant, policy.with_params(base - e), q, tau, s)) / (2 * h)
    return out


def within(mean, target, se, k=3.0, floor=1e-12):
    return np.all(np.abs(mean - target) <= k * se + floor)


# ---------------------------------------------------------------- variants


def test_variant_names_and_tau_domain():
    assert KlVariant.from_name("rkl", 0.0) == HARD_RKL
    assert KlVariant.from_name("fkl", 0.1) == SOFT_FKL
    assert KlVariant.from_name("hard_fkl") == HARD_FKL
    with pytest.raises(ValueError):
        KlVariant.from_name("jsd")
    with pytest.raises(TemperatureDomainError):
        loss(SOFT_RKL, SoftmaxPolicy.uniform(1, 2), np.zeros(2), 0.0, 0)
    # hard variants ignore tau
    assert loss(HARD_RKL, SoftmaxPolicy.uniform(1, 2), np.array([1.0, 0.0]), -3.0, 0) == -0.5


# ---------------------------------------------------------------- losses


def test_loss_examples():
    q, tau = np.array([0.3, -1.0, 0.8]), 0.5
    at_target = SoftmaxPolicy(np.atleast_2d(q / tau))
    assert abs(loss(SOFT_RKL, at_target, q, tau, 0)) < 1e-8
    assert abs(loss(SOFT_FKL, at_target, q, tau, 0)) < 1e-8
    assert loss(HARD_RKL, SoftmaxPolicy.uniform(1, 2), np.array([1.0, 0.0]), 0.0, 0) == pytest.approx(-0.5)
    assert loss(HARD_FKL, SoftmaxPolicy.uniform(1, 4), np.array([0.0, 2.0, 1.0, 0.0]), 0.0, 0) == pytest.approx(math.log(4))


def test_stationary_at_representable_target():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q, tau = rng.normal(size=5), rng.uniform(0.1, 2)
        pi = SoftmaxPolicy(np.atleast_2d(q / tau))
        for v in (SOFT_RKL, SOFT_FKL):
            assert np.max(np.abs(grad_all_actions(v, pi, q, tau, 0).partials)) < 1e-8


def test_hard_rkl_gradient_sign():
    g = grad_all_actions(HARD_RKL, SoftmaxPolicy.uniform(1, 2), np.array([1.0, 0.0]), 0.0, 0).partials
    # descending the loss gradient must raise logit 0
    assert -g[0] > 0 and g[0] == pytest.approx(-0.25)


# ---------------------------------------------------------------- gradients vs finite differences


def test_discrete_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for k in range(100):
        v = VARIANTS[k % 4]
        pi = SoftmaxPolicy(rng.normal(0, 1.5, (2, 4)))
        q = rng.normal(size=4)  # continuous draws: the argmax is unique
        s, tau = int(rng.integers(2)), float(rng.uniform(0.05, 2))
        g = grad_all_actions(v, pi, q, tau, s).partials
        fd = fd_loss(v, pi, q, tau, s)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd)), v.name


def test_continuous_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    q = bimodal_bandit().q
    for k in range(100):
        v = VARIANTS[k % 4]
        pi = SquashedGaussianPolicy([rng.uniform(-1, 1)], [rng.uniform(-2.0, 0.5)])
        tau = float(rng.uniform(0.1, 1.0))
        g = grad_all_actions(v, pi, q, tau, 0).partials
        fd = fd_loss(v, pi, q, tau, 0, h=1e-5)
        assert np.linalg.norm(g - fd) <= 1e-3 * max(1.0, np.linalg.norm(fd)), v.name


def test_hard_fkl_ties_are_random_but_average_out():
    pi = SoftmaxPolicy.uniform(1, 3)
    q = np.array([1.0, 1.0, 0.0])
    rng = np.random.default_rng(0)
    picks = [grad_all_actions(HARD_FKL, pi, q, 0.0, 0, rng=rng).partials for _ in range(4000)]
    assert {tuple(np.round(p, 6)) for p in picks} == {tuple(np.round(t, 6)) for t in ((-2 / 3, 1 / 3, 1 / 3), (1 / 3, -2 / 3, 1 / 3))}
    exact = grad_all_actions(HARD_FKL, pi, q, 0.0, 0).partials
    assert np.allclose(np.mean(picks, axis=0), exact, atol=0.03)


# ---------------------------------------------------------------- sampled estimators


def test_sampled_matches_all_actions():
    rng = np.random.default_rng(3)
    pi = SoftmaxPolicy(rng.normal(size=(1, 5)))
    q = rng.normal(size=5)
    for v, tau in ((SOFT_RKL, 0.5), (HARD_RKL, 0.0)):
        est = grad_sampled(v, pi, q, tau, 0, 100_000, rng_stream(4))
        exact = grad_all_actions(v, pi, q, tau, 0).partials
        assert within(est.partials, exact, est.stderr)


def test_sampled_baseline_invariance():
    rng = np.random.default_rng(5)
    pi = SoftmaxPolicy(rng.normal(size=(1, 5)))
    q = rng.normal(size=5)
    with_v = grad_sampled(HARD_RKL, pi, q, 0.0, 0, 100_000, rng_stream(6))
    without = grad_sampled(HARD_RKL, pi, q, 0.0, 0, 100_000, rng_stream(7), baseline=None)
    se = np.sqrt(with_v.stderr**2 + without.stderr**2)
    assert within(with_v.partials, without.partials, se)


def test_sampled_is_reproducible():
    pi = SoftmaxPolicy.uniform(1, 3)
    q = np.array([0.1, 0.5, -0.2])
    a = grad_sampled(SOFT_RKL, pi, q, 0.3, 0, 1, rng_stream(9)).partials
    b = grad_sampled(SOFT_RKL, pi, q, 0.3, 0, 1, rng_stream(9)).partials
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        grad_sampled(SOFT_FKL, pi, q, 0.3, 0, 1, rng_stream(9))


def test_reparam_matches_quadrature():
    bandit = bimodal_bandit()
    pi = SquashedGaussianPolicy([0.2], [-0.5])
    for v, tau in ((SOFT_RKL, 0.1), (HARD_RKL, 0.0)):
        est = grad_reparam(v, pi, bandit.q, tau, 0, 100_000, rng_stream(10), dq_fn=bandit.dq)
        exact = grad_all_actions(v, pi, bandit.q, tau, 0).partials
        assert within(est.partials, exact, est.stderr, floor=1e-4)


def test_reparam_deterministic_limit():
    bandit = bimodal_bandit()
    mu = 0.3
    pi = SquashedGaussianPolicy([mu], [float(softplus_inv(1e-7))])
    est = grad_reparam(HARD_RKL, pi, bandit.q, 0.0, 0, 10, rng_stream(0), dq_fn=bandit.dq)
    t = math.tanh(mu)
    assert est.partials[0] == pytest.approx(-float(bandit.dq(t)) * (1 - t * t), rel=1e-5)


def test_reparam_needs_derivative_and_is_reproducible():
    pi = SquashedGaussianPolicy([0.0], [0.0])
    with pytest.raises(NotDifferentiableError):
        grad_reparam(SOFT_RKL, pi, lambda a: a, 0.1, 0, 5, rng_stream(0))
    b = bimodal_bandit()
    x = grad_reparam(SOFT_RKL, pi, b.q, 0.1, 0, 7, rng_stream(2), dq_fn=b.dq).partials
    y = grad_reparam(SOFT_RKL, pi, b.q, 0.1, 0, 7, rng_stream(2), dq_fn=b.dq).partials
    assert np.array_equal(x, y)


def test_wis_weights_normalised():
    rng = np.random.default_rng(11)
    pi = SoftmaxPolicy(rng.normal(size=(1, 5)))
    q = rng.normal(size=5)
    for _ in range(50):
        a = sample(pi, 0, rng, 20)
        w = wis_weights(pi, 0, a, q[a], 0.3)
        assert abs(w.sum() - 1.0) < 1e-12


def test_wis_matches_all_actions():
    rng = np.random.default_rng(12)
    pi = SoftmaxPolicy(rng.normal(size=(1, 5)))
    q = rng.normal(size=5)
    tau = 0.5
    ests = np.array([grad_fkl_wis(pi, q, tau, 0, 10_000, rng_stream(13, k)).partials for k in range(200)])
    exact = grad_all_actions(SOFT_FKL, pi, q, tau, 0).partials
    se = ests.std(0, ddof=1) / math.sqrt(len(ests))
    assert within(ests.mean(0), exact, se)


def test_wis_at_target_has_equal_weights():
    q, tau = np.array([0.2, -0.4, 1.0]), 0.7
    pi = SoftmaxPolicy(np.atleast_2d(q / tau))
    a = sample(pi, 0, rng_stream(1), 50)
    assert np.allclose(wis_weights(pi, 0, a, q[a], tau), 1 / 50)
    ests = np.array([grad_fkl_wis(pi, q, tau, 0, 1000, rng_stream(2, k)).partials for k in range(100)])
    se = ests.std(0, ddof=1) / 10
    assert within(ests.mean(0), 0.0, se)


# ---------------------------------------------------------------- convexity and limits


def test_fkl_convex_in_logits():
    rng = np.random.default_rng(14)
    for _ in range(100):
        q, tau = rng.normal(size=4), float(rng.uniform(0.1, 2))
        t1, t2 = rng.normal(0, 2, (2, 1, 4))
        f1 = loss(SOFT_FKL, SoftmaxPolicy(t1), q, tau, 0)
        f2 = loss(SOFT_FKL, SoftmaxPolicy(t2), q, tau, 0)
        for lam in np.linspace(0, 1, 11):
            mix = loss(SOFT_FKL, SoftmaxPolicy(lam * t1 + (1 - lam) * t2), q, tau, 0)
            assert mix <= lam * f1 + (1 - lam) * f2 + 1e-9


def test_hard_limit_unique_maximizer():
    pi = SoftmaxPolicy(np.array([[0.3, -0.2, 0.5]]))
    q = np.array([1.0, 0.0, -0.5])
    rep = hard_limit_check(pi, q, 0, [1, 0.1, 0.01, 0.001])
    assert rep.decreasing and rep.rkl_residuals[-1] < 1e-3
    assert rep.fkl_target_on_maximizers[-1, 0] >= 0.999


def test_hard_limit_tied_maximizers():
    q = np.array([1.0, 1.0, 0.0])
    rep = hard_limit_check(SoftmaxPolicy.uniform(1, 3), q, 0, [1, 0.1, 0.01, 0.001])
    assert np.allclose(rep.fkl_target_on_maximizers[-1], 0.5, atol=1e-9)
    assert np.allclose(boltzmann_probs(q, 1e-3)[:2], 0.5)


def test_loss_surface_shape_and_values():
    b = bimodal_bandit()
    mus, sigmas = np.linspace(-1, 1, 5), np.array([0.2, 0.5])
    surf = loss_surface(SOFT_RKL, 0.4, b.q, mus, sigmas)
    assert surf.shape == (2, 5)
    pi = SquashedGaussianPolicy([mus[3]], [float(softplus_inv(0.5))])
    assert surf[1, 3] == pytest.approx(loss(SOFT_RKL, pi, b.q, 0.4, 0), rel=1e-10)
