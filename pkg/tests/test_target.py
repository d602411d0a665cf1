from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from klgreed.errors import KappaDomainError, KlUndefinedError, RenyiUndefinedError, TemperatureDomainError
from klgreed.policy import SquashedGaussian
from klgreed.target import (
    BoltzmannTarget,
    Integrator,
    boltzmann_density,
    boltzmann_probs,
    clenshaw_curtis,
    entropy_regularized_objective,
    interval_masses,
    kappa,
    kl,
    kl_monte_carlo,
    kl_with_flag,
    log_boltzmann,
    renyi_inf,
    total_variation,
)

finite_q = arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50))


def dirichlet_pairs(n, k=5, seed=0):
    rng = np.random.default_rng(seed)
    return [(rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))) for _ in range(n)]


# ---------------------------------------------------------------- quadrature


def test_cc_weights_and_polynomials():
    x, w = clenshaw_curtis(1024)
    assert len(x) == 1022  # endpoints dropped
    assert np.all(np.diff(x) > 0) and np.all(np.abs(x) < 1)
    assert abs(w.sum() - 2.0) < 1e-10
    assert abs(w @ x**2 - 2.0 / 3.0) < 1e-10
    assert abs(w @ np.exp(x) - (math.e - 1 / math.e)) < 1e-8


def test_cc_small_rule_and_affine_map():
    integ = Integrator(n=33)
    assert abs(integ.integrate(lambda a: a**3 + 1.0, 0.0, 2.0) - 6.0) < 1e-10


def test_monte_carlo_integrator_is_seeded():
    a = Integrator.monte_carlo(1000, seed=3)
    b = Integrator.monte_carlo(1000, seed=3)
    assert a.integrate(np.exp) == b.integrate(np.exp)
    assert abs(a.integrate(np.exp) - (math.e - 1 / math.e)) < 0.1


# ---------------------------------------------------------------- boltzmann


def test_boltzmann_examples():
    assert np.allclose(boltzmann_probs(np.full(4, 3.0), 0.7), 0.25)
    tau = 0.3
    assert np.allclose(boltzmann_probs(np.array([0.0, tau * math.log(3)]), tau), [0.25, 0.75], atol=1e-12)
    assert np.allclose(boltzmann_probs(np.array([1.0, -2.0, 0.5]), 1e6), 1 / 3, atol=1e-5)


def test_boltzmann_rejects_nonpositive_tau():
    with pytest.raises(TemperatureDomainError):
        boltzmann_probs(np.zeros(2), 0.0)
    with pytest.raises(TemperatureDomainError):
        BoltzmannTarget(np.zeros((1, 2)), -1.0)


@settings(max_examples=200, deadline=None)
@given(finite_q, st.floats(1e-3, 100), st.floats(-1e3, 1e3))
def test_boltzmann_shift_invariance(q, tau, c):
    p = boltzmann_probs(q, tau)
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12
    assert np.max(np.abs(p - boltzmann_probs(q + c, tau))) < 1e-10


@settings(max_examples=100, deadline=None)
@given(finite_q, st.floats(1e-3, 10))
def test_log_boltzmann_matches_direct(q, tau):
    direct = np.array([mpmath.mpf(v) / tau for v in q])
    logz = mpmath.log(sum(mpmath.exp(v) for v in direct))
    expect = np.array([float(v - logz) for v in direct])
    assert np.allclose(log_boltzmann(q, tau), expect, atol=1e-9)


def test_continuous_target_density_and_partition_cache():
    target = BoltzmannTarget(lambda s, a: np.sin(3 * a) + s, 0.2)
    x, w = Integrator().nodes_weights()
    for s in (0, 1):
        assert abs(w @ boltzmann_density(target, s, x) - 1.0) < 1e-6
    assert target.log_partition(1) == pytest.approx(target.log_partition(0) + 1 / 0.2)


def test_discrete_target_table():
    q = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    t = BoltzmannTarget(q, 1.0)
    assert np.allclose(t.probs(1), 1 / 3)
    assert np.allclose(t.at(0), boltzmann_probs(q[0], 1.0))


# ---------------------------------------------------------------- objective


def test_objective_examples():
    q = np.array([1.0, -1.0, 0.5])
    p = np.array([0.2, 0.3, 0.5])
    assert entropy_regularized_objective(p, q, 0.0) == pytest.approx(p @ q)
    assert entropy_regularized_objective(np.full(4, 0.25), np.full(4, 2.0), 0.5) == pytest.approx(2 + 0.5 * math.log(4))


def test_boltzmann_maximizes_objective():
    rng = np.random.default_rng(1)
    q = rng.uniform(-1, 1, 5)
    tau = 0.3
    best = entropy_regularized_objective(boltzmann_probs(q, tau), q, tau)
    for _ in range(100):
        other = boltzmann_probs(np.log(boltzmann_probs(q, tau)) + rng.normal(0, 0.5, 5), 1.0)
        assert entropy_regularized_objective(other, q, tau) <= best + 1e-12


# ---------------------------------------------------------------- kl


def test_kl_bernoulli_closed_forms():
    p, q = np.array([0.5, 0.5]), np.array([0.25, 0.75])
    assert kl(p, q) == pytest.approx(0.5 * math.log(4 / 3), abs=1e-12)
    assert kl(q, p) == pytest.approx(0.25 * math.log(0.5) + 0.75 * math.log(1.5), abs=1e-12)
    assert kl(q, p) == pytest.approx(0.1308, abs=1e-4)
    assert kl(p, p) == 0.0


def test_kl_absolute_continuity():
    with pytest.raises(KlUndefinedError):
        kl(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    value, floored = kl_with_flag(np.array([1.0, 1e-13]) / (1 + 1e-13), np.array([1.0, 0.0]))
    assert floored and np.isfinite(value)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_nonnegative_and_pinsker(seed):
    (p, q), = dirichlet_pairs(1, seed=seed)
    d = kl(p, q)
    assert d >= 0
    assert total_variation(p, q) <= math.sqrt(2 * d) + 1e-12


def test_continuous_kl_matches_gaussian_limit():
    p = SquashedGaussian(0.1, 0.3)
    q = SquashedGaussian(-0.2, 0.4)
    # KL is invariant under the shared tanh map, so the Gaussian closed form applies
    closed = math.log(0.4 / 0.3) + (0.3**2 + 0.3**2) / (2 * 0.4**2) - 0.5
    assert kl(p, q) == pytest.approx(closed, abs=1e-6)
    assert abs(kl(p, p)) < 1e-6


def test_monte_carlo_kl_agrees_with_quadrature():
    rng = np.random.default_rng(5)
    for i in range(20):
        p = SquashedGaussian(rng.uniform(-1, 1), rng.uniform(0.2, 1.0))
        if i % 2:
            q = SquashedGaussian(rng.uniform(-1, 1), rng.uniform(0.2, 1.0))
        else:
            q = BoltzmannTarget(lambda s, a: np.cos(2 * a), rng.uniform(0.3, 2.0)).at(0)
        mean, se = kl_monte_carlo(p, q, Integrator.monte_carlo(100_000, seed=i))
        assert abs(mean - kl(p, q)) < 3 * se + 1e-9


# ---------------------------------------------------------------- renyi, kappa, tv


def test_renyi_examples():
    assert renyi_inf(np.array([0.9, 0.1]), np.array([0.5, 0.5])) == pytest.approx(math.log(1.8))
    p = np.array([0.2, 0.8])
    assert renyi_inf(p, p) == 0.0
    with pytest.raises(RenyiUndefinedError):
        renyi_inf(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    for p, q in dirichlet_pairs(100, seed=9):
        assert renyi_inf(p, q) >= kl(p, q) - 1e-12


def test_kappa_values():
    assert kappa(math.e) == pytest.approx(1 / (math.e - 2))
    assert kappa(2) < kappa(3) < kappa(10)
    assert abs(kappa(1e8) / math.log(1e8) - 1) < 0.15
    for bad in (1.0, 0.0, -2.0):
        with pytest.raises(KappaDomainError):
            kappa(bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1e6).filter(lambda t: abs(t - 1) > 1e-9))
def test_kappa_matches_high_precision(t):
    with mpmath.workdps(60):
        mt = mpmath.mpf(t)
        expect = (mt * mpmath.log(mt) + 1 - mt) / (mt - 1 - mpmath.log(mt))
    assert kappa(t) == pytest.approx(float(expect), rel=1e-6)


def test_total_variation_examples():
    assert total_variation(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2.0
    p = np.array([0.3, 0.7])
    assert total_variation(p, p) == 0.0


def test_interval_masses():
    m = interval_masses(SquashedGaussian(0.0, 1.0), [-1.0, 0.0, 1.0])
    assert np.allclose(m, 0.5, atol=1e-9)
