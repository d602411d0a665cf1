"""Tabular softmax and tanh-squashed Gaussian policies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, softmax, xlogy

from .errors import ActionOutOfRangeError
from .target import DEFAULT_INTEGRATOR, Integrator

ATANH_CLAMP = 1.0 - 1e-7
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for ``seed`` and an optional path of sub-stream keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class GradientEstimate:
    """Flat partial derivatives aligned with a policy's parameter vector."""

    partials: np.ndarray
    estimator: str = "all-actions"
    n_samples: int = 0
    state: int | None = None
    stderr: np.ndarray | None = None

    def local(self, policy) -> np.ndarray:
        """Slice of ``partials`` that belongs to ``self.state``."""
        return self.partials.reshape(policy.n_states, -1)[self.state]


@dataclass(frozen=True)
class SoftmaxPolicy:
    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits", np.atleast_2d(np.asarray(self.logits, dtype=float)))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    @property
    def n_params(self) -> int:
        return self.logits.size

    def probs(self, s: int | None = None) -> np.ndarray:
        z = self.logits if s is None else self.logits[s]
        return softmax(z, axis=-1)

    def log_probs(self, s: int | None = None) -> np.ndarray:
        z = self.logits if s is None else self.logits[s]
        return log_softmax(z, axis=-1)

    def params(self) -> np.ndarray:
        return self.logits.ravel().copy()

    def with_params(self, flat) -> "SoftmaxPolicy":
        return SoftmaxPolicy(np.asarray(flat, dtype=float).reshape(self.logits.shape))


@dataclass(frozen=True)
class SquashedGaussian:
    """One state's action density: a = tanh(u), u ~ N(mu, sigma^2)."""

    mu: float
    sigma: float

    def log_density(self, a):
        return squashed_log_density(a, self.mu, self.sigma)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.tanh(self.mu + self.sigma * rng.standard_normal(n))


@dataclass(frozen=True)
class SquashedGaussianPolicy:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_hat, dtype=float))
        sh = np.atleast_1d(np.asarray(self.sigma_hat, dtype=float))
        if mu.shape != sh.shape:
            raise ValueError("mu_hat and sigma_hat must have the same shape")
        object.__setattr__(self, "mu_hat", mu)
        object.__setattr__(self, "sigma_hat", sh)
        object.__setattr__(self, "sigma", softplus(sh))

    @property
    def n_states(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def n_params(self) -> int:
        return 2 * self.n_states

    def at(self, s: int) -> SquashedGaussian:
        return SquashedGaussian(float(self.mu_hat[s]), float(self.sigma[s]))

    def params(self) -> np.ndarray:
        return np.column_stack([self.mu_hat, self.sigma_hat]).ravel()

    def with_params(self, flat) -> "SquashedGaussianPolicy":
        flat = np.asarray(flat, dtype=float).reshape(-1, 2)
        return SquashedGaussianPolicy(flat[:, 0], flat[:, 1])


Policy = SoftmaxPolicy | SquashedGaussianPolicy


def _atanh(a):
    return np.arctanh(np.clip(a, -ATANH_CLAMP, ATANH_CLAMP))


def squashed_log_density(a, mu, sigma):
    """Log-density of tanh(N(mu, sigma^2)) at a; broadcasts over all arguments."""
    a = np.asarray(a, dtype=float)
    u = _atanh(a)
    z = (u - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI - np.log1p(-a) - np.log1p(a)


def squashed_score(a, mu, sigma, sigma_hat):
    """d log p(a) / d(mu_hat, sigma_hat) at fixed a, as two broadcast arrays."""
    u = _atanh(np.asarray(a, dtype=float))
    diff = u - mu
    d_mu = diff / sigma**2
    d_sigma = (diff**2 / sigma**3 - 1.0 / sigma) * expit(sigma_hat)
    return d_mu, d_sigma


def _check_action(policy, a):
    if isinstance(policy, SquashedGaussianPolicy):
        if np.any(np.abs(np.asarray(a)) >= 1.0):
            raise ActionOutOfRangeError(f"squashed actions must lie in (-1, 1), got {a}")
    else:
        a_arr = np.asarray(a)
        if np.any((a_arr < 0) | (a_arr >= policy.n_actions)):
            raise ActionOutOfRangeError(f"action index out of range: {a}")


def log_prob(policy: Policy, s: int, a):
    _check_action(policy, a)
    if isinstance(policy, SoftmaxPolicy):
        return policy.log_probs(s)[a]
    return squashed_log_density(a, policy.mu_hat[s], policy.sigma[s])


def sample(policy: Policy, s: int, rng: np.random.Generator, size: int | None = None):
    if isinstance(policy, SoftmaxPolicy):
        cdf = np.cumsum(policy.probs(s))
        u = rng.random(size)
        idx = np.searchsorted(cdf, u * cdf[-1], side="right")
        return np.minimum(idx, policy.n_actions - 1)
    z = rng.standard_normal(size)
    return np.tanh(policy.mu_hat[s] + policy.sigma[s] * z)


def entropy(policy: Policy, s: int, integrator: Integrator | None = None) -> float:
    if isinstance(policy, SoftmaxPolicy):
        p = policy.probs(s)
        return float(-xlogy(p, p).sum())
    integrator = integrator or DEFAULT_INTEGRATOR
    x, w = integrator.nodes_weights()
    logp = squashed_log_density(x, policy.mu_hat[s], policy.sigma[s])
    return float(-w @ (np.exp(logp) * logp))


def local_grad_log_prob(policy: Policy, s: int, a) -> np.ndarray:
    """Gradient of log pi(a|s) w.r.t. state s's parameters; trailing axis is the parameter."""
    if isinstance(policy, SoftmaxPolicy):
        a = np.asarray(a)
        g = -np.broadcast_to(policy.probs(s), a.shape + (policy.n_actions,)).copy()
        np.add.at(g.reshape(-1, policy.n_actions), (np.arange(a.size), a.ravel()), 1.0)
        return g
    d_mu, d_sig = squashed_score(a, policy.mu_hat[s], policy.sigma[s], policy.sigma_hat[s])
    return np.stack([d_mu, d_sig], axis=-1)


def embed(policy: Policy, s: int, local: np.ndarray) -> np.ndarray:
    """Place a per-state gradient block into a full flat parameter vector."""
    full = np.zeros((policy.n_states, policy.n_params // policy.n_states))
    full[s] = local
    return full.ravel()


def grad_log_prob(policy: Policy, s: int, a) -> GradientEstimate:
    _check_action(policy, a)
    return GradientEstimate(embed(policy, s, local_grad_log_prob(policy, s, a)), "analytic", 1, s)


def params_to_csv_row(policy: Policy) -> str:
    return ",".join(repr(float(x)) for x in policy.params())


def policy_from_csv_row(row: str, template: Policy) -> Policy:
    return template.with_params([float(x) for x in row.strip().split(",")])
