"""Boltzmann targets, KL divergences and quadrature on the action interval.

Continuous distributions are duck-typed: anything with a vectorised
``log_density(a)`` works, and Monte-Carlo integration additionally needs
``sample(n, rng)``. Discrete distributions are plain probability vectors.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import (
    IntegrationError,
    KappaDomainError,
    KlUndefinedError,
    LogOfZeroError,
    RenyiUndefinedError,
    TemperatureDomainError,
)

KL_FLOOR = 1e-300
KL_FLOOR_MASS = 1e-12
MASS_SLACK = 1e-3


class Density(Protocol):
    def log_density(self, a: np.ndarray) -> np.ndarray: ...


@functools.lru_cache(maxsize=32)
def _open_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Interior Chebyshev extrema of the n-point closed rule, weighted so that the
    # open rule is exact on polynomials (Fejer's second rule).
    big_n = n - 1
    k = np.arange(1, big_n)
    theta = k * np.pi / big_n
    j = np.arange(1, big_n // 2 + 1)
    odd = 2 * j - 1
    series = np.sin(np.outer(theta, odd)) @ (1.0 / odd)
    w = 4.0 * np.sin(theta) / big_n * series
    x = np.cos(theta)
    order = np.argsort(x)
    x, w = x[order], w[order]
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def clenshaw_curtis(n: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1] from the n-point Chebyshev grid, endpoints dropped.

    Returns ``n - 2`` interior nodes in increasing order.
    """
    if n < 3:
        raise ValueError("clenshaw_curtis needs n >= 3")
    return _open_rule(int(n))


@dataclass(frozen=True)
class Integrator:
    """Integration scheme over a sub-interval of [-1, 1]."""

    scheme: str = "clenshaw-curtis"
    n: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("clenshaw-curtis", "monte-carlo"):
            raise ValueError(f"unknown integration scheme {self.scheme!r}")

    @classmethod
    def monte_carlo(cls, n_samples: int, seed: int = 0) -> "Integrator":
        return cls("monte-carlo", n_samples, seed)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def nodes_weights(self, lo: float = -1.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * (hi - lo)
        if self.scheme == "clenshaw-curtis":
            x, w = clenshaw_curtis(self.n)
            return lo + half * (x + 1.0), half * w
        x = self.rng().uniform(lo, hi, size=self.n)
        return x, np.full(self.n, (hi - lo) / self.n)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray], lo: float = -1.0, hi: float = 1.0):
        x, w = self.nodes_weights(lo, hi)
        return np.asarray(f(x)) @ w


DEFAULT_INTEGRATOR = Integrator()


def _require_tau(tau: float):
    if not tau > 0:
        raise TemperatureDomainError(f"soft target needs tau > 0, got {tau}")


def log_boltzmann(q: np.ndarray, tau: float) -> np.ndarray:
    """Log-probabilities of the Boltzmann policy along the last axis."""
    _require_tau(tau)
    q = np.asarray(q, dtype=float)
    z = (q - q.max(axis=-1, keepdims=True)) / tau
    return z - logsumexp(z, axis=-1, keepdims=True)


def boltzmann_probs(q: np.ndarray, tau: float) -> np.ndarray:
    return np.exp(log_boltzmann(q, tau))


@dataclass
class BoltzmannTarget:
    """Density proportional to exp(Q(s, a) / tau).

    ``scores`` is either a table ``[state][action]`` or a callable ``(s, a) -> Q``
    evaluated on arrays of continuous actions in (-1, 1).
    """

    scores: np.ndarray | Callable[[int, np.ndarray], np.ndarray]
    tau: float
    integrator: Integrator = DEFAULT_INTEGRATOR
    _log_z: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        _require_tau(self.tau)
        if not callable(self.scores):
            self.scores = np.atleast_2d(np.asarray(self.scores, dtype=float))

    @property
    def discrete(self) -> bool:
        return not callable(self.scores)

    def log_partition(self, s: int) -> float:
        if s not in self._log_z:
            if self.discrete:
                self._log_z[s] = float(logsumexp(self.scores[s] / self.tau))
            else:
                x, w = self.integrator.nodes_weights()
                self._log_z[s] = float(logsumexp(self.scores(s, x) / self.tau, b=w))
        return self._log_z[s]

    def log_density(self, s: int, a) -> np.ndarray:
        q = self.scores[s][a] if self.discrete else self.scores(s, np.asarray(a, dtype=float))
        return np.asarray(q) / self.tau - self.log_partition(s)

    def probs(self, s: int) -> np.ndarray:
        if not self.discrete:
            raise TypeError("probs() is only defined for discrete targets")
        return boltzmann_probs(self.scores[s], self.tau)

    def at(self, s: int):
        """Distribution at one state, usable as an argument to ``kl``."""
        if self.discrete:
            return self.probs(s)
        return _StateSlice(self, s)


@dataclass(frozen=True)
class _StateSlice:
    target: BoltzmannTarget
    s: int

    def log_density(self, a):
        return self.target.log_density(self.s, a)


def boltzmann_density(target: BoltzmannTarget, s: int, a) -> np.ndarray:
    return np.exp(target.log_density(s, a))


def entropy_regularized_objective(p, q_scores, tau: float, integrator: Integrator = DEFAULT_INTEGRATOR) -> float:
    """E_p[Q - tau log p] for a probability vector or a continuous density."""
    if isinstance(p, np.ndarray) or isinstance(p, (list, tuple)):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q_scores, dtype=float)
        if tau == 0:
            return float(p @ q)
        return float(p @ q - tau * xlogy(p, p).sum())
    x, w = integrator.nodes_weights()
    logp = p.log_density(x)
    dens = np.exp(logp)
    if tau > 0 and np.any(~np.isfinite(logp) & (dens > 0)):
        raise LogOfZeroError("density has zero mass at a quadrature node")
    return float(w @ (dens * (q_scores(x) - tau * logp)))


def kl_with_flag(p, q, integrator: Integrator = DEFAULT_INTEGRATOR) -> tuple[float, bool]:
    """KL(p || q) plus a flag telling whether the density floor was used."""
    if not hasattr(p, "log_density"):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        bad = (p > 0) & (q <= 0)
        if np.any(bad & (p >= KL_FLOOR_MASS)):
            raise KlUndefinedError("p has mass where q is zero")
        floored = bool(np.any(bad))
        q_safe = np.where(bad, KL_FLOOR, q)
        mask = p > 0
        val = np.sum(p[mask] * (np.log(p[mask]) - np.log(q_safe[mask])))
        return float(val), floored
    if integrator.scheme == "monte-carlo":
        value, _ = kl_monte_carlo(p, q, integrator)
        return value, False
    x, w = integrator.nodes_weights()
    logp = p.log_density(x)
    logq = q.log_density(x)
    dens = np.exp(logp)
    bad = (dens > 0) & ~np.isfinite(logq)
    if np.any(bad & (dens >= KL_FLOOR_MASS)):
        raise KlUndefinedError("p has mass where q is zero")
    logq = np.where(bad, np.log(KL_FLOOR), logq)
    return float(w @ (dens * (logp - logq))), bool(np.any(bad))


def kl(p, q, integrator: Integrator = DEFAULT_INTEGRATOR) -> float:
    return kl_with_flag(p, q, integrator)[0]


def kl_monte_carlo(p, q, integrator: Integrator) -> tuple[float, float]:
    """Sample-mean estimate of KL(p || q) with draws from p, and its standard error."""
    a = p.sample(integrator.n, integrator.rng())
    ratio = p.log_density(a) - q.log_density(a)
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(len(ratio)))


def renyi_inf(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((p > 0) != (q > 0)):
        raise RenyiUndefinedError("supports differ")
    mask = p > 0
    return float(np.max(np.log(p[mask]) - np.log(q[mask])))


def kappa(t: float) -> float:
    """(t log t + 1 - t) / (t - 1 - log t), defined for t > 0, t != 1."""
    if not t > 0 or t == 1:
        raise KappaDomainError(f"kappa undefined at t={t}")
    x = t - 1.0
    if abs(x) < 1e-4:
        # series about t = 1 to dodge cancellation
        return 1.0 + x / 3.0 - x * x / 9.0
    lg = np.log1p(x)
    return float((t * lg - x) / (x - lg))


def total_variation(p, q) -> float:
    """Sum of absolute differences, without the conventional factor one half."""
    return float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def interval_masses(density: Density, edges, integrator: Integrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Probability of each interval ``[edges[k], edges[k+1]]`` under ``density``."""
    masses = np.array(
        [integrator.integrate(lambda x: np.exp(density.log_density(x)), lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    )
    if abs(masses.sum() - 1.0) > MASS_SLACK:
        raise IntegrationError(f"density integrates to {masses.sum():.6f}")
    return masses
