"""KL greedification objectives and their gradient estimators.

Every gradient returned here is the gradient of the loss, so an optimizer
descends it directly. Discrete policies take ``q_scores`` as a vector over
actions; squashed-Gaussian policies take a callable ``Q(a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DegenerateWeightsError, NotDifferentiableError, TemperatureDomainError
from .policy import (
    GradientEstimate,
    SoftmaxPolicy,
    SquashedGaussianPolicy,
    embed,
    local_grad_log_prob,
    log_prob,
    sample,
    softplus_inv,
    squashed_log_density,
    squashed_score,
)
from .target import DEFAULT_INTEGRATOR, Integrator, boltzmann_probs, log_boltzmann

TIE_TOL = 1e-9


@dataclass(frozen=True)
class KlVariant:
    direction: str  # "forward" | "reverse"
    hard: bool = False

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"direction must be forward or reverse, got {self.direction!r}")

    @classmethod
    def from_name(cls, name: str, tau: float | None = None) -> "KlVariant":
        """``rkl``/``fkl`` pick hard or soft from tau; ``soft_*``/``hard_*`` are explicit."""
        short = {"rkl": "reverse", "fkl": "forward"}
        if name in short:
            return cls(short[name], hard=(tau == 0))
        kind, _, tail = name.partition("_")
        if kind not in ("soft", "hard") or tail not in short:
            raise ValueError(f"unknown KL variant {name!r}")
        return cls(short[tail], hard=(kind == "hard"))

    @property
    def name(self) -> str:
        return f"{'hard' if self.hard else 'soft'}_{'rkl' if self.direction == 'reverse' else 'fkl'}"

    def check_tau(self, tau: float):
        if not self.hard and not tau > 0:
            raise TemperatureDomainError(f"{self.name} needs tau > 0, got {tau}")


SOFT_RKL = KlVariant("reverse")
SOFT_FKL = KlVariant("forward")
HARD_RKL = KlVariant("reverse", True)
HARD_FKL = KlVariant("forward", True)
VARIANTS = (SOFT_RKL, SOFT_FKL, HARD_RKL, HARD_FKL)


def maximizer_mask(q: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q >= q.max(axis=-1, keepdims=True) - tol


# ------------------------------------------------------------------ discrete


def discrete_losses(variant: KlVariant, logp: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    """Per-row loss for softmax policies; ``logp`` and ``q`` share their last axis."""
    variant.check_tau(tau)
    p = np.exp(logp)
    if variant.hard:
        if variant.direction == "reverse":
            return -(p * q).sum(-1)
        mask = maximizer_mask(q)
        return -(np.where(mask, logp, 0.0).sum(-1) / mask.sum(-1))
    logb = log_boltzmann(q, tau)
    if variant.direction == "reverse":
        return (p * (logp - logb)).sum(-1)
    return (np.exp(logb) * (logb - logp)).sum(-1)


def discrete_logit_grads(
    variant: KlVariant, logp: np.ndarray, q: np.ndarray, tau: float, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Per-row loss gradient w.r.t. softmax logits.

    Hard FKL picks one maximizer at random when ``rng`` is given, otherwise it
    averages over all of them (the gradient of the tie-averaged loss).
    """
    variant.check_tau(tau)
    p = np.exp(logp)
    if variant.direction == "reverse":
        f = -q if variant.hard else logp - q / tau
        return p * (f - (p * f).sum(-1, keepdims=True))
    if not variant.hard:
        return p - boltzmann_probs(q, tau)
    mask = maximizer_mask(q)
    if rng is None:
        return p - mask / mask.sum(-1, keepdims=True)
    flat = mask.reshape(-1, mask.shape[-1])
    pick = np.zeros_like(flat, dtype=float)
    for i, row in enumerate(flat):
        idx = np.flatnonzero(row)
        pick[i, idx[rng.integers(len(idx))] if len(idx) > 1 else idx[0]] = 1.0
    return p - pick.reshape(mask.shape)


# ---------------------------------------------------------------- continuous


def _squash_terms(mu_hat, sigma_hat, x):
    mu = np.asarray(mu_hat, dtype=float)[:, None]
    sh = np.asarray(sigma_hat, dtype=float)[:, None]
    sigma = np.logaddexp(0.0, sh)
    logp = squashed_log_density(x[None, :], mu, sigma)
    d_mu, d_sig = squashed_score(x[None, :], mu, sigma, sh)
    return logp, d_mu, d_sig


def continuous_loss_and_grad(
    variant: KlVariant,
    mu_hat: np.ndarray,
    sigma_hat: np.ndarray,
    q_nodes: np.ndarray,
    tau: float,
    integrator: Integrator = DEFAULT_INTEGRATOR,
    greedy_actions: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature losses ``[S]`` and exact gradients ``[S, 2]`` of the discretised losses.

    ``q_nodes[s, i]`` is Q at the i-th integration node. ``greedy_actions`` (hard
    FKL only) is ``[S]`` or ``[S, K]``; by default the best nodes are used.
    """
    variant.check_tau(tau)
    x, w = integrator.nodes_weights()
    q_nodes = np.broadcast_to(np.asarray(q_nodes, dtype=float), (len(mu_hat), len(x)))
    if variant.hard and variant.direction == "forward":
        if greedy_actions is None:
            mask = maximizer_mask(q_nodes)
            targets = [x[m] for m in mask]
        else:
            try:
                ga = np.asarray(greedy_actions, dtype=float)
            except ValueError:  # ragged per-state sets
                ga = None
            if ga is not None and ga.ndim == 1:
                ga = ga[:, None]
            if ga is not None and ga.ndim == 2:
                mu = np.asarray(mu_hat, dtype=float)[:, None]
                sh = np.asarray(sigma_hat, dtype=float)[:, None]
                sigma = np.logaddexp(0.0, sh)
                d_mu, d_sig = squashed_score(ga, mu, sigma, sh)
                loss = -squashed_log_density(ga, mu, sigma).mean(-1)
                return loss, -np.stack([d_mu.mean(-1), d_sig.mean(-1)], axis=-1)
            targets = [np.atleast_1d(np.asarray(g, dtype=float)) for g in greedy_actions]
        loss = np.empty(len(mu_hat))
        grad = np.empty((len(mu_hat), 2))
        for s, a_star in enumerate(targets):
            mu, sh = mu_hat[s], sigma_hat[s]
            sigma = np.logaddexp(0.0, sh)
            loss[s] = -squashed_log_density(a_star, mu, sigma).mean()
            d_mu, d_sig = squashed_score(a_star, mu, sigma, sh)
            grad[s] = (-d_mu.mean(), -d_sig.mean())
        return loss, grad
    logp, d_mu, d_sig = _squash_terms(mu_hat, sigma_hat, x)
    p = np.exp(logp)
    if variant.direction == "reverse":
        if variant.hard:
            loss = -(p * q_nodes) @ w
            coef = -p * q_nodes
        else:
            logz = logsumexp(q_nodes / tau, b=w, axis=-1)
            f = logp - q_nodes / tau
            loss = (p * f) @ w + logz
            coef = p * (f + 1.0)
    else:
        logz = logsumexp(q_nodes / tau, b=w, axis=-1)
        logb = q_nodes / tau - logz[:, None]
        b = np.exp(logb)
        loss = (b * (logb - logp)) @ w
        coef = -b
    grad = np.stack([(coef * d_mu) @ w, (coef * d_sig) @ w], axis=-1)
    return loss, grad


# ---------------------------------------------------------------- public API


def _continuous_q_nodes(q_scores, integrator):
    x, _ = integrator.nodes_weights()
    return np.asarray(q_scores(x), dtype=float)[None, :]


def loss(
    variant: KlVariant,
    policy,
    q_scores,
    tau: float,
    s: int,
    integrator: Integrator = DEFAULT_INTEGRATOR,
    greedy_actions=None,
) -> float:
    if isinstance(policy, SoftmaxPolicy):
        return float(discrete_losses(variant, policy.log_probs(s), np.asarray(q_scores, dtype=float), tau))
    ga = None if greedy_actions is None else [np.atleast_1d(greedy_actions)]
    out, _ = continuous_loss_and_grad(
        variant, policy.mu_hat[s : s + 1], policy.sigma_hat[s : s + 1], _continuous_q_nodes(q_scores, integrator), tau, integrator, ga
    )
    return float(out[0])


def grad_all_actions(
    variant: KlVariant,
    policy,
    q_scores,
    tau: float,
    s: int,
    rng: np.random.Generator | None = None,
    integrator: Integrator = DEFAULT_INTEGRATOR,
    greedy_actions=None,
) -> GradientEstimate:
    """Exact loss gradient summed over all actions (quadrature for continuous policies)."""
    if isinstance(policy, SoftmaxPolicy):
        g = discrete_logit_grads(variant, policy.log_probs(s), np.asarray(q_scores, dtype=float), tau, rng)
        return GradientEstimate(embed(policy, s, g), "all-actions", 0, s)
    ga = None if greedy_actions is None else [np.atleast_1d(greedy_actions)]
    _, g = continuous_loss_and_grad(
        variant, policy.mu_hat[s : s + 1], policy.sigma_hat[s : s + 1], _continuous_q_nodes(q_scores, integrator), tau, integrator, ga
    )
    return GradientEstimate(embed(policy, s, g[0]), f"quadrature({integrator.n})", 0, s)


def _as_q_fn(q_fn):
    if callable(q_fn):
        return q_fn
    table = np.asarray(q_fn, dtype=float)
    return lambda a: table[a]


def _mean_and_stderr(per_sample: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = per_sample.shape[0]
    se = per_sample.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(per_sample.shape[1], np.inf)
    return per_sample.mean(axis=0), se


def state_value_baseline(policy, q_fn, tau: float, s: int) -> float:
    """Soft state value of a discrete policy: sum_a pi(a)(Q(a) - tau log pi(a))."""
    if not isinstance(policy, SoftmaxPolicy):
        return 0.0
    p = policy.probs(s)
    q = _as_q_fn(q_fn)(np.arange(policy.n_actions))
    logp = policy.log_probs(s)
    return float(p @ (q - tau * logp)) if tau > 0 else float(p @ q)


def grad_sampled(
    variant: KlVariant,
    policy,
    q_fn,
    tau: float,
    s: int,
    n: int,
    rng: np.random.Generator,
    baseline: float | str | None = "auto",
    use_advantage: bool = True,
) -> GradientEstimate:
    """Likelihood-ratio estimate of the reverse-KL gradient from ``n`` on-policy actions.

    ``baseline="auto"`` uses the exact soft state value for softmax policies and
    zero otherwise; ``use_advantage=False`` drops the baseline entirely.
    """
    if variant.direction != "reverse":
        raise ValueError("sampled likelihood-ratio updates are defined for reverse KL only")
    variant.check_tau(tau)
    q_fn = _as_q_fn(q_fn)
    if not use_advantage or baseline is None:
        v = 0.0
    elif baseline == "auto":
        v = state_value_baseline(policy, q_fn, tau, s)
    else:
        v = float(baseline)
    a = sample(policy, s, rng, n)
    adv = q_fn(a) - v
    score = local_grad_log_prob(policy, s, a)
    weight = adv if variant.hard else adv / tau - log_prob(policy, s, a)
    mean, se = _mean_and_stderr(-score * np.asarray(weight)[:, None])
    return GradientEstimate(embed(policy, s, mean), f"sampled({n})", n, s, embed(policy, s, se))


def reparam_terms(policy: SquashedGaussianPolicy, s: int, z: np.ndarray, q_fn, dq_fn, tau: float, hard: bool):
    """Per-sample reparameterised gradient terms ``[n, 2]`` for a = tanh(mu + sigma z)."""
    mu, sigma, sh = policy.mu_hat[s], policy.sigma[s], policy.sigma_hat[s]
    dsig = 1.0 / (1.0 + np.exp(-sh))
    u = mu + sigma * z
    a = np.tanh(u)
    da_du = 1.0 - a * a
    dq_du = np.asarray(dq_fn(a), dtype=float) * da_du
    dq = np.stack([dq_du, dq_du * z * dsig], axis=-1)
    if hard:
        return -dq
    # total derivative of log pi(a_theta): Gaussian part gives -1/sigma, Jacobian part 2 tanh(u) du
    dlogp = np.stack([2.0 * a, (-1.0 / sigma + 2.0 * a * z) * dsig], axis=-1)
    return dlogp - dq / tau


def grad_reparam(
    variant: KlVariant,
    policy: SquashedGaussianPolicy,
    q_fn,
    tau: float,
    s: int,
    n: int,
    rng: np.random.Generator,
    dq_fn=None,
) -> GradientEstimate:
    """Reparameterised reverse-KL gradient; ``dq_fn`` (or ``q_fn.derivative``) supplies dQ/da."""
    if variant.direction != "reverse":
        raise ValueError("reparameterised updates are defined for reverse KL only")
    if not isinstance(policy, SquashedGaussianPolicy):
        raise TypeError("reparameterisation needs a squashed-Gaussian policy")
    variant.check_tau(tau)
    dq_fn = dq_fn or getattr(q_fn, "derivative", None)
    if dq_fn is None:
        raise NotDifferentiableError("grad_reparam needs dQ/da")
    z = rng.standard_normal(n)
    mean, se = _mean_and_stderr(reparam_terms(policy, s, z, q_fn, dq_fn, tau, variant.hard))
    return GradientEstimate(embed(policy, s, mean), f"reparam({n})", n, s, embed(policy, s, se))


def wis_weights(policy, s: int, a, q_values, tau: float) -> np.ndarray:
    """Self-normalised weights proportional to exp(Q/tau) / pi(a)."""
    log_rho = np.asarray(q_values, dtype=float) / tau - log_prob(policy, s, a)
    if not np.all(np.isfinite(log_rho)) and not np.any(np.isfinite(log_rho)):
        raise DegenerateWeightsError("all importance weights vanished")
    rho = softmax(log_rho)
    if not np.isfinite(rho).all() or rho.sum() == 0:
        raise DegenerateWeightsError("all importance weights vanished")
    return rho


def grad_fkl_wis(policy, q_fn, tau: float, s: int, n: int, rng: np.random.Generator) -> GradientEstimate:
    """Weighted-importance-sampling forward-KL gradient from ``n`` on-policy actions.

    The standard error comes from the delta-method linearisation of the ratio estimator.
    """
    if not tau > 0:
        raise TemperatureDomainError("WIS forward-KL needs tau > 0")
    q_fn = _as_q_fn(q_fn)
    a = sample(policy, s, rng, n)
    rho = wis_weights(policy, s, a, q_fn(a), tau)
    score = local_grad_log_prob(policy, s, a)
    g = -(rho @ score)
    se = np.sqrt((rho[:, None] ** 2 * (-score - g) ** 2).sum(0))
    return GradientEstimate(embed(policy, s, g), f"wis({n})", n, s, embed(policy, s, se))


@dataclass(frozen=True)
class HardLimitReport:
    taus: np.ndarray
    rkl_residuals: np.ndarray
    fkl_target_on_maximizers: np.ndarray  # Boltzmann mass on each maximizer, [tau, K]
    decreasing: bool


def hard_limit_check(policy: SoftmaxPolicy, q_scores, s: int, tau_seq) -> HardLimitReport:
    """Compare tau * RKL_tau with its tau -> 0 limit ``HardRKL + max Q``.

    The finite-tau entropy part ``tau * sum pi log pi`` is moved to the limit
    side, leaving ``tau log sum exp(Q/tau) - max Q`` as the residual.
    """
    q = np.asarray(q_scores, dtype=float)
    logp = policy.log_probs(s)
    p = np.exp(logp)
    hard = float(discrete_losses(HARD_RKL, logp, q, 0.0))
    mask = maximizer_mask(q)
    res, mass = [], []
    for tau in tau_seq:
        soft = float(discrete_losses(SOFT_RKL, logp, q, tau))
        res.append(abs(tau * soft - (hard + q.max() + tau * float(p @ logp))))
        mass.append(boltzmann_probs(q, tau)[mask])
    res = np.array(res)
    return HardLimitReport(np.asarray(tau_seq, float), res, np.array(mass), bool(np.all(np.diff(res) <= 1e-15)))


def loss_surface(
    variant: KlVariant,
    tau: float,
    q_fn,
    mu_hats: np.ndarray,
    sigmas: np.ndarray,
    integrator: Integrator = DEFAULT_INTEGRATOR,
    greedy_action: float | None = None,
) -> np.ndarray:
    """Loss on a grid; entry ``[i, j]`` is at ``sigmas[i]`` and ``mu_hats[j]``."""
    x, _ = integrator.nodes_weights()
    q_nodes = np.asarray(q_fn(x), dtype=float)[None, :]
    out = np.empty((len(sigmas), len(mu_hats)))
    mu_hats = np.asarray(mu_hats, dtype=float)
    for i, sig in enumerate(sigmas):
        sh = np.full(len(mu_hats), float(softplus_inv(sig)))
        ga = None if greedy_action is None else np.full(len(mu_hats), greedy_action)
        out[i], _ = continuous_loss_and_grad(variant, mu_hats, sh, q_nodes, tau, integrator, ga)
    return out
