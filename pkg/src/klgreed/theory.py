"""Numerical checks of the policy-improvement identities and bounds for KL greedification.

Identities are evaluated exactly with linear solves; inequalities are only
asserted when their hypotheses hold, and every report says whether they did.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import CounterexampleNotFoundError, KlUndefinedError
from .mdp import FiniteMdp, exact_soft_values, random_policy_table, switch_stay, visitation_distribution
from .policy import rng_stream
from .target import boltzmann_probs, kappa, log_boltzmann, renyi_inf, total_variation

IDENTITY_TOL = 1e-8
BOUND_TOL = 1e-8


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    rhs: float
    abs_gap: float
    passed: bool
    flags: dict = field(default_factory=dict)


def _identity(lhs: float, rhs: float, tol: float = IDENTITY_TOL, **flags) -> IdentityReport:
    gap = abs(lhs - rhs)
    return IdentityReport(float(lhs), float(rhs), float(gap), bool(gap < tol), flags)


@dataclass(frozen=True)
class BoundReport:
    """``slack = achieved - bound``; ``passed`` is vacuous when hypotheses fail."""

    bound_value: float
    achieved_value: float
    slack: float
    hypotheses_satisfied: bool
    passed: bool
    extra: dict = field(default_factory=dict)


def _bound(bound: float, achieved: float, hyp: bool, tol: float = BOUND_TOL, **extra) -> BoundReport:
    slack = achieved - bound
    return BoundReport(float(bound), float(achieved), float(slack), bool(hyp), bool(not hyp or slack >= -tol), extra)


# ------------------------------------------------------------ per-state terms


def _row_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) for probability tables."""
    if np.any((p > 0) & (q <= 0)):
        raise KlUndefinedError("first policy puts mass where the second has none")
    return (xlogy(p, p) - xlogy(p, np.where(p > 0, q, 1.0))).sum(-1)


def _rkl_to_boltzmann(pi: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    return (xlogy(pi, pi) - pi * log_boltzmann(q, tau)).sum(-1)


def _fkl_to_boltzmann(pi: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    logb = log_boltzmann(q, tau)
    if np.any(pi <= 0):
        raise KlUndefinedError("forward KL needs a policy with full support")
    return (np.exp(logb) * (logb - np.log(pi))).sum(-1)


def _cross_entropy_term(pi_old: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    """Per-state B^T log pi_old."""
    return (boltzmann_probs(q, tau) * np.log(pi_old)).sum(-1)


def _soft_advantage(mdp, pi, tau):
    vals = exact_soft_values(mdp, pi, tau)
    logpi = np.log(np.where(pi > 0, pi, 1.0)) if tau > 0 else 0.0
    return vals, vals.q - tau * logpi - vals.v[:, None]


def _eta(mdp, pi, tau) -> float:
    return float(mdp.start_dist @ exact_soft_values(mdp, pi, tau).v)


# ------------------------------------------------------------------ identities


def check_soft_perf_diff(mdp: FiniteMdp, pi_old, pi_new, tau: float) -> IdentityReport:
    pi_old, pi_new = np.asarray(pi_old, float), np.asarray(pi_new, float)
    lhs = _eta(mdp, pi_new, tau) - _eta(mdp, pi_old, tau)
    _, adv = _soft_advantage(mdp, pi_old, tau)
    per_state = (pi_new * adv).sum(-1)
    if tau > 0:
        per_state = per_state - tau * _row_kl(pi_new, pi_old)
    d = visitation_distribution(mdp, pi_new).weights
    rhs = d @ per_state / (1.0 - mdp.gamma)
    return _identity(lhs, rhs)


def check_rkl_improvement(mdp: FiniteMdp, pi_old, pi_new, tau: float) -> IdentityReport:
    """Performance difference against the d^new-average of the RKL reduction.

    ``flags["improved"]`` and ``flags["predicted"]`` record both sides of the
    if-and-only-if statement.
    """
    if not tau > 0:
        raise ValueError("RKL improvement needs tau > 0")
    pi_old, pi_new = np.asarray(pi_old, float), np.asarray(pi_new, float)
    q_old = exact_soft_values(mdp, pi_old, tau).q
    delta = _rkl_to_boltzmann(pi_old, q_old, tau) - _rkl_to_boltzmann(pi_new, q_old, tau)
    d = visitation_distribution(mdp, pi_new).weights
    lhs = _eta(mdp, pi_new, tau) - _eta(mdp, pi_old, tau)
    avg = float(d @ delta)
    rhs = tau / (1.0 - mdp.gamma) * avg
    return _identity(lhs, rhs, improved=lhs >= 0, predicted=avg >= 0)


def check_approx_spd(mdp: FiniteMdp, pi_old, pi_new, q_hat, tau: float, error_scale: str = "discounted") -> IdentityReport:
    """Performance difference when the target uses an estimate ``q_hat`` of Q_old.

    The identity is ``diff + eps_bar / (1 - gamma) = tau / (1 - gamma) * E_d[dRKL_hat]``.
    ``error_scale="raw"`` drops the 1/(1 - gamma) on eps_bar, a variant that only
    holds when gamma = 0; it exists so tests can show the difference.
    """
    if not tau > 0:
        raise ValueError("approximate SPD needs tau > 0")
    pi_old, pi_new = np.asarray(pi_old, float), np.asarray(pi_new, float)
    q_hat = np.asarray(q_hat, float)
    q_old = exact_soft_values(mdp, pi_old, tau).q
    eps = q_hat - q_old
    d = visitation_distribution(mdp, pi_new).weights
    eps_bar = float(d @ ((pi_new - pi_old) * eps).sum(-1))
    delta_hat = _rkl_to_boltzmann(pi_old, q_hat, tau) - _rkl_to_boltzmann(pi_new, q_hat, tau)
    avg = float(d @ delta_hat)
    diff = _eta(mdp, pi_new, tau) - _eta(mdp, pi_old, tau)
    scale = 1.0 / (1.0 - mdp.gamma) if error_scale == "discounted" else 1.0
    lhs = diff + scale * eps_bar
    rhs = tau / (1.0 - mdp.gamma) * avg
    return _identity(lhs, rhs, eps_bar=eps_bar, improved=diff >= 0, predicted=tau * avg >= eps_bar)


# ------------------------------------------------------------------ bounds


def v_tau_max(mdp: FiniteMdp, tau: float) -> float:
    return (np.max(np.abs(mdp.reward)) + tau * np.log(mdp.n_actions)) / (1.0 - mdp.gamma)


def check_dpiold_bounds(mdp: FiniteMdp, pi_old, pi_new, tau: float, alpha: float | None = None, q_hat=None) -> BoundReport:
    """Lower bound on the performance difference that averages under d^old.

    With ``q_hat`` the reduction is measured against B_tau q_hat and corrected
    by the per-state error term.
    """
    pi_old, pi_new = np.asarray(pi_old, float), np.asarray(pi_new, float)
    kl_new_old = _row_kl(pi_new, pi_old)
    alpha = float(kl_new_old.max()) if alpha is None else alpha
    hyp = bool(np.all(kl_new_old <= alpha + 1e-15))
    vals_old, adv = _soft_advantage(mdp, pi_old, tau)
    if q_hat is None:
        per_state = (pi_new * adv).sum(-1) - tau * kl_new_old
    else:
        q_hat = np.asarray(q_hat, float)
        eps = q_hat - vals_old.q
        delta_hat = _rkl_to_boltzmann(pi_old, q_hat, tau) - _rkl_to_boltzmann(pi_new, q_hat, tau)
        per_state = tau * delta_hat + ((pi_old - pi_new) * eps).sum(-1)
    d_old = visitation_distribution(mdp, pi_old).weights
    penalty = 4.0 * v_tau_max(mdp, tau) * np.sqrt(2.0 * alpha)
    bound = (d_old @ per_state - penalty) / (1.0 - mdp.gamma)
    diff = _eta(mdp, pi_new, tau) - _eta(mdp, pi_old, tau)
    return _bound(bound, diff, hyp, alpha=alpha)


def check_intermediate_inequality(pi_old, pi_new, q_hat, tau: float) -> BoundReport:
    """RKL(new) <= |Q|/tau * sqrt(2 FKL(new)) - B^T log pi_old, given FKL(new) <= FKL(old).

    Works on one state; ``q_hat`` is the action-value vector.
    """
    pi_old, pi_new, q = (np.asarray(x, float) for x in (pi_old, pi_new, q_hat))
    fkl_new = float(_fkl_to_boltzmann(pi_new, q, tau))
    fkl_old = float(_fkl_to_boltzmann(pi_old, q, tau))
    rkl_new = float(_rkl_to_boltzmann(pi_new, q, tau))
    upper = np.max(np.abs(q)) / tau * np.sqrt(2.0 * fkl_new) - float(_cross_entropy_term(pi_old, q, tau))
    return _bound(rkl_new, upper, fkl_new <= fkl_old)


def check_pinsker(p, q) -> BoundReport:
    from .target import kl

    return _bound(total_variation(p, q), float(np.sqrt(2.0 * kl(p, q))), True)


def check_kappa_bound(pi_new, target_q, tau: float, tol: float = 1e-10) -> BoundReport:
    """RKL(pi || B) <= kappa(exp(D_inf(pi || B))) * FKL(pi || B) for one state."""
    pi = np.asarray(pi_new, float)
    b = boltzmann_probs(np.asarray(target_q, float), tau)
    rkl = float(_row_kl(pi, b))
    fkl = float(_row_kl(b, pi))
    d_inf = renyi_inf(pi, b)
    if d_inf <= 0:
        return _bound(rkl, 0.0, False, degenerate=True)
    rhs = kappa(float(np.exp(d_inf))) * fkl
    return _bound(rkl, rhs, True, tol=tol, kappa=kappa(float(np.exp(d_inf))))


# ---------------------------------------------------------- FKL counterexample


@dataclass(frozen=True)
class CounterexampleReport:
    mdp: FiniteMdp
    pi_old: np.ndarray
    pi_new: np.ndarray
    delta_fkl: np.ndarray
    q_old: np.ndarray
    q_new: np.ndarray
    eta_old: float
    eta_new: float

    @property
    def certified(self) -> bool:
        return bool(np.all(self.delta_fkl > 0) and np.all(self.q_new < self.q_old) and self.eta_new < self.eta_old)


def _single_state_mdp(rewards, gamma) -> FiniteMdp:
    m = len(rewards)
    return FiniteMdp(np.ones((1, m, 1)), np.array([rewards], float), gamma, np.array([1.0]))


def _delta_fkl(pi_old, pi_new, q_old, tau) -> np.ndarray:
    """FKL(old) - FKL(new) against the old target, as sum_a B(a) log(pi_new / pi_old)."""
    if tau > 0:
        b = boltzmann_probs(q_old, tau)
    else:
        mask = q_old >= q_old.max(-1, keepdims=True) - 1e-9
        b = mask / mask.sum(-1, keepdims=True)
    with np.errstate(divide="ignore"):
        ratio = np.where(b > 0, np.log(pi_new) - np.log(pi_old), 0.0)
    return (b * ratio).sum(-1)


def counterexample_report(mdp: FiniteMdp, pi_old, pi_new, tau: float) -> CounterexampleReport:
    old = exact_soft_values(mdp, pi_old, tau)
    new = exact_soft_values(mdp, pi_new, tau)
    return CounterexampleReport(
        mdp,
        np.asarray(pi_old),
        np.asarray(pi_new),
        _delta_fkl(np.asarray(pi_old), np.asarray(pi_new), old.q, tau),
        old.q,
        new.q,
        float(mdp.start_dist @ old.v),
        float(mdp.start_dist @ new.v),
    )


def two_action_counterexample(tau: float, gamma: float, eps1: float, eps2: float) -> CounterexampleReport:
    """Single state, rewards (-1, 1); pi_old = (eps1, 1 - eps1), pi_new = (1 - eps2, eps2)."""
    mdp = _single_state_mdp([-1.0, 1.0], gamma)
    return counterexample_report(mdp, np.array([[eps1, 1 - eps1]]), np.array([[1 - eps2, eps2]]), tau)


def counterexample_margin(eps2: float, tau: float) -> float:
    """Left side of the closed condition on eps2 (it must stay below 1)."""
    h = -xlogy(1 - eps2, 1 - eps2) - xlogy(eps2, eps2)
    return 2 * eps2 - 1 + tau * h


def _eps2_candidates(tau: float) -> list[float]:
    grid = np.logspace(-1, -11, 101)
    cands = [float(e) for e in np.concatenate([grid, 1.0 - grid]) if 0 < e < 1]
    return [e for e in cands if counterexample_margin(e, tau) < 1.0]


def build_fkl_counterexample(tau: float, gamma: float, eps1_cap: float = 1e-12):
    """Return ``(eps1, eps2, report)`` where FKL drops yet every value gets worse.

    For tau > 0 this is the two-action construction with eps1 shrunk by factors
    of ten from 1e-2. At tau = 0 the hard target is a point mass on the better
    action, so in that MDP any FKL decrease raises the better action's
    probability; a third action with reward 0.5 is added and the old policy
    keeps most of its mass there.
    """
    if tau < 0 or not 0 < gamma < 1:
        raise ValueError("need tau >= 0 and gamma in (0, 1)")
    if tau == 0:
        mdp = _single_state_mdp([-1.0, 1.0, 0.5], gamma)
        eps1 = 1e-2
        while eps1 >= eps1_cap:
            for eps2 in (1e-2, 1e-3, 1e-4):
                pi_old = np.array([[eps1, eps2, 1 - eps1 - eps2]])
                pi_new = np.array([[1 - 2 * eps2, 2 * eps2, 0.0]])
                rep = counterexample_report(mdp, pi_old, pi_new, 0.0)
                if rep.certified:
                    return eps1, eps2, rep
            eps1 /= 10
        raise CounterexampleNotFoundError("tau = 0 search failed")
    for eps2 in _eps2_candidates(tau):
        eps1 = 1e-2
        while eps1 >= eps1_cap:
            rep = two_action_counterexample(tau, gamma, eps1, eps2)
            if rep.certified:
                return eps1, eps2, rep
            eps1 /= 10
    raise CounterexampleNotFoundError(f"no certificate for tau={tau}, gamma={gamma}")


# ------------------------------------------------------ sufficient FKL bounds


def fkl_sufficient_bound(pi_old, q, tau: float) -> BoundReport:
    """Required FKL reduction in a bandit; ``achieved_value`` is the maximum possible one.

    ``extra["relative_gap"]`` is 1 - bound / max reduction.
    """
    pi_old, q = np.asarray(pi_old, float), np.asarray(q, float)
    fkl_old = float(_fkl_to_boltzmann(pi_old, q, tau))
    x = float(_rkl_to_boltzmann(pi_old, q, tau) + _cross_entropy_term(pi_old, q, tau))
    bound = max(0.0, fkl_old - 0.5 * (tau / np.max(np.abs(q)) * x) ** 2)
    # at the fixed point both vanish; the gap takes its limiting value 1
    gap = 1.0 - bound / fkl_old if fkl_old > 0 else 1.0
    return _bound(bound, fkl_old, x >= 0, relative_gap=gap, x=x)


def fkl_implication(pi_old, pi_new, q, tau: float, tol: float = 1e-10) -> tuple[bool, bool]:
    """(premise, conclusion) of the bandit statement for one candidate pi_new."""
    pi_old, pi_new, q = (np.asarray(v, float) for v in (pi_old, pi_new, q))
    rep = fkl_sufficient_bound(pi_old, q, tau)
    d_fkl = rep.achieved_value - float(_fkl_to_boltzmann(pi_new, q, tau))
    d_rkl = float(_rkl_to_boltzmann(pi_old, q, tau) - _rkl_to_boltzmann(pi_new, q, tau))
    premise = rep.hypotheses_satisfied and d_fkl >= rep.bound_value and d_fkl >= 0
    return premise, d_rkl >= -tol


def check_avg_fkl_reduction(mdp: FiniteMdp, pi_old, pi_new, tau: float, q_hat=None) -> BoundReport:
    """Improvement from sufficient average FKL reduction under d^new.

    With ``q_hat`` the target is B_tau q_hat and the error average eps_bar enters
    the hypothesis as eps_bar / tau. ``extra["premise"]`` tells whether the
    implication applies; then ``slack`` is the performance difference itself.
    """
    if not tau > 0:
        raise ValueError("needs tau > 0")
    pi_old, pi_new = np.asarray(pi_old, float), np.asarray(pi_new, float)
    q_old = exact_soft_values(mdp, pi_old, tau).q
    q = q_old if q_hat is None else np.asarray(q_hat, float)
    d = visitation_distribution(mdp, pi_new).weights
    eps_bar = float(d @ ((pi_new - pi_old) * (q - q_old)).sum(-1))
    fkl_old = _fkl_to_boltzmann(pi_old, q, tau)
    d_fkl = fkl_old - _fkl_to_boltzmann(pi_new, q, tau)
    x = float(d @ (_rkl_to_boltzmann(pi_old, q, tau) + _cross_entropy_term(pi_old, q, tau))) - eps_bar / tau
    required = float(d @ fkl_old) - 0.5 * (tau / np.max(np.abs(q)) * x) ** 2
    achieved = float(d @ d_fkl)
    hyp = bool(x >= 0 and np.all(d_fkl >= 0))
    premise = hyp and achieved >= required
    diff = _eta(mdp, pi_new, tau) - _eta(mdp, pi_old, tau)
    rep = _bound(0.0, diff, premise, tol=1e-10, premise=premise, required=required, achieved_reduction=achieved)
    return BoundReport(required, achieved, rep.slack, hyp, rep.passed, rep.extra)


def relative_gap_experiment(
    n_actions: int = 5,
    lambdas=(0.0, 1 / 3, 2 / 3, 0.99),
    tau_grid=None,
    seeds: int = 30,
    base_seed: int = 0,
) -> list[dict]:
    """Rows of (lambda, tau, seed, bound, max_reduction, relative_gap).

    pi_old mixes the uniform policy with the Boltzmann target; q is uniform in
    [-1, 1] per seed.
    """
    tau_grid = default_tau_grid() if tau_grid is None else tau_grid
    rows = []
    for lam in lambdas:
        for tau in tau_grid:
            for seed in range(seeds):
                q = rng_stream(base_seed, seed).uniform(-1.0, 1.0, n_actions)
                pi_old = (1 - lam) / n_actions + lam * boltzmann_probs(q, tau)
                rep = fkl_sufficient_bound(pi_old, q, tau)
                rows.append(
                    dict(
                        lambda_=float(lam),
                        tau=float(tau),
                        seed=seed,
                        bound=rep.bound_value,
                        max_reduction=rep.achieved_value,
                        relative_gap=rep.extra["relative_gap"],
                    )
                )
    return rows


def default_tau_grid() -> np.ndarray:
    return np.logspace(-2, 2, 13)


def summarize_gaps(rows: list[dict]) -> list[dict]:
    """Median and quartiles of the relative gap per (lambda, tau)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["lambda_"], r["tau"]), []).append(r["relative_gap"])
    out = []
    for (lam, tau), gaps in sorted(groups.items()):
        q25, q50, q75 = np.percentile(gaps, [25, 50, 75])
        out.append(dict(lambda_=lam, tau=tau, median=q50, q25=q25, q75=q75))
    return out


# ------------------------------------------------------------ random instances


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator) -> FiniteMdp:
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, (n_states, n_actions))
    return FiniteMdp(P, R, gamma, rng.dirichlet(np.ones(n_states)))


def random_policy_pair(mdp: FiniteMdp, rng: np.random.Generator):
    return random_policy_table(mdp.n_states, mdp.n_actions, rng), random_policy_table(mdp.n_states, mdp.n_actions, rng)


def nearby_policy(pi: np.ndarray, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Random perturbation of ``pi`` whose per-state KL(new || pi) is at most ``alpha``."""
    noise = rng.standard_normal(pi.shape)
    scale = 1.0
    while True:
        logits = np.log(pi) + scale * noise
        new = np.exp(logits - logits.max(-1, keepdims=True))
        new /= new.sum(-1, keepdims=True)
        if _row_kl(new, pi).max() <= alpha:
            return new
        scale *= 0.5


# ------------------------------------------------------------------ suite


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    detail: str = ""


def run_theory_suite(n_pairs: int = 100, n_bound: int = 1000, n_random_mdps: int = 20, seed: int = 0) -> list[SuiteResult]:
    """Every identity and inequality on Switch-Stay, random MDPs and bandits."""
    results = []
    ss = switch_stay()
    rng = rng_stream(seed, 1)
    mdps = [ss] + [random_mdp(3, 3, 0.9, rng) for _ in range(n_random_mdps)]

    worst = {"spd": 0.0, "rkl": 0.0, "approx": 0.0}
    count = 0
    iff_ok = True
    for tau in (0.01, 0.1, 1.0):
        for k, mdp in enumerate(mdps):
            for _ in range(n_pairs if k == 0 else max(1, n_pairs // n_random_mdps)):
                old, new = random_policy_pair(mdp, rng)
                worst["spd"] = max(worst["spd"], check_soft_perf_diff(mdp, old, new, tau).abs_gap)
                r = check_rkl_improvement(mdp, old, new, tau)
                worst["rkl"] = max(worst["rkl"], r.abs_gap)
                iff_ok &= r.flags["improved"] == r.flags["predicted"] or abs(r.lhs) < 1e-12
                q_hat = exact_soft_values(mdp, old, tau).q + rng.uniform(-1, 1, (mdp.n_states, mdp.n_actions))
                a = check_approx_spd(mdp, old, new, q_hat, tau)
                worst["approx"] = max(worst["approx"], a.abs_gap)
                iff_ok &= a.flags["improved"] == a.flags["predicted"] or abs(a.lhs - a.flags["eps_bar"] / (1 - mdp.gamma)) < 1e-12
                count += 1
    for key, label in (("spd", "soft performance difference"), ("rkl", "RKL improvement identity"), ("approx", "approximate SPD identity")):
        results.append(SuiteResult(label, worst[key] < IDENTITY_TOL, count, f"max gap {worst[key]:.2e}"))
    results.append(SuiteResult("RKL improvement iff flags", iff_ok, count))

    def bound_suite(label, make):
        ok, n, tries, worst_slack = True, 0, 0, np.inf
        while n < n_bound and tries < 20 * n_bound:
            tries += 1
            rep = make()
            if rep.hypotheses_satisfied:
                n += 1
                ok &= rep.passed
                worst_slack = min(worst_slack, rep.slack)
        results.append(SuiteResult(label, ok and n >= n_bound, n, f"min slack {worst_slack:.3e}"))

    def dold(approx):
        tau = float(rng.choice([0.0, 0.1, 1.0])) if not approx else float(rng.choice([0.1, 1.0]))
        old = random_policy_table(2, 2, rng)
        new = nearby_policy(old, 0.01, rng)
        q_hat = exact_soft_values(ss, old, tau).q + rng.uniform(-1, 1, (2, 2)) if approx else None
        return check_dpiold_bounds(ss, old, new, tau, 0.01, q_hat)

    bound_suite("d_old lower bound (exact values)", lambda: dold(False))
    bound_suite("d_old lower bound (approximate values)", lambda: dold(True))

    def intermediate():
        q = rng.uniform(-1, 1, 5)
        tau = float(10 ** rng.uniform(-2, 1))
        return check_intermediate_inequality(rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5)), q, tau)

    bound_suite("intermediate RKL/FKL inequality", intermediate)
    bound_suite("Pinsker", lambda: check_pinsker(rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))))
    bound_suite(
        "kappa bound",
        lambda: check_kappa_bound(rng.dirichlet(np.ones(5)), rng.uniform(-1, 1, 5), float(10 ** rng.uniform(-1, 1))),
    )

    cex_ok = True
    for tau in (0.0, 0.1, 1.0):
        try:
            _, _, rep = build_fkl_counterexample(tau, 0.9)
            cex_ok &= rep.certified
        except CounterexampleNotFoundError:
            cex_ok = False
    results.append(SuiteResult("FKL counterexample certificates", cex_ok, 3))

    premise_hits, violations = 0, 0
    for _ in range(n_bound):
        q = rng.uniform(-1, 1, 5)
        tau = float(10 ** rng.uniform(-1, 1))
        old = rng.dirichlet(np.ones(5))
        new = sample_toward_target(old, q, tau, rng)
        premise, ok = fkl_implication(old, new, q, tau)
        premise_hits += premise
        violations += premise and not ok
    results.append(SuiteResult("bandit sufficient FKL reduction", violations == 0, premise_hits))

    hits, bad = 0, 0
    for _ in range(n_bound):
        tau = float(rng.choice([0.1, 0.5, 1.0]))
        old = random_policy_table(2, 2, rng)
        q_old = exact_soft_values(ss, old, tau).q
        new = np.array([sample_toward_target(old[s], q_old[s], tau, rng) for s in range(2)])
        rep = check_avg_fkl_reduction(ss, old, new, tau)
        if rep.extra["premise"]:
            hits += 1
            bad += not rep.passed
    results.append(SuiteResult("average sufficient FKL reduction", bad == 0, hits))
    return results


def sample_toward_target(pi_old, q, tau: float, rng: np.random.Generator) -> np.ndarray:
    """A candidate new policy: a random mix of pi_old, the Boltzmann target and noise."""
    b = boltzmann_probs(q, tau)
    mix = rng.uniform(0.5, 1.0) ** 0.25
    noise = rng.dirichlet(np.ones(len(b)))
    w = rng.uniform(0, 0.05)
    return (1 - w) * ((1 - mix) * pi_old + mix * b) + w * noise
