"""Experiment drivers behind the command-line subcommands.

Each driver returns plain row dictionaries; the CLI owns file output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, softmax

from . import optim
from .agent import (
    TrainConfig,
    greedy_rollout,
    maze_layout,
    total_variation,
    train,
    true_value_training,
    visitation_rollouts,
)
from .greedify import KlVariant, continuous_loss_and_grad, loss_surface
from .mdp import FiniteMdp, SWITCH_STAY_CORNERS, bimodal_bandit, soft_performance, switch_stay_encoding
from .policy import rng_stream, softplus, softplus_inv, squashed_log_density, squashed_score
from .target import Integrator
from .theory import (
    build_fkl_counterexample,
    fkl_implication,
    relative_gap_experiment,
    run_theory_suite,
    sample_toward_target,
)

OPTIMAL_CORNER = SWITCH_STAY_CORNERS[1]
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(64)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


# ------------------------------------------------------------------ bandit


def bandit_surface(
    kls=("rkl", "fkl"),
    taus=(0.0, 0.01, 0.1, 0.4, 1.0),
    n_mu: int = 101,
    n_sigma: int = 101,
    mu_range=(-2.0, 2.0),
    sigma_range=(0.02, 2.0),
    integrator: Integrator | None = None,
) -> list[dict]:
    """Loss over a (mean, std) grid on the bimodal bandit.

    The std axis excludes its lower end: ``n_sigma`` points in (lo, hi].
    """
    integrator = integrator or Integrator()
    bandit = bimodal_bandit()
    mus = np.linspace(*mu_range, n_mu)
    sigmas = np.linspace(*sigma_range, n_sigma + 1)[1:]
    rows = []
    for kl in kls:
        for tau in taus:
            variant = KlVariant.from_name(kl, tau)
            greedy = bandit.best_action if variant.hard and variant.direction == "forward" else None
            grid = loss_surface(variant, tau, bandit.q, mus, sigmas, integrator, greedy)
            for i, sig in enumerate(sigmas):
                sh = float(softplus_inv(sig))
                for j, mu in enumerate(mus):
                    rows.append(dict(kl=kl, tau=float(tau), mu_hat=float(mu), sigma_hat=sh, sigma=float(sig), loss=float(grid[i, j])))
    return rows


def surface_grid(rows: list[dict], kl: str, tau: float):
    """(mu_hats, sigmas, loss[sigma, mu]) for one surface out of ``bandit_surface`` rows."""
    sel = [r for r in rows if r["kl"] == kl and r["tau"] == tau]
    mus = np.unique([r["mu_hat"] for r in sel])
    sigmas = np.unique([r["sigma"] for r in sel])
    grid = np.full((len(sigmas), len(mus)), np.nan)
    for r in sel:
        grid[np.searchsorted(sigmas, r["sigma"]), np.searchsorted(mus, r["mu_hat"])] = r["loss"]
    return mus, sigmas, grid


def strict_local_minima(row: np.ndarray) -> np.ndarray:
    """Interior indices strictly below both neighbours."""
    row = np.asarray(row)
    return np.flatnonzero((row[1:-1] < row[:-2]) & (row[1:-1] < row[2:])) + 1


# ------------------------------------------------------------------ switch-stay


def squashed_interval_masses(mu, sigma, edges) -> np.ndarray:
    """Interval probabilities of tanh(N(mu, sigma^2)) in closed form; last axis indexes intervals."""
    with np.errstate(divide="ignore"):
        u = np.arctanh(np.asarray(edges, dtype=float))  # +-1 map to +-inf
    mu = np.asarray(mu, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    cdf = ndtr((u - mu) / sigma)
    return np.diff(cdf, axis=-1)


def squashed_entropy(mu, sigma) -> np.ndarray:
    """Differential entropy of tanh(N(mu, sigma^2)) by Gauss-Hermite quadrature."""
    mu = np.asarray(mu, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    u = np.abs(mu + sigma * _GH_NODES)
    log_jac = 2.0 * (np.log(2.0) - u - np.log1p(np.exp(-2.0 * u)))  # log(1 - tanh(u)^2)
    return 0.5 * np.log(2.0 * np.pi * np.e * sigma[..., 0] ** 2) + log_jac @ _GH_WEIGHTS


def batched_soft_values(mdp: FiniteMdp, pi: np.ndarray, bonus: np.ndarray | float = 0.0):
    """Soft (Q, V) for a stack of policy tables ``pi[n, s, a]``; ``bonus[n, s]`` is the per-state reward bonus."""
    r_pi = (pi * mdp.reward).sum(-1) + bonus
    P_pi = np.einsum("nsa,sat->nst", pi, mdp.transition)
    eye = np.eye(mdp.n_states)
    v = np.linalg.solve(eye - mdp.gamma * P_pi, r_pi[..., None])[..., 0]
    q = mdp.reward + mdp.gamma * np.einsum("sat,nt->nsa", mdp.transition, v)
    return q, v


@dataclass(frozen=True)
class SwitchStayConfig:
    kl: str = "rkl"
    tau: float = 0.0
    iterates: int = 1000
    steps: int = 500
    lr: float = 0.01
    seed: int = 0
    mode: str = "quadrature"  # or "sampled"
    n_samples: int = 10
    mean_range: float = 0.95
    sigma_hat_init: float = 0.0
    gamma: float = 0.9
    optimizer: str = "rmsprop"
    n_nodes: int = 1024


def _sampled_grads(variant, mu, sh, q_rows, tau, enc, n, rng):
    sigma = softplus(sh)[:, None]
    a = np.tanh(mu[:, None] + sigma * rng.standard_normal((len(mu), n)))
    qa = np.take_along_axis(q_rows, enc.discrete_action(a), axis=1)
    logp = squashed_log_density(a, mu[:, None], sigma)
    d_mu, d_sig = squashed_score(a, mu[:, None], sigma, sh[:, None])
    if variant.direction == "reverse":
        f = -qa if variant.hard else logp - qa / tau
        coef = (f - f.mean(1, keepdims=True)) / n
    else:
        coef = -softmax(qa / tau - logp, axis=1)
    return np.stack([(coef * d_mu).sum(1), (coef * d_sig).sum(1)], axis=-1)


def _greedy_draws(q_rows, edges, rng):
    """One maximizing action per row: a random best interval, then a uniform point in it."""
    ties = q_rows >= q_rows.max(-1, keepdims=True) - 1e-9
    pick = np.array([rng.choice(np.flatnonzero(t)) for t in ties])
    edges = np.asarray(edges, dtype=float)
    return rng.uniform(edges[pick], edges[pick + 1])


def switch_stay_run(cfg: SwitchStayConfig) -> list[dict]:
    """Greedify many independently initialised policies against their own exact soft values.

    Returns one row per iterate with its final value-polytope point.
    """
    variant = KlVariant.from_name(cfg.kl, cfg.tau)
    variant.check_tau(cfg.tau)
    if cfg.mode not in ("quadrature", "sampled"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    enc = switch_stay_encoding(cfg.gamma)
    mdp = enc.base
    integrator = Integrator(n=cfg.n_nodes)
    x, _ = integrator.nodes_weights()
    node_action = enc.discrete_action(x)
    n, S = cfg.iterates, mdp.n_states
    init = rng_stream(cfg.seed, 0)
    noise = rng_stream(cfg.seed, 1)
    mu = init.uniform(-cfg.mean_range, cfg.mean_range, n * S)
    sh = np.full(n * S, cfg.sigma_hat_init)
    opt = optim.make_optimizer(cfg.optimizer)
    for _ in range(cfg.steps):
        sigma = softplus(sh)
        pi = squashed_interval_masses(mu, sigma, enc.edges).reshape(n, S, -1)
        bonus = cfg.tau * squashed_entropy(mu, sigma).reshape(n, S)
        q, _ = batched_soft_values(mdp, pi, bonus)
        q_rows = q.reshape(n * S, -1)
        if variant.hard and variant.direction == "forward":
            ga = _greedy_draws(q_rows, enc.edges, noise)
            _, g = continuous_loss_and_grad(variant, mu, sh, np.zeros((1, 1)), cfg.tau, integrator, ga)
        elif cfg.mode == "quadrature":
            _, g = continuous_loss_and_grad(variant, mu, sh, q_rows[:, node_action], cfg.tau, integrator)
        else:
            g = _sampled_grads(variant, mu, sh, q_rows, cfg.tau, enc, cfg.n_samples, noise)
        g = g / S  # mean over the two states
        flat, opt = optim.step(opt, np.column_stack([mu, sh]).ravel(), g.ravel(), cfg.lr)
        mu, sh = flat[0::2].copy(), flat[1::2].copy()
    sigma = softplus(sh)
    pi = squashed_interval_masses(mu, sigma, enc.edges).reshape(n, S, -1)
    _, v = batched_soft_values(mdp, pi)
    dist = np.linalg.norm(v - OPTIMAL_CORNER, axis=-1)
    mu2, sig2 = mu.reshape(n, S), sigma.reshape(n, S)
    return [
        dict(
            kl=cfg.kl,
            tau=float(cfg.tau),
            mode=cfg.mode,
            n_samples=cfg.n_samples if cfg.mode == "sampled" else 0,
            seed=cfg.seed,
            iterate=i,
            v_s0=float(v[i, 0]),
            v_s1=float(v[i, 1]),
            mu_hat_s0=float(mu2[i, 0]),
            sigma_s0=float(sig2[i, 0]),
            mu_hat_s1=float(mu2[i, 1]),
            sigma_s1=float(sig2[i, 1]),
            distance_to_optimum=float(dist[i]),
        )
        for i in range(n)
    ]


def summarize_switch_stay(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["mode"], r["n_samples"], r["kl"], r["tau"]), []).append(r)
    out = []
    for (mode, ns, kl, tau), rs in sorted(groups.items()):
        sig = np.array([r["sigma_s0"] for r in rs])
        dist = np.array([r["distance_to_optimum"] for r in rs])
        out.append(
            dict(
                mode=mode,
                n_samples=ns,
                kl=kl,
                tau=tau,
                iterates=len(rs),
                mean_sigma_s0=float(sig.mean()),
                stderr_sigma_s0=float(sig.std(ddof=1) / np.sqrt(len(sig))) if len(sig) > 1 else 0.0,
                mean_distance=float(dist.mean()),
                frac_within_1=float(np.mean(dist <= 1.0)),
            )
        )
    return out


# ------------------------------------------------------------------ theory


def implication_experiment(
    n_samples: int = 10_000,
    n_actions: int = 5,
    lambdas=(0.0, 1 / 3, 2 / 3, 0.99),
    tau_grid=None,
    seed: int = 0,
) -> dict:
    """Sample new policies toward the target from the relative-gap instances and
    test that meeting the sufficient FKL reduction always improves the RKL."""
    from .target import boltzmann_probs
    from .theory import default_tau_grid

    taus = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    rng = rng_stream(seed, 7)
    hits = violations = 0
    for _ in range(n_samples):
        lam = float(lambdas[rng.integers(len(lambdas))])
        tau = float(taus[rng.integers(len(taus))])
        q = rng.uniform(-1.0, 1.0, n_actions)
        old = (1 - lam) / n_actions + lam * boltzmann_probs(q, tau)
        new = sample_toward_target(old, q, tau, rng)
        premise, ok = fkl_implication(old, new, q, tau)
        hits += premise
        violations += premise and not ok
    return dict(samples=n_samples, premise_hits=int(hits), violations=int(violations))


def theory_run(
    n_pairs: int = 100,
    n_bound: int = 1000,
    n_random_mdps: int = 20,
    n_implication: int = 10_000,
    gap_seeds: int = 30,
    tau_grid=None,
    counterexample_taus=(0.0, 0.1, 1.0),
    gamma: float = 0.9,
    seed: int = 0,
) -> dict:
    """Suite results, counterexample certificates, relative-gap rows and the implication tally."""
    suite = run_theory_suite(n_pairs, n_bound, n_random_mdps, seed)
    certs = []
    for tau in counterexample_taus:
        eps1, eps2, rep = build_fkl_counterexample(float(tau), gamma)
        certs.append(
            dict(
                tau=float(tau),
                gamma=gamma,
                eps1=eps1,
                eps2=eps2,
                min_delta_fkl=float(np.min(rep.delta_fkl)),
                max_q_change=float(np.max(rep.q_new - rep.q_old)),
                eta_change=float(rep.eta_new - rep.eta_old),
                certified=bool(rep.certified),
            )
        )
    gaps = relative_gap_experiment(tau_grid=tau_grid, seeds=gap_seeds, base_seed=seed)
    implication = implication_experiment(n_implication, tau_grid=tau_grid, seed=seed)
    return dict(suite=suite, counterexamples=certs, gaps=gaps, implication=implication)


# ------------------------------------------------------------------ maze


def visitation_rows(maze, dist: np.ndarray, **prefix) -> list[dict]:
    grid = np.asarray(dist).reshape(maze.height, maze.width)
    return [dict(prefix, x=x, y=y, normalized_count=float(grid[y, x])) for y in range(maze.height) for x in range(maze.width)]


def maze_true_value_run(
    maze_name: str,
    kl: str,
    tau: float,
    seed: int,
    lr: float = 0.1,
    iters: int = 100,
    n_checkpoints: int = 10,
    rollouts: int = 100,
    rollout_max_steps: int = 1000,
    gamma: float = 0.99,
) -> dict:
    maze = maze_layout(maze_name, gamma)
    snaps = true_value_training(maze, kl, tau, lr, iters, seed=seed)
    steps = sorted({round(i * iters / max(1, n_checkpoints)) for i in range(n_checkpoints + 1)})
    curve, vis = [], {}
    for k, t in enumerate(steps):
        p = snaps[t]
        curve.append(
            dict(
                env=maze_name,
                kl=kl,
                tau=float(tau),
                lr_actor=lr,
                lr_critic="",
                seed=seed,
                step=t,
                eta_tau=soft_performance(maze.mdp, p, tau),
                eta=soft_performance(maze.mdp, p, 0.0),
            )
        )
        vis[k] = visitation_rollouts(maze, p, rollouts, rollout_max_steps, rng_stream(seed, 2, k))
    reached, path = greedy_rollout(maze, snaps[-1], maze.width * maze.height * 4)
    return dict(curve=curve, visitation=vis, steps=steps, reached_goal=reached, greedy_path=path, policy=snaps[-1])


def maze_estimated_run(cfg: TrainConfig) -> dict:
    res = train(cfg)
    return dict(
        curve=res.curve,
        visitation=res.visitation,
        steps=cfg.checkpoint_steps(),
        reached_goal=res.reached_goal,
        error=res.error,
        policy=res.policy,
    )


def mean_visitation(runs: list[dict]) -> dict[int, np.ndarray]:
    keys = sorted(runs[0]["visitation"])
    return {k: np.mean([r["visitation"][k] for r in runs], axis=0) for k in keys}


def visitation_tv(a: dict[int, np.ndarray], b: dict[int, np.ndarray]) -> dict[int, float]:
    return {k: total_variation(a[k], b[k]) for k in sorted(set(a) & set(b))}
