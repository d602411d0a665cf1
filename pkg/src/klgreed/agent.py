"""Approximate policy iteration with KL greedification on tabular problems.

The actor is a tabular softmax updated with all-actions gradients against the
critic ``Q_beta``; the critics learn from a replay buffer by one-hot
semi-gradient TD.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np
from scipy.special import log_softmax

from . import optim
from .errors import NanGradientError
from .greedify import KlVariant, discrete_logit_grads
from .mdp import FiniteMdp, Maze, discrete_maze, dp_soft_values, exact_soft_values, soft_performance
from .policy import SoftmaxPolicy, rng_stream


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int
    done: bool  # true terminal only; timeouts store False


@dataclass(frozen=True)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.s)


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._s = np.zeros(capacity, dtype=np.int64)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._s2 = np.zeros(capacity, dtype=np.int64)
        self._done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, tr: Transition) -> None:
        i = self._next
        self._s[i], self._a[i], self._r[i], self._s2[i], self._done[i] = tr.s, tr.a, tr.r, tr.s_next, tr.done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(self._size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(n, rng)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._done[idx])

    def transitions(self) -> list[Transition]:
        return [
            Transition(int(self._s[i]), int(self._a[i]), float(self._r[i]), int(self._s2[i]), bool(self._done[i]))
            for i in range(self._size)
        ]


@dataclass
class TabularCritics:
    q_beta: np.ndarray
    v_w: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "TabularCritics":
        return cls(np.zeros((n_states, n_actions)), np.zeros(n_states))


class MdpEnv:
    """Samples a FiniteMdp; resets on terminal states and after ``timeout`` steps."""

    def __init__(self, mdp: FiniteMdp, rng: np.random.Generator, timeout: int | None = None):
        self.mdp = mdp
        self.rng = rng
        self.timeout = timeout
        self._cdf = np.cumsum(mdp.transition, axis=-1)
        self.reset()

    def reset(self) -> int:
        self.state = int(np.searchsorted(np.cumsum(self.mdp.start_dist), self.rng.random(), side="right"))
        self.state = min(self.state, self.mdp.n_states - 1)
        self.t = 0
        return self.state

    def step(self, a: int) -> tuple[int, float, bool, bool]:
        """Returns (next state, reward, terminal, timed out)."""
        s = self.state
        cdf = self._cdf[s, a]
        s_next = min(int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right")), self.mdp.n_states - 1)
        r = float(self.mdp.reward[s, a])
        done = bool(self.mdp.terminal[s_next])
        self.t += 1
        timed_out = not done and self.timeout is not None and self.t >= self.timeout
        self.state = s_next
        return s_next, r, done, timed_out


def _sample_action(policy: SoftmaxPolicy, s: int, rng: np.random.Generator) -> int:
    cdf = np.cumsum(policy.probs(s))
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), policy.n_actions - 1)


def agent_step(env: MdpEnv, policy: SoftmaxPolicy, buffer: ReplayBuffer, rng: np.random.Generator) -> Transition:
    s = env.state
    a = _sample_action(policy, s, rng)
    s_next, r, done, timed_out = env.step(a)
    tr = Transition(s, a, r, s_next, done)
    buffer.add(tr)
    if done or timed_out:
        env.reset()
    return tr


def value_updates(
    batch: Batch, policy: SoftmaxPolicy, critics: TabularCritics, tau: float, rng: np.random.Generator, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Critic gradients (g_w, g_v) for one minibatch, averaged over the batch."""
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    probs = policy.probs()[batch.s]
    u = rng.random(n)
    a_tilde = np.minimum((probs.cumsum(-1) < u[:, None]).sum(-1), policy.n_actions - 1)
    logp = policy.log_probs()[batch.s, a_tilde]
    ent = tau * logp if tau > 0 else 0.0
    v_err = critics.q_beta[batch.s, a_tilde] - ent - critics.v_w[batch.s]
    g_w = np.zeros_like(critics.v_w)
    np.add.at(g_w, batch.s, -v_err)
    target = batch.r + gamma * np.where(batch.done, 0.0, critics.v_w[batch.s_next])
    q_err = target - critics.q_beta[batch.s, batch.a]
    g_v = np.zeros_like(critics.q_beta)
    np.add.at(g_v, (batch.s, batch.a), -q_err)
    return g_w / n, g_v / n


def actor_gradient(
    variant: KlVariant, policy: SoftmaxPolicy, q: np.ndarray, states: np.ndarray, tau: float, rng=None
) -> np.ndarray:
    """All-actions KL gradient w.r.t. the logits, averaged over ``states``."""
    logp = log_softmax(policy.logits[states], axis=-1)
    g_rows = discrete_logit_grads(variant, logp, q[states], tau, rng)
    g = np.zeros_like(policy.logits)
    np.add.at(g, states, g_rows)
    return g / len(states)


# ------------------------------------------------------------------ maze helpers


def maze_layout(name: str = "maze10", gamma: float = 0.99) -> Maze:
    """One of the committed layouts (``maze5``, ``maze10``)."""
    data = json.loads(resources.files("klgreed").joinpath("data/mazes.json").read_text())
    if name not in data:
        raise KeyError(f"unknown maze {name!r}; available: {sorted(data)}")
    d = data[name]
    walls = [tuple(map(tuple, w)) for w in d["walls"]]
    return discrete_maze(d["width"], d["height"], walls, tuple(d["start"]), tuple(d["goal"]), gamma)


def greedy_rollout(maze: Maze, policy: SoftmaxPolicy, max_steps: int) -> tuple[bool, list[int]]:
    """Follow argmax actions from the start; returns (reached goal, visited states)."""
    nxt = maze.next_state
    greedy = policy.logits.argmax(-1)
    s = maze.index(maze.start)
    goal = maze.index(maze.goal)
    path = [s]
    for _ in range(max_steps):
        if s == goal:
            return True, path
        s = int(nxt[s, greedy[s]])
        path.append(s)
    return s == goal, path


def visitation_rollouts(
    maze: Maze, policy: SoftmaxPolicy, n: int, max_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Mean over ``n`` episodes of each episode's normalised state-visit counts."""
    nxt = maze.next_state
    goal = maze.index(maze.goal)
    cdf = np.cumsum(policy.probs(), axis=-1)
    states = np.full(n, maze.index(maze.start))
    active = np.ones(n, dtype=bool)
    counts = np.zeros((n, maze.mdp.n_states))
    rows = np.arange(n)
    counts[rows, states] += 1
    for _ in range(max_steps):
        if not active.any():
            break
        c = cdf[states]
        a = np.minimum((c < rng.random(n)[:, None] * c[:, -1:]).sum(-1), policy.n_actions - 1)
        states = np.where(active, nxt[states, a], states)
        np.add.at(counts, (rows[active], states[active]), 1)
        active &= states != goal
    counts /= counts.sum(-1, keepdims=True)
    return counts.mean(0)


def visitation_grid(maze: Maze, dist: np.ndarray) -> np.ndarray:
    """State vector reshaped to ``[y, x]``."""
    return np.asarray(dist).reshape(maze.height, maze.width)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    env: str = "maze10"
    kl: str = "rkl"
    tau: float = 0.0
    lr_actor: float = 0.001
    lr_critic: float = 0.001
    batch_size: int = 32
    buffer_size: int = 10_000
    iterations: int = 20_000
    seed: int = 0
    optimizer: str = "rmsprop"
    gamma: float = 0.99
    timeout: int = 10_000
    n_checkpoints: int = 10
    rollouts: int = 100
    rollout_max_steps: int = 1_000

    def variant(self) -> KlVariant:
        v = KlVariant.from_name(self.kl, self.tau)
        v.check_tau(self.tau)
        return v

    def checkpoint_steps(self) -> list[int]:
        k = max(1, self.n_checkpoints)
        return sorted({round(i * self.iterations / k) for i in range(k + 1)})


@dataclass
class TrainResult:
    config: TrainConfig
    curve: list[dict]
    visitation: dict[int, np.ndarray]  # checkpoint index -> state distribution
    policy: SoftmaxPolicy
    critics: TabularCritics
    reached_goal: bool | None = None
    error: str | None = None
    extras: dict = field(default_factory=dict)


def make_env_mdp(cfg: TrainConfig):
    """(FiniteMdp, Maze or None) for the configured environment."""
    if cfg.env.startswith("maze"):
        maze = maze_layout(cfg.env, cfg.gamma)
        return maze.mdp, maze
    if cfg.env == "switch_stay":
        from .mdp import switch_stay

        return switch_stay(cfg.gamma), None
    raise ValueError(f"unknown env {cfg.env!r}")


def _curve_row(cfg: TrainConfig, step: int, mdp: FiniteMdp, policy: SoftmaxPolicy) -> dict:
    return {
        "env": cfg.env,
        "kl": cfg.kl,
        "tau": cfg.tau,
        "lr_actor": cfg.lr_actor,
        "lr_critic": cfg.lr_critic,
        "seed": cfg.seed,
        "step": step,
        "eta_tau": soft_performance(mdp, policy, cfg.tau),
        "eta": soft_performance(mdp, policy, 0.0),
    }


def train(cfg: TrainConfig) -> TrainResult:
    """Run approximate policy iteration with estimated values."""
    variant = cfg.variant()
    mdp, maze = make_env_mdp(cfg)
    policy = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
    critics = TabularCritics.zeros(mdp.n_states, mdp.n_actions)
    buffer = ReplayBuffer(cfg.buffer_size)
    env = MdpEnv(mdp, rng_stream(cfg.seed, 0), cfg.timeout)
    rng = rng_stream(cfg.seed, 1)
    opt_pi = optim.make_optimizer(cfg.optimizer)
    opt_w = optim.make_optimizer(cfg.optimizer)
    opt_v = optim.make_optimizer(cfg.optimizer)
    checkpoints = cfg.checkpoint_steps()
    curve, visitation = [], {}
    error = None

    def record(step: int):
        curve.append(_curve_row(cfg, step, mdp, policy))
        if maze is not None:
            k = checkpoints.index(step)
            visitation[k] = visitation_rollouts(maze, policy, cfg.rollouts, cfg.rollout_max_steps, rng_stream(cfg.seed, 2, k))

    record(0)
    for t in range(1, cfg.iterations + 1):
        agent_step(env, policy, buffer, rng)
        if len(buffer) >= cfg.batch_size:
            batch = buffer.sample(cfg.batch_size, rng)
            g_theta = actor_gradient(variant, policy, critics.q_beta, batch.s, cfg.tau, rng)
            g_w, g_v = value_updates(batch, policy, critics, cfg.tau, rng, mdp.gamma)
            try:
                theta, opt_pi = optim.step(opt_pi, policy.params(), g_theta.ravel(), cfg.lr_actor)
                w, opt_w = optim.step(opt_w, critics.v_w, g_w, cfg.lr_critic)
                v, opt_v = optim.step(opt_v, critics.q_beta, g_v, cfg.lr_critic)
            except NanGradientError as exc:
                error = f"step {t}: {exc}"
                break
            policy = policy.with_params(theta)
            critics = TabularCritics(v, w)
        if t in checkpoints:
            record(t)
    reached = greedy_rollout(maze, policy, cfg.timeout)[0] if maze is not None else None
    return TrainResult(cfg, curve, visitation, policy, critics, reached, error, {"config": asdict(cfg)})


def true_value_training(
    maze: Maze,
    kl: str,
    tau: float,
    lr: float = 0.1,
    iters: int = 100,
    optimizer: str = "rmsprop",
    seed: int = 0,
) -> list[SoftmaxPolicy]:
    """Alternate DP evaluation with one all-states greedification step.

    Returns ``iters + 1`` snapshots, the first being the uniform initialisation.
    """
    variant = KlVariant.from_name(kl, tau)
    variant.check_tau(tau)
    mdp = maze.mdp
    policy = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
    live = np.flatnonzero(~mdp.terminal)
    opt = optim.make_optimizer(optimizer)
    rng = rng_stream(seed, 3)
    snapshots = [policy]
    q = None
    for _ in range(iters):
        q = dp_soft_values(mdp, policy, tau, q0=q).q
        g = actor_gradient(variant, policy, q, live, tau, rng)
        theta, opt = optim.step(opt, policy.params(), g.ravel(), lr)
        policy = policy.with_params(theta)
        snapshots.append(policy)
    return snapshots


def optimal_greedy_actions(mdp: FiniteMdp, tol: float = 1e-10) -> np.ndarray:
    """Boolean ``[state][action]`` mask of optimal actions from value iteration."""
    v = np.zeros(mdp.n_states)
    live = ~mdp.terminal
    while True:
        q = np.where(live[:, None], mdp.reward + mdp.gamma * mdp.transition @ v, 0.0)
        v_new = q.max(-1)
        if np.max(np.abs(v_new - v)) < tol:
            break
        v = v_new
    return q >= q.max(-1, keepdims=True) - 1e-9


def reachable_states(maze: Maze) -> np.ndarray:
    nxt = maze.next_state
    seen = {maze.index(maze.start)}
    frontier = list(seen)
    while frontier:
        s = frontier.pop()
        for s2 in nxt[s]:
            if int(s2) not in seen:
                seen.add(int(s2))
                frontier.append(int(s2))
    return np.array(sorted(seen))


def frozen_policy_critic_check(mdp: FiniteMdp, policy: SoftmaxPolicy, tau: float, steps: int, seed: int = 0, lr: float = 0.001, batch_size: int = 32):
    """Train only the critics under a fixed policy; returns (critics, exact values)."""
    env = MdpEnv(mdp, rng_stream(seed, 0))
    rng = rng_stream(seed, 1)
    buffer = ReplayBuffer(10_000)
    critics = TabularCritics.zeros(mdp.n_states, mdp.n_actions)
    opt_w = optim.make_optimizer("rmsprop")
    opt_v = optim.make_optimizer("rmsprop")
    for _ in range(steps):
        agent_step(env, policy, buffer, rng)
        if len(buffer) >= batch_size:
            g_w, g_v = value_updates(buffer.sample(batch_size, rng), policy, critics, tau, rng, mdp.gamma)
            w, opt_w = optim.step(opt_w, critics.v_w, g_w, lr)
            v, opt_v = optim.step(opt_v, critics.q_beta, g_v, lr)
            critics = TabularCritics(v, w)
    return critics, exact_soft_values(mdp, policy, tau)
