"""Finite MDPs, exact soft evaluation, visitation and value-polytope points."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import xlogy

from .errors import EvaluationDivergedError, IntegrationError, LogOfZeroError
from .target import DEFAULT_INTEGRATOR, Integrator, interval_masses

LINEAR_SOLVE_MAX_STATES = 64


@dataclass(frozen=True)
class FiniteMdp:
    transition: np.ndarray  # [s, a, s']
    reward: np.ndarray  # [s, a]
    gamma: float
    start_dist: np.ndarray
    terminal: np.ndarray | None = None  # states whose value is pinned at zero

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        rho = np.asarray(self.start_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError(f"inconsistent shapes: P{P.shape}, R{R.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(-1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be distributions")
        if rho.shape != (P.shape[0],) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise ValueError("start_dist must be a distribution over states")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        term = np.zeros(P.shape[0], bool) if self.terminal is None else np.asarray(self.terminal, bool)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "start_dist", rho)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


@dataclass(frozen=True)
class SoftValues:
    q: np.ndarray
    v: np.ndarray
    tau: float
    tol: float

    def bellman_residual(self, mdp: FiniteMdp) -> float:
        target = mdp.reward + mdp.gamma * mdp.transition @ self.v
        return float(np.max(np.abs(self.q - target)))


@dataclass(frozen=True)
class StateDistribution:
    weights: np.ndarray


@dataclass(frozen=True)
class ContinuousActionEncoding:
    """Partitions (-1, 1) into ``base.n_actions`` intervals; interval k plays action k."""

    base: FiniteMdp
    edges: tuple = (-1.0, 0.0, 1.0)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e[0] != -1.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0) or len(e) != self.base.n_actions + 1:
            raise ValueError("edges must increase from -1 to 1 with one interval per action")

    def discrete_action(self, a):
        """Interval index of a continuous action; the right edge of each interval is closed."""
        idx = np.searchsorted(np.asarray(self.edges), a, side="left") - 1
        return np.clip(idx, 0, self.base.n_actions - 1)


def _as_table(policy) -> np.ndarray:
    if hasattr(policy, "probs"):
        return policy.probs()
    return np.atleast_2d(np.asarray(policy, dtype=float))


def _policy_entropy(pi: np.ndarray) -> np.ndarray:
    return -xlogy(pi, pi).sum(-1)


def exact_soft_values(
    mdp: FiniteMdp,
    policy,
    tau: float = 0.0,
    tol: float = 1e-10,
    entropy: np.ndarray | None = None,
    max_iter: int = 1_000_000,
) -> SoftValues:
    """Soft Q and V of ``policy``.

    ``entropy`` overrides the per-state entropy bonus, which lets continuous
    policies on an encoded MDP reuse the discrete machinery.
    """
    pi = _as_table(policy)
    H = _policy_entropy(pi) if entropy is None else np.asarray(entropy, dtype=float)
    live = ~mdp.terminal
    r_pi = np.where(live, (pi * mdp.reward).sum(-1) + tau * H, 0.0)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition) * live[:, None]
    n = mdp.n_states
    if n <= LINEAR_SOLVE_MAX_STATES:
        v = np.linalg.solve(np.eye(n) - mdp.gamma * P_pi, r_pi)
    else:
        v = np.zeros(n)
        for _ in range(max_iter):
            v_new = r_pi + mdp.gamma * P_pi @ v
            done = np.max(np.abs(v_new - v)) < tol * (1.0 - mdp.gamma)
            v = v_new
            if done:
                break
        else:
            raise EvaluationDivergedError(f"no convergence after {max_iter} sweeps")
    q = mdp.reward + mdp.gamma * mdp.transition @ v
    q = np.where(live[:, None], q, 0.0)
    return SoftValues(q, v, tau, tol)


def dp_soft_values(
    mdp: FiniteMdp,
    policy,
    tau: float = 0.0,
    rel_tol: float = 1e-4,
    patience: int = 10,
    q0: np.ndarray | None = None,
    max_iter: int = 1_000_000,
) -> SoftValues:
    """Iterative evaluation stopped once the relative change stays below ``rel_tol``
    for ``patience`` consecutive sweeps."""
    pi = _as_table(policy)
    live = ~mdp.terminal
    bonus = np.where(live, tau * _policy_entropy(pi), 0.0)
    q = np.zeros_like(mdp.reward) if q0 is None else np.array(q0, dtype=float)
    calm = 0
    for _ in range(max_iter):
        v = np.where(live, (pi * q).sum(-1) + bonus, 0.0)
        q_new = np.where(live[:, None], mdp.reward + mdp.gamma * mdp.transition @ v, 0.0)
        scale = max(np.max(np.abs(q)), 1e-12)
        calm = calm + 1 if np.max(np.abs(q_new - q)) / scale < rel_tol else 0
        q = q_new
        if calm >= patience:
            break
    else:
        raise EvaluationDivergedError(f"no convergence after {max_iter} sweeps")
    v = np.where(live, (pi * q).sum(-1) + bonus, 0.0)
    return SoftValues(q, v, tau, rel_tol)


def visitation_distribution(mdp: FiniteMdp, policy) -> StateDistribution:
    pi = _as_table(policy)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    n = mdp.n_states
    d = np.linalg.solve(np.eye(n) - mdp.gamma * P_pi.T, (1.0 - mdp.gamma) * mdp.start_dist)
    return StateDistribution(d)


def soft_performance(mdp: FiniteMdp, policy, tau: float = 0.0, **kw) -> float:
    return float(mdp.start_dist @ exact_soft_values(mdp, policy, tau, **kw).v)


def soft_advantage(values: SoftValues, policy, s: int, a: int) -> float:
    pi = _as_table(policy)
    if values.tau > 0 and pi[s, a] == 0:
        raise LogOfZeroError(f"pi({a}|{s}) = 0 with tau > 0")
    ent = values.tau * np.log(pi[s, a]) if values.tau > 0 else 0.0
    return float(values.q[s, a] - ent - values.v[s])


def encoded_policy_table(enc: ContinuousActionEncoding, policy, integrator: Integrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Probability of each action interval under a squashed-Gaussian policy."""
    rows = []
    for s in range(enc.base.n_states):
        try:
            rows.append(interval_masses(policy.at(s), enc.edges, integrator))
        except IntegrationError as exc:
            raise IntegrationError(f"state {s}: {exc}") from None
    return np.array(rows)


def polytope_point(enc: ContinuousActionEncoding, policy, integrator: Integrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Unregularised state values of the discretised policy."""
    return exact_soft_values(enc.base, encoded_policy_table(enc, policy, integrator), 0.0).v


def random_policy_table(n_states: int, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


# ---------------------------------------------------------------- builders


def switch_stay(gamma: float = 0.9) -> FiniteMdp:
    """Two states, actions (stay, switch)."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 1] = P[1, 1, 0] = 1.0
    R = np.array([[1.0, -1.0], [2.0, 0.0]])
    return FiniteMdp(P, R, gamma, np.array([1.0, 0.0]))


def switch_stay_encoding(gamma: float = 0.9) -> ContinuousActionEncoding:
    """Actions at or below zero stay, positive actions switch."""
    return ContinuousActionEncoding(switch_stay(gamma))


SWITCH_STAY_CORNERS = np.array([[10.0, 20.0], [17.0, 20.0], [10.0, 9.0], [-1.0 / 0.19, -0.9 / 0.19]])


@dataclass(frozen=True)
class BimodalBandit:
    """Single-state continuous bandit on (-1, 1) with a low mode at -1/2 and a high one at 1/2."""

    width: float = 0.2
    heights: tuple = (1.0, 1.5)
    centers: tuple = (-0.5, 0.5)

    def q(self, a):
        a = np.asarray(a, dtype=float)
        return sum(h * np.exp(-0.5 * ((a - c) * 2 / self.width) ** 2) for h, c in zip(self.heights, self.centers))

    def dq(self, a):
        a = np.asarray(a, dtype=float)
        out = 0.0
        for h, c in zip(self.heights, self.centers):
            z = (a - c) * 2 / self.width
            out = out + h * np.exp(-0.5 * z * z) * (-z * 2 / self.width)
        return out

    @property
    def best_action(self) -> float:
        # the low mode's tail shifts the peak by ~1e-22, far below float resolution
        return self.centers[int(np.argmax(self.heights))]


def bimodal_bandit() -> BimodalBandit:
    return BimodalBandit()


MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))  # up, right, down, left


@dataclass(frozen=True)
class Maze:
    width: int
    height: int
    walls: frozenset
    start: tuple
    goal: tuple
    mdp: FiniteMdp = field(repr=False)

    def index(self, cell) -> int:
        x, y = cell
        return y * self.width + x

    def cell(self, s: int) -> tuple:
        return s % self.width, s // self.width

    @property
    def step_reward(self) -> float:
        return -0.1 / (self.width * self.height)

    @property
    def next_state(self) -> np.ndarray:
        """Deterministic successor table ``[state][action]``."""
        return self.mdp.transition.argmax(-1)


def _wall_key(c1, c2) -> frozenset:
    return frozenset((tuple(c1), tuple(c2)))


def discrete_maze(width: int, height: int, walls, start=(0, 0), goal=None, gamma: float = 0.99) -> Maze:
    """Grid maze; ``walls`` lists blocked pairs of adjacent cells. Bumping a wall leaves the agent in place."""
    goal = (width - 1, height - 1) if goal is None else tuple(goal)
    start = tuple(start)
    blocked = frozenset(_wall_key(a, b) for a, b in walls)
    n = width * height
    P = np.zeros((n, 4, n))
    R = np.full((n, 4), -0.1 / n)
    goal_idx = goal[1] * width + goal[0]
    for s in range(n):
        x, y = s % width, s // width
        for a, (dx, dy) in enumerate(MOVES):
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height) or _wall_key((x, y), (nx, ny)) in blocked:
                nx, ny = x, y
            nxt = ny * width + nx
            if s == goal_idx:
                nxt = s
                R[s, a] = 0.0
            elif nxt == goal_idx:
                R[s, a] = 1.0
            P[s, a, nxt] = 1.0
    rho = np.zeros(n)
    rho[start[1] * width + start[0]] = 1.0
    term = np.zeros(n, bool)
    term[goal_idx] = True
    return Maze(width, height, blocked, start, goal, FiniteMdp(P, R, gamma, rho, term))


def generate_maze_walls(width: int, height: int, seed: int) -> list:
    """Walls of a perfect maze from a seeded depth-first carve."""
    rng = np.random.default_rng(seed)
    seen = {(0, 0)}
    stack = [(0, 0)]
    carved = set()
    while stack:
        x, y = stack[-1]
        options = [
            (x + dx, y + dy)
            for dx, dy in MOVES
            if 0 <= x + dx < width and 0 <= y + dy < height and (x + dx, y + dy) not in seen
        ]
        if not options:
            stack.pop()
            continue
        nxt = options[rng.integers(len(options))]
        carved.add(_wall_key((x, y), nxt))
        seen.add(nxt)
        stack.append(nxt)
    walls = []
    for y in range(height):
        for x in range(width):
            for nx, ny in ((x + 1, y), (x, y + 1)):
                if nx < width and ny < height and _wall_key((x, y), (nx, ny)) not in carved:
                    walls.append(((x, y), (nx, ny)))
    return walls


# ---------------------------------------------------------------- text format


def load_mdp_text(path_or_text) -> FiniteMdp:
    """Parse the plain-text MDP format written by ``dump_mdp_text``.

    Lines hold ``key value...``; ``transition`` is followed by S*A rows of S
    probabilities (state-major), ``reward`` by S rows of A numbers. ``#``
    starts a comment.
    """
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else str(path_or_text)
    if "\n" not in text and Path(text).exists():
        text = Path(text).read_text()
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    meta, i = {}, 0
    P = R = None
    while i < len(lines):
        key, *rest = lines[i].split()
        i += 1
        if key in ("states", "actions"):
            meta[key] = int(rest[0])
        elif key == "gamma":
            meta[key] = float(rest[0])
        elif key in ("start", "terminal"):
            meta[key] = [float(x) for x in rest]
        elif key == "transition":
            n, m = meta["states"], meta["actions"]
            rows = [[float(x) for x in lines[i + k].split()] for k in range(n * m)]
            P = np.array(rows).reshape(n, m, n)
            i += n * m
        elif key == "reward":
            rows = [[float(x) for x in lines[i + k].split()] for k in range(meta["states"])]
            R = np.array(rows)
            i += meta["states"]
        else:
            raise ValueError(f"unknown key {key!r} in MDP text")
    if P is None or R is None:
        raise ValueError("MDP text needs both transition and reward tables")
    term = np.array(meta["terminal"], bool) if "terminal" in meta else None
    return FiniteMdp(P, R, meta["gamma"], np.array(meta["start"]), term)


def dump_mdp_text(mdp: FiniteMdp) -> str:
    out = [
        f"states {mdp.n_states}",
        f"actions {mdp.n_actions}",
        f"gamma {mdp.gamma!r}",
        "start " + " ".join(repr(float(x)) for x in mdp.start_dist),
    ]
    if mdp.terminal.any():
        out.append("terminal " + " ".join(str(int(t)) for t in mdp.terminal))
    out.append("transition")
    out += [" ".join(repr(float(x)) for x in row) for row in mdp.transition.reshape(-1, mdp.n_states)]
    out.append("reward")
    out += [" ".join(repr(float(x)) for x in row) for row in mdp.reward]
    return "\n".join(out) + "\n"
