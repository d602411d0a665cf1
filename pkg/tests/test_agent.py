from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import chisquare

from klgreed.agent import (
    Batch,
    MdpEnv,
    ReplayBuffer,
    TabularCritics,
    TrainConfig,
    Transition,
    agent_step,
    frozen_policy_critic_check,
    maze_layout,
    optimal_greedy_actions,
    reachable_states,
    total_variation,
    train,
    true_value_training,
    value_updates,
    visitation_rollouts,
)
from klgreed.errors import TemperatureDomainError
from klgreed.greedify import HARD_RKL
from klgreed.mdp import exact_soft_values, switch_stay
from klgreed.policy import SoftmaxPolicy, entropy, rng_stream


def one(tr: Transition) -> Batch:
    return Batch(np.array([tr.s]), np.array([tr.a]), np.array([tr.r]), np.array([tr.s_next]), np.array([tr.done]))


# ---------------------------------------------------------------- environment and buffer


def test_maze_step_rewards():
    maze = maze_layout("maze5")
    env = MdpEnv(maze.mdp, rng_stream(0))
    buf = ReplayBuffer(10)
    tr = agent_step(env, SoftmaxPolicy.uniform(25, 4), buf, rng_stream(1))
    if not tr.done:
        assert tr.r == pytest.approx(-0.1 / 25)
    goal = maze.index(maze.goal)
    s, a = next((s, a) for s in range(25) for a in range(4) if maze.next_state[s, a] == goal and s != goal)
    logits = np.full((25, 4), -50.0)
    logits[:, a] = 50.0
    env.state = s
    tr = agent_step(env, SoftmaxPolicy(logits), buf, rng_stream(2))
    assert tr.r == 1.0 and tr.done and tr.s_next == goal
    assert env.state == maze.index(maze.start)  # reset after the terminal step


def test_timeout_is_not_terminal():
    maze = maze_layout("maze10")
    env = MdpEnv(maze.mdp, rng_stream(3), timeout=5)
    buf = ReplayBuffer(1000)
    pi = SoftmaxPolicy.uniform(100, 4)
    rng = rng_stream(4)
    trs = [agent_step(env, pi, buf, rng) for _ in range(400)]
    goal = maze.index(maze.goal)
    start = maze.index(maze.start)
    since_reset = 0
    for tr, nxt in zip(trs, trs[1:]):
        assert tr.done == (tr.s_next == goal)
        since_reset += 1
        if tr.done or since_reset == 5:
            assert nxt.s == start
            since_reset = 0
    assert sum(buf._done) == sum(t.done for t in trs)


def test_replay_ring_and_uniformity():
    buf = ReplayBuffer(100)
    for i in range(250):
        buf.add(Transition(i, 0, 0.0, i, False))
    assert len(buf) == 100
    assert sorted(t.s for t in buf.transitions()) == list(range(150, 250))
    idx = buf.sample_indices(100_000, rng_stream(5))
    _, p = chisquare(np.bincount(idx, minlength=100))
    assert p > 0.001
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(1, rng_stream(0))


# ---------------------------------------------------------------- critic updates


def test_done_target_is_reward_alone():
    critics = TabularCritics(np.zeros((2, 2)), np.array([0.0, 100.0]))
    pi = SoftmaxPolicy.uniform(2, 2)
    tr = Transition(0, 1, 0.7, 1, True)
    _, g_v = value_updates(one(tr), pi, critics, 0.0, rng_stream(0), 0.9)
    assert g_v[0, 1] == pytest.approx(-0.7)
    _, g_v = value_updates(one(Transition(0, 1, 0.7, 1, False)), pi, critics, 0.0, rng_stream(0), 0.9)
    assert g_v[0, 1] == pytest.approx(-(0.7 + 90.0))


def test_identical_batch_equals_single():
    rng = np.random.default_rng(0)
    critics = TabularCritics(rng.normal(size=(2, 2)), rng.normal(size=2))
    pi = SoftmaxPolicy(np.array([[0.0, 50.0], [50.0, 0.0]]))  # deterministic draws of a~
    tr = Transition(1, 0, 0.3, 0, False)
    single = value_updates(one(tr), pi, critics, 0.2, rng_stream(1), 0.9)
    b = Batch(*(np.repeat(x, 32) for x in (one(tr).s, one(tr).a, one(tr).r, one(tr).s_next, one(tr).done)))
    batch = value_updates(b, pi, critics, 0.2, rng_stream(2), 0.9)
    for x, y in zip(single, batch):
        assert np.allclose(x, y)


def test_exact_critics_are_a_fixed_point():
    mdp = switch_stay()
    pi = SoftmaxPolicy(np.log([[0.4, 0.6], [0.7, 0.3]]))
    tau = 0.1
    ex = exact_soft_values(mdp, pi, tau)
    critics = TabularCritics(ex.q.copy(), ex.v.copy())
    rng = np.random.default_rng(6)
    gw, gv = [], []
    for _ in range(10_000):
        s = int(rng.integers(2))
        a = int(rng.choice(2, p=pi.probs(s)))
        s2 = int(rng.choice(2, p=mdp.transition[s, a]))
        w, v = value_updates(one(Transition(s, a, mdp.reward[s, a], s2, False)), pi, critics, tau, rng, mdp.gamma)
        gw.append(w)
        gv.append(v.ravel())
    for g in (np.array(gw), np.array(gv)):
        mean, se = g.mean(0), g.std(0, ddof=1) / np.sqrt(len(g))
        assert np.all(np.abs(mean) <= 3 * se + 1e-12)


def test_critic_consistency_frozen_policy():
    pi = SoftmaxPolicy(np.log([[0.4, 0.6], [0.7, 0.3]]))
    critics, ex = frozen_policy_critic_check(switch_stay(), pi, 0.1, 100_000, seed=0)
    assert np.max(np.abs(critics.q_beta - ex.q)) < 0.05
    assert np.max(np.abs(critics.v_w - ex.v)) < 0.05


# ---------------------------------------------------------------- training


def test_train_is_deterministic():
    cfg = TrainConfig(env="maze5", kl="fkl", tau=0.1, iterations=400, n_checkpoints=2, rollouts=5, rollout_max_steps=50, seed=3)
    a, b = train(cfg), train(cfg)
    assert a.curve == b.curve
    for k in a.visitation:
        assert np.array_equal(a.visitation[k], b.visitation[k])
    assert [r["step"] for r in a.curve] == [0, 200, 400]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nan_is_recorded():
    cfg = TrainConfig(env="switch_stay", kl="rkl", tau=0.0, iterations=100, lr_actor=1e308, lr_critic=1e308, gamma=0.9)
    res = train(cfg)
    assert res.error is not None and "step" in res.error


def test_train_config_validation():
    assert TrainConfig(kl="rkl", tau=0.0).variant() == HARD_RKL
    with pytest.raises(TemperatureDomainError):
        TrainConfig(kl="soft_rkl", tau=0.0).variant()


def test_true_value_training_hard():
    maze = maze_layout("maze5")
    snaps = true_value_training(maze, "rkl", 0.0)
    assert len(snaps) == 101
    assert np.array_equal(snaps[0].logits, SoftmaxPolicy.uniform(25, 4).logits)
    opt = optimal_greedy_actions(maze.mdp)
    live = [s for s in reachable_states(maze) if not maze.mdp.terminal[s]]
    greedy = snaps[-1].logits.argmax(-1)
    assert np.mean([opt[s, greedy[s]] for s in live]) >= 0.99


def test_true_value_training_entropy():
    maze = maze_layout("maze5")
    live = np.flatnonzero(~maze.mdp.terminal)
    ent = {}
    for tau in (0.0, 0.1):
        final = true_value_training(maze, "fkl", tau)[-1]
        ent[tau] = np.mean([entropy(final, s) for s in live])
    assert ent[0.1] > ent[0.0]


def test_visitation_rollouts_normalised():
    maze = maze_layout("maze5")
    d = visitation_rollouts(maze, SoftmaxPolicy.uniform(25, 4), 20, 100, rng_stream(0))
    assert d.sum() == pytest.approx(1.0)
    assert total_variation(d, d) == 0.0


@pytest.mark.parametrize("kl", ["rkl", "fkl"])
def test_maze10_estimated_values_reach_goal(kl):
    # final greedy rollout must reach the goal in at least 25 of 30 seeds
    hits = 0
    for seed in range(30):
        cfg = TrainConfig(env="maze10", kl=kl, tau=0.0, seed=seed, n_checkpoints=1, rollouts=1)
        hits += bool(train(cfg).reached_goal)
    assert hits >= 25, f"{kl}: {hits}/30 seeds reached the goal"
