import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import make_kg, numeric_grad, random_rows, rel_error
from topoagent import env
from topoagent.config import TrainConfig
from topoagent.dqn import (Agent, QModel, ReplayMemory, Snapshot, Transition, epsilon,
                           greedy_episode, log_rows, moving_average, q_values, select_action, train)
from topoagent.env import Query
from topoagent.neural import aggregate, embed_state, fingerprint
from topoagent.tkg import Quadruple


def small_graph(seed=0):
    rng = np.random.default_rng(seed)
    return make_kg(random_rows(rng, 12, 4, 6, 40), 12, 4, 6)


def rollout_states(kg, n=10, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        u, v = rng.choice(kg.n_entities, 2, replace=False)
        s = env.reset(kg, Query(int(u), int(v), int(rng.integers(kg.n_times))), 3)
        while not s.done:
            out.append(s)
            legal = np.flatnonzero(env.legal_actions(kg, s))
            s, *_ = env.step(kg, s, int(rng.choice(legal)), 3)
    return out[:n]


@pytest.mark.parametrize("aggregation", ["concat", "sum", "max", "hadamard"])
def test_qmodel_gradients(aggregation):
    kg = small_graph()
    cfg = TrainConfig(aggregation=aggregation, d_r=3, d_t=3, d_f=4, fingerprint_hidden=(5,),
                      qnet_hidden=(6,))
    rng = np.random.default_rng(1)
    model = QModel.create(kg, cfg, rng)
    for layer in model.fp.mlp.layers + model.qnet.layers:
        layer.bias.value[...] = rng.normal(0, 0.5, size=layer.bias.value.shape)
    states = rollout_states(kg, 4)
    subs = [s.subject_topo.quads() for s in states]
    objs = [s.object_topo.quads() for s in states]
    c = rng.normal(size=(len(states), kg.n_relations))
    loss = lambda: float((model.forward(kg, subs, objs) * c).sum())  # noqa: E731
    for p in model.params():
        p.zero_grad()
    model.forward(kg, subs, objs)
    model.backward(c)
    for p in model.params():
        assert rel_error(p.grad, numeric_grad(loss, p.value)) < 1e-4


def test_q_values_hadamard():
    class Fixed:
        def raw_q(self, kg, state):
            return np.array([0.5, -0.2, 0.9])
    got = q_values(None, None, Fixed(), np.array([1, 0, 1]))
    assert got.tolist() == [0.5, 0.0, 0.9]
    assert not q_values(None, None, Fixed(), np.zeros(3)).any()


def test_q_values_match_staged_oracle():
    kg = small_graph()
    cfg = TrainConfig()
    model = QModel.create(kg, cfg, np.random.default_rng(0))
    for s in rollout_states(kg, 5):
        mask = env.legal_actions(kg, s)
        phi = [fingerprint(embed_state(kg, t.quads(), model.fp.psi, model.fp.xi), model.fp.mlp)
               for t in (s.subject_topo, s.object_topo)]
        want = model.qnet.forward(aggregate(phi[0], phi[1])[None])[0] * mask
        np.testing.assert_allclose(q_values(kg, s, model, mask), want, rtol=1e-12, atol=1e-12)


def test_epsilon_schedule():
    cfg = TrainConfig()
    assert epsilon(0, cfg) == 1.0
    assert epsilon(10**9, cfg) == pytest.approx(cfg.eps_end)
    assert epsilon(1000, cfg) == pytest.approx(0.05 + 0.95 * math.exp(-1e-2))


def test_select_action_greedy_and_ties():
    rng = np.random.default_rng(0)
    mask = np.array([1, 0, 1, 1], dtype=bool)
    assert select_action(np.array([0.1, 9.0, 0.3, -1.0]), mask, 0.0, rng) == 2
    # masked entries read 0 after the Hadamard product; negative legal values still win
    assert select_action(np.array([-0.5, 0.0, -0.2, -0.9]), mask, 0.0, rng) == 2
    assert select_action(np.array([0.3, 0.0, 0.3, 0.3]), mask, 0.0, rng) == 0
    with pytest.raises(env.EpisodeError):
        select_action(np.zeros(4), np.zeros(4, dtype=bool), 0.5, rng)


@settings(max_examples=200)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8), st.floats(0.001, 100))
def test_select_action_scale_invariant(q, scale):
    q = np.array(q)
    mask = np.ones(len(q), dtype=bool)
    mask[0] = False
    rng = np.random.default_rng(0)
    assert select_action(q, mask, 0.0, rng) == select_action(q * scale, mask, 0.0, rng)


def test_exploration_is_uniform():
    rng = np.random.default_rng(0)
    mask = np.zeros(6, dtype=bool)
    mask[[1, 3, 4]] = True
    n = 100_000
    picks = np.array([select_action(np.zeros(6), mask, 1.0, rng) for _ in range(n)])
    counts = np.bincount(picks, minlength=6)
    assert counts[~mask].sum() == 0
    expected = n / 3
    assert np.all(np.abs(counts[mask] - expected) < 3 * math.sqrt(expected * (2 / 3)))


def test_replay_fifo():
    mem = ReplayMemory(5)
    for i in range(12):
        mem.push(i)
    assert len(mem) == 5 and mem.items() == [7, 8, 9, 10, 11]
    rng = np.random.default_rng(0)
    assert set(mem.sample(50, rng)) <= {7, 8, 9, 10, 11}


def terminal(reward, action=0):
    s = Snapshot((), (), (), (), 0, np.array([0]), np.array([1]))
    return Transition(s, action, reward, None, None, True)


def zero_head_agent(kg, **kw):
    agent = Agent(kg, TrainConfig(batch_size=2, **kw))
    last = agent.model.qnet.layers[-1]
    last.weight.value[...] = 0.0
    last.bias.value[...] = 0.0
    return agent


def test_td_terminal_unit_loss():
    kg = small_graph()
    agent = zero_head_agent(kg)
    assert agent.td_update([terminal(1)]) == pytest.approx(1.0)


def test_td_fixed_point():
    kg = small_graph()
    agent = zero_head_agent(kg)
    agent.model.qnet.layers[-1].bias.value[...] = 1.0
    before = [p.value.copy() for p in agent.model.params()]
    agent.cfg.weight_decay = 0.0
    agent.optimizer.weight_decay = 0.0
    assert agent.td_update([terminal(1, 0), terminal(1, 2)]) == 0.0
    assert all(not p.grad.any() for p in agent.model.params())
    assert all(np.array_equal(a, p.value) for a, p in zip(before, agent.model.params()))


def test_td_loss_matches_loop():
    kg = small_graph(3)
    agent = Agent(kg, TrainConfig(gamma=0.9, seed=4))
    states = rollout_states(kg, 8, seed=3)
    batch = []
    for s in states:
        mask = env.legal_actions(kg, s)
        a = int(np.flatnonzero(mask)[0])
        nxt, r, done = env.step(kg, s, a, agent.cfg.tknn)
        batch.append(Transition(Snapshot.of(s), a, r, None if done else Snapshot.of(nxt),
                                None if done else env.legal_actions(kg, nxt), done))
    want = 0.0
    for t in batch:
        y = t.reward
        if not t.done:
            qn = agent.target.forward(kg, [t.next_state.subject_quads], [t.next_state.object_quads])[0]
            y += 0.9 * qn[t.next_mask].max()
        q = agent.model.forward(kg, [t.state.subject_quads], [t.state.object_quads])[0][t.action]
        want += (q - y) ** 2
    assert agent.td_update(batch) == pytest.approx(want / len(batch), rel=1e-12)


def test_gamma_zero_targets_are_rewards():
    kg = small_graph()
    agent = Agent(kg, TrainConfig(gamma=0.0))
    s = rollout_states(kg, 1)[0]
    snap = Snapshot.of(s)
    batch = [Transition(snap, 0, 0, snap, np.ones(kg.n_relations, bool), False),
             Transition(snap, 1, 1, None, None, True)]
    assert agent.td_targets(batch).tolist() == [0.0, 1.0]


def test_target_network_staleness():
    cfg = TrainConfig(batch_size=4, target_sync=3, seed=1)
    kg = small_graph()
    agent = Agent(kg, cfg)
    s = rollout_states(kg, 1)[0]
    snap = Snapshot.of(s)
    batch = [Transition(snap, 0, 1, None, None, True)] * 4
    synced = [p.value.copy() for p in agent.target.params()]
    for i in range(1, 7):
        agent.td_update(batch)
        now = [p.value.copy() for p in agent.target.params()]
        if i % 3 == 0:
            assert all(np.array_equal(a, p.value) for a, p in zip(now, agent.model.params()))
            synced = now
        else:
            assert all(np.array_equal(a, b) for a, b in zip(now, synced))


def test_zero_reward_plateau():
    # two components, queries always across them: nothing is ever connectable
    rows = [(0, 0, 1, 0), (1, 1, 2, 1), (3, 0, 4, 0), (4, 1, 5, 1)]
    kg = make_kg(rows)
    facts = [Quadruple(0, 2, 3, 0, 0)] * 10
    cfg = TrainConfig(batch_size=2, lr=1e-2, gamma=0.0, weight_decay=0.0, seed=0, epochs=1)
    agent = Agent(kg, cfg)
    probe = env.reset(kg, Query(0, 3, 0), cfg.tknn)
    start = np.abs(agent.model.raw_q(kg, probe)).max()
    _, bank, logs = train(kg, facts, cfg, agent=agent)
    assert all(lg.reward == 0 for lg in logs) and len(bank) == 0
    assert not agent.td_targets(agent.memory.items()).any()
    for _ in range(200):
        agent.maybe_update()
    assert np.abs(agent.model.raw_q(kg, probe)).max() < start


def test_training_is_deterministic():
    kg = small_graph(2)
    facts = [Quadruple(*row, i) for i, row in enumerate(random_rows(np.random.default_rng(9),
                                                                    12, 4, 6, 30))]
    cfg = TrainConfig(batch_size=8, seed=3, eps_decay=1e-2)
    runs = [train(kg, facts, cfg) for _ in range(2)]
    assert [lg.reward for lg in runs[0][2]] == [lg.reward for lg in runs[1][2]]
    a, b = runs[0][0].model.to_json(), runs[1][0].model.to_json()
    assert a == b


def test_train_limits_and_bank():
    rows = [(0, 0, 1, 0), (1, 1, 2, 0), (0, 2, 2, 0)]
    kg = make_kg(rows)
    cfg = TrainConfig(batch_size=2, epochs=50, max_episodes=30)
    agent, bank, logs = train(kg, [kg.facts[2]], cfg)
    assert len(logs) == 30
    # the query fact is hidden, so only the two-hop detour can succeed
    assert set(bank.counts) <= {(0, 1), (1, 0), (0,), (1,), (0, 1, 0), (1, 0, 1)}
    assert all(2 in sup for sup in bank.counts.values())
    assert sum(lg.reward for lg in logs) == sum(sum(c.values()) for c in bank.counts.values())


def test_moving_average_matches_window_oracle():
    rng = np.random.default_rng(0)
    v = rng.integers(0, 2, 2000).astype(float)
    got = moving_average(v, 500)
    for i in (0, 10, 499, 500, 1999):
        lo = max(0, i - 499)
        assert abs(got[i] - v[lo:i + 1].mean()) < 1e-9


def test_log_rows_columns():
    kg = small_graph()
    facts = kg.facts[:5]
    _, _, logs = train(kg, facts, TrainConfig(batch_size=2))
    rows = log_rows(logs)
    assert len(rows) == 5 and rows[0]["epsilon"] == 1.0
    assert set(rows[0]) == {"episode", "reward", "reward_ma500", "reward_ma10000", "epsilon",
                            "loss", *(f"mean_actions_step{i}" for i in range(1, 6))}


def test_json_round_trip_preserves_q():
    kg = small_graph()
    model = QModel.create(kg, TrainConfig(), np.random.default_rng(0))
    back = QModel.from_json(model.to_json(), kg.interval, "concat")
    for s in rollout_states(kg, 20):
        assert np.array_equal(model.raw_q(kg, s), back.raw_q(kg, s))


def test_greedy_episode_starts_at_reset():
    kg = make_kg([(0, 0, 1, 0)])
    model = QModel.create(kg, TrainConfig(), np.random.default_rng(0))
    states = greedy_episode(kg, model, Query(0, 1, 0), 5)
    assert states[0].step == 0 and states[-1].reward == 1 and len(states) == 2
