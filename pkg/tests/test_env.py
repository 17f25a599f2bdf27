import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import OracleEpisode, connected, entities_of, graphs, make_kg
from topoagent import env
from topoagent.env import EpisodeError, Query

U, A, V, B, C = range(5)
R1, R2, R3 = range(3)


@pytest.fixture
def chain():
    # u -r1- a -r2- v plus a distractor hanging off a
    return make_kg([(U, R1, A, 3), (A, R2, V, 4), (A, R3, B, 5)], n_entities=5)


def test_single_edge_state():
    kg = make_kg([(0, 2, 1, 0)], n_relations=4)
    s = env.reset(kg, Query(0, 1, 0), tknn=5)
    assert s.subject_topo.periphery == s.object_topo.periphery == {0}
    assert env.legal_actions(kg, s).tolist() == [False, False, True, False]


def test_direct_edge_rewards_at_step_one():
    kg = make_kg([(0, 0, 1, 0)])
    s, r, done = env.step(kg, env.reset(kg, Query(0, 1, 0), 5), 0, 5)
    assert (r, done, s.step) == (1, True, 1)
    assert env.ent(kg, s.subject_topo.core) == env.ent(kg, s.object_topo.core) == {0, 1}


def test_hidden_query_fact_is_not_traversable():
    kg = make_kg([(0, 0, 1, 0)])
    s = env.reset(kg, Query(0, 1, 0, relation=0, quad_id=0), 5)
    assert s.done and s.reward == 0


def test_stranded_query():
    kg = make_kg([(0, 0, 1, 0)], n_entities=4)
    s = env.reset(kg, Query(2, 3, 0), 5)
    assert s.done and s.reward == 0 and s.step == 0
    with pytest.raises(EpisodeError):
        env.legal_actions(kg, s)


def test_one_sided_start_is_live(chain):
    # B touches the distractor, C is isolated: one periphery suffices
    s = env.reset(chain, Query(B, C, 0), 5)
    assert not s.done and s.object_topo.periphery == frozenset()


def test_chain(chain):
    s = env.reset(chain, Query(U, V, 4), 5)
    s, r, done = env.step(chain, s, R1, 5)
    assert (r, done) == (0, False)
    # the object side had no r1 fact: unchanged
    assert s.object_topo.core == frozenset()
    s, r, done = env.step(chain, s, R2, 5)
    assert (r, done) == (1, True)
    shared = env.ent(chain, s.subject_topo.core) & env.ent(chain, s.object_topo.core)
    assert shared == {A, V}


def test_mask_bits():
    kg = make_kg([(0, 2, 1, 0), (1, 5, 2, 0)], n_relations=6)
    s = env.reset(kg, Query(0, 2, 0), 5)
    assert np.flatnonzero(env.legal_actions(kg, s)).tolist() == [2, 5]


def test_expanding_clears_bit_unless_new_edges_arrive():
    rows = [(0, 2, 1, 0), (1, 2, 3, 0), (3, 1, 4, 0), (4, 0, 2, 0)]
    kg = make_kg(rows, n_entities=5)
    s = env.reset(kg, Query(0, 2, 0), 10)
    s, *_ = env.step(kg, s, 2, 10)
    # (1, r2, 3) entered the subject periphery through entity 1
    assert env.legal_actions(kg, s)[2]
    kg2 = make_kg([(0, 2, 1, 0), (1, 1, 3, 0), (3, 0, 2, 0)], n_entities=4)
    s2 = env.reset(kg2, Query(0, 2, 0), 10)
    s2, *_ = env.step(kg2, s2, 2, 10)
    assert not env.legal_actions(kg2, s2)[2]


def test_tknn_two_gives_two_actions():
    # four facts around the subject, two of them close to the query time
    rows = [(0, 0, 1, 5), (0, 1, 2, 6), (0, 2, 3, 20), (0, 3, 4, 30), (5, 0, 6, 5)]
    kg = make_kg(rows)
    s = env.reset(kg, Query(0, 5, 5), tknn=2)
    assert len(s.subject_topo.periphery) == 2
    assert env.legal_actions(kg, s).sum() == 2


def test_masked_action_is_rejected(chain):
    s = env.reset(chain, Query(U, V, 4), 5)
    with pytest.raises(EpisodeError):
        env.step(chain, s, R3, 5)
    with pytest.raises(EpisodeError):
        env.step(chain, s, 99, 5)


def test_episode_budget():
    rows = [(i, 0, i + 1, 0) for i in range(20)]
    kg = make_kg(rows)
    s = env.reset(kg, Query(0, 20, 0), 1, max_steps=3)
    while not s.done:
        s, *_ = env.step(kg, s, 0, 1)
    assert s.step == 3 and s.reward == 0 and len(s.action_history) == 3


def test_ent():
    kg = make_kg([(0, 0, 1, 0), (2, 0, 3, 0)])
    assert env.ent(kg, frozenset()) == frozenset()
    assert env.ent(kg, {1}) == {2, 3}
    rng = np.random.default_rng(0)
    rows = [tuple(int(x) for x in rng.integers(0, 9, 4)) for _ in range(50)]
    kg = make_kg(rows, 9, 9, 9)
    assert env.ent(kg, set(range(50))) == entities_of(rows, range(50))


def run_pair(rows, n_e, n_r, query, tknn, choices):
    """Drive the implementation and the oracle with the same action choices."""
    kg = make_kg(rows, n_e, n_r)
    s = env.reset(kg, query, tknn)
    o = OracleEpisode(rows, query.subject, query.object, query.time, tknn, exclude=query.hidden)
    yield kg, s, o
    for pick in choices:
        if s.done:
            break
        legal = np.flatnonzero(o.mask(n_r))
        a = int(legal[pick % len(legal)])
        prev = s
        s, r, done = env.step(kg, s, a, tknn)
        o.act(a)
        yield kg, s, o
        for new, old in ((s.subject_topo, prev.subject_topo), (s.object_topo, prev.object_topo)):
            assert old.core <= new.core


@settings(max_examples=300, deadline=None)
@given(graphs(), st.data())
def test_matches_oracle(g, data):
    rows, n_e, n_r, n_t = g
    u = data.draw(st.integers(0, n_e - 1))
    v = data.draw(st.integers(0, n_e - 1).filter(lambda x: x != u))
    t = data.draw(st.integers(0, n_t - 1))
    tknn = data.draw(st.integers(1, 25))
    hide = data.draw(st.none() | st.integers(0, len(rows) - 1))
    choices = data.draw(st.lists(st.integers(0, 50), min_size=5, max_size=5))
    query = Query(u, v, t, quad_id=hide)
    for kg, s, o in run_pair(rows, n_e, n_r, query, tknn, choices):
        assert s.subject_topo.periphery == o.peri[0]
        assert s.object_topo.periphery == o.peri[1]
        assert s.subject_topo.core == o.core[0] and s.object_topo.core == o.core[1]
        assert (s.reward, s.done, s.step) == (o.reward, o.done, o.step)
        if not s.done:
            assert (env.legal_actions(kg, s) == o.mask(n_r)).all()
        for topo in (s.subject_topo, s.object_topo):
            assert not topo.core & topo.periphery
            assert all(kg.subj[q] in topo.core_entities or kg.obj[q] in topo.core_entities
                       for q in topo.periphery)
        if s.reward:
            assert connected(rows, s.subject_topo.core | s.object_topo.core, u, v)


@settings(max_examples=100, deadline=None)
@given(graphs(), st.data())
def test_legal_action_always_expands(g, data):
    rows, n_e, n_r, _ = g
    kg = make_kg(rows, n_e, n_r)
    u, v = data.draw(st.integers(0, n_e - 1)), data.draw(st.integers(0, n_e - 1))
    s = env.reset(kg, Query(u, v, 0), 3)
    if s.done:
        return
    for a in np.flatnonzero(env.legal_actions(kg, s)):
        nxt, *_ = env.step(kg, s, int(a), 3)
        grown = (len(nxt.subject_topo.core) - len(s.subject_topo.core)
                 + len(nxt.object_topo.core) - len(s.object_topo.core))
        assert grown >= 1


def test_determinism(chain):
    def final():
        s = env.reset(chain, Query(U, V, 4), 5)
        for a in (R1, R2):
            s, *_ = env.step(chain, s, a, 5)
        return s
    assert final() == final()
