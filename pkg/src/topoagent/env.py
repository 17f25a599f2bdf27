"""Bidirectional topology-expansion MDP.

The agent grows one topology around each query entity. A topology is a core
(facts already traversed) plus a periphery (incident facts that survived the
temporal kNN cap). An action is a relation type; it moves every periphery
fact of that type into the core on both sides at once. The episode pays 1 as
soon as the two cores share an entity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tkg import Fact, TemporalKG, incident_candidates, temporal_knn_filter

DEFAULT_MAX_STEPS = 5


class EpisodeError(RuntimeError):
    """Contract violation: stepping a finished episode or a masked action."""


@dataclass(frozen=True)
class Query:
    subject: int
    object: int
    time: int | None
    relation: int | None = None
    # graph fact hidden from traversal (the query fact itself during training)
    quad_id: int | None = None

    @classmethod
    def from_fact(cls, fact: Fact, hide: bool = False) -> "Query":
        return cls(fact.subject, fact.object, fact.anchor, fact.relation,
                   fact.quad_id if hide else None)

    @property
    def hidden(self) -> tuple[int, ...]:
        return () if self.quad_id is None else (self.quad_id,)


@dataclass(frozen=True)
class TopologyState:
    origin: int
    core: frozenset[int]
    periphery: frozenset[int]
    core_entities: frozenset[int]

    def quads(self) -> np.ndarray:
        """core ∪ periphery in ascending quad id order."""
        return np.array(sorted(self.core | self.periphery), dtype=np.int64)


@dataclass(frozen=True)
class EpisodeState:
    query: Query
    subject_topo: TopologyState
    object_topo: TopologyState
    step: int = 0
    action_history: tuple[int, ...] = ()
    done: bool = False
    reward: int = 0
    max_steps: int = DEFAULT_MAX_STEPS


def ent(kg: TemporalKG, core) -> frozenset[int]:
    """Entities (subjects and objects) of the given facts."""
    if not core:
        return frozenset()
    q = np.fromiter(core, np.int64, len(core))
    return frozenset(kg.subj[q].tolist()) | frozenset(kg.obj[q].tolist())


def periphery(kg: TemporalKG, frontier, core, query: Query, tknn: int) -> frozenset[int]:
    cands = incident_candidates(kg, frontier, core, query.hidden)
    return frozenset(temporal_knn_filter(kg, cands, query.time, tknn).tolist())


def _init_topology(kg: TemporalKG, origin: int, query: Query, tknn: int) -> TopologyState:
    frontier = frozenset([origin])
    return TopologyState(origin, frozenset(), periphery(kg, frontier, (), query, tknn), frontier)


def reset(kg: TemporalKG, query: Query, tknn: int,
          max_steps: int = DEFAULT_MAX_STEPS) -> EpisodeState:
    sub = _init_topology(kg, query.subject, query, tknn)
    obj = _init_topology(kg, query.object, query, tknn)
    stranded = not sub.periphery and not obj.periphery
    return EpisodeState(query, sub, obj, done=stranded or max_steps <= 0, max_steps=max_steps)


def legal_actions(kg: TemporalKG, state: EpisodeState) -> np.ndarray:
    """Boolean mask over relations present in either periphery."""
    if state.done:
        raise EpisodeError("episode already finished")
    return periphery_mask(kg, state)


def periphery_mask(kg: TemporalKG, state: EpisodeState) -> np.ndarray:
    mask = np.zeros(kg.n_relations, dtype=bool)
    peri = state.subject_topo.periphery | state.object_topo.periphery
    if peri:
        mask[kg.rel[np.fromiter(peri, np.int64, len(peri))]] = True
    return mask


def _expand(kg: TemporalKG, topo: TopologyState, action: int, query: Query,
            tknn: int) -> TopologyState:
    taken = frozenset(q for q in topo.periphery if kg.rel[q] == action)
    if not taken:
        return topo
    core = topo.core | taken
    frontier = topo.core_entities | ent(kg, taken)
    return TopologyState(topo.origin, core, periphery(kg, frontier, core, query, tknn), frontier)


def step(kg: TemporalKG, state: EpisodeState, action: int,
         tknn: int) -> tuple[EpisodeState, int, bool]:
    """Apply one relation-type action to both topologies."""
    mask = legal_actions(kg, state)
    if not 0 <= action < len(mask) or not mask[action]:
        raise EpisodeError(f"relation {action} is not a legal action")
    sub = _expand(kg, state.subject_topo, action, state.query, tknn)
    obj = _expand(kg, state.object_topo, action, state.query, tknn)
    reward = int(bool(ent(kg, sub.core) & ent(kg, obj.core)))
    n = state.step + 1
    done = reward == 1 or n >= state.max_steps or (not sub.periphery and not obj.periphery)
    new = EpisodeState(state.query, sub, obj, n, state.action_history + (action,),
                       done, reward, state.max_steps)
    return new, reward, done


def skip(state: EpisodeState, action: int) -> EpisodeState:
    """Consume a step without expanding (replay of an unavailable action)."""
    if state.done:
        raise EpisodeError("episode already finished")
    n = state.step + 1
    return EpisodeState(state.query, state.subject_topo, state.object_topo, n,
                        state.action_history + (action,), n >= state.max_steps, 0,
                        state.max_steps)
