"""Reasoning sequences as binary features for predicate prediction.

Every successful episode contributes its relation-type action list. Replaying
a sequence on any query tells whether it connects subject and object; the
resulting 0/1 vector feeds a linear softmax classifier.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import env
from .env import EpisodeState, Query
from .neural import RMSprop, Param, softmax
from .tkg import TemporalKG


@dataclass
class ReasoningSequence:
    actions: tuple[int, ...]
    support: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.support.values())


class SequenceBank:
    """Success counts keyed by action sequence, then by true relation."""

    def __init__(self):
        self.counts: dict[tuple[int, ...], Counter] = {}

    def __len__(self) -> int:
        return len(self.counts)

    def record(self, actions, relation: int, count: int = 1) -> None:
        actions = tuple(int(a) for a in actions)
        if not actions:
            raise ValueError("empty reasoning sequence")
        self.counts.setdefault(actions, Counter())[int(relation)] += count

    def record_success(self, episode: EpisodeState) -> None:
        if episode.reward != 1 or episode.query.relation is None:
            raise ValueError("only successful episodes with a known relation are recorded")
        self.record(episode.action_history, episode.query.relation)

    def sequences(self) -> list[ReasoningSequence]:
        return [ReasoningSequence(a, Counter(c)) for a, c in self.counts.items()]

    def to_json(self, kg: TemporalKG) -> str:
        names = kg.relations.name
        items = sorted(self.counts.items())
        return json.dumps([{"actions": [names(a) for a in acts],
                            "support": {names(r): n for r, n in sorted(sup.items())}}
                           for acts, sup in items], indent=1)

    @classmethod
    def from_json(cls, text: str, kg: TemporalKG) -> "SequenceBank":
        bank = cls()
        ids = kg.relations
        for item in json.loads(text):
            acts = tuple(ids[a] for a in item["actions"])
            for rel, n in item["support"].items():
                bank.record(acts, ids[rel], n)
        return bank


def top_sequences_for(bank: SequenceBank, relation: int, m: int) -> list[tuple[int, ...]]:
    """The ``m`` sequences with the highest support for ``relation``."""
    scored = [(-sup[relation], acts) for acts, sup in bank.counts.items() if sup[relation] > 0]
    scored.sort()
    return [acts for _, acts in scored[:m]]


class FeatureBank:
    """Frozen, ordered list of sequences; position j is feature j."""

    def __init__(self, sequences: list[ReasoningSequence]):
        self.sequences = sequences

    @property
    def dim(self) -> int:
        return len(self.sequences)

    @classmethod
    def build(cls, bank: SequenceBank, m: int, n_relations: int,
              mode: str = "per_relation_union") -> "FeatureBank":
        if mode == "per_relation_union":
            chosen = set()
            for r in range(n_relations):
                chosen.update(top_sequences_for(bank, r, m))
        elif mode == "global_m":
            ranked = sorted(bank.counts, key=lambda a: (-sum(bank.counts[a].values()), a))
            chosen = set(ranked[:m])
        else:
            raise ValueError(f"unknown feature mode {mode!r}")
        seqs = [ReasoningSequence(a, Counter(bank.counts[a])) for a in chosen]
        seqs.sort(key=lambda s: (-s.total, s.actions))
        return cls(seqs)

    def to_json(self, kg: TemporalKG) -> str:
        names = kg.relations.name
        return json.dumps([{"actions": [names(a) for a in s.actions],
                            "support": {names(r): n for r, n in sorted(s.support.items())}}
                           for s in self.sequences], indent=1)

    @classmethod
    def from_json(cls, text: str, kg: TemporalKG) -> "FeatureBank":
        ids = kg.relations
        seqs = [ReasoningSequence(tuple(ids[a] for a in item["actions"]),
                                  Counter({ids[r]: n for r, n in item["support"].items()}))
                for item in json.loads(text)]
        return cls(seqs)


def _advance(kg: TemporalKG, state: EpisodeState, action: int, tknn: int) -> EpisodeState:
    if env.periphery_mask(kg, state)[action]:
        return env.step(kg, state, action, tknn)[0]
    return env.skip(state, action)


def apply_sequence(kg: TemporalKG, query: Query, actions, tknn: int,
                   max_steps: int = env.DEFAULT_MAX_STEPS) -> int:
    """Replay ``actions`` on ``query``; 1 iff the cores meet at some step."""
    if isinstance(actions, ReasoningSequence):
        actions = actions.actions
    state = env.reset(kg, query, tknn, max_steps)
    for a in actions:
        if state.done:
            break
        state = _advance(kg, state, a, tknn)
        if state.reward:
            return 1
    return 0


class _Trie:
    __slots__ = ("children", "leaves")

    def __init__(self):
        self.children: dict[int, _Trie] = {}
        self.leaves: list[int] = []

    def all_leaves(self):
        out = list(self.leaves)
        for child in self.children.values():
            out.extend(child.all_leaves())
        return out


def _build_trie(sequences) -> _Trie:
    root = _Trie()
    for j, seq in enumerate(sequences):
        acts = seq.actions if isinstance(seq, ReasoningSequence) else seq
        node = root
        for a in acts:
            node = node.children.setdefault(a, _Trie())
        node.leaves.append(j)
    return root


def featurize(kg: TemporalKG, query: Query, bank: FeatureBank, tknn: int,
              max_steps: int = env.DEFAULT_MAX_STEPS, _trie: _Trie | None = None) -> np.ndarray:
    """Binary vector; entry j = apply_sequence(query, bank.sequences[j]).

    Shared prefixes are replayed once by walking a trie of the sequences.
    """
    out = np.zeros(bank.dim, dtype=np.float64)
    if bank.dim == 0:
        return out
    trie = _trie if _trie is not None else _build_trie(bank.sequences)
    stack = [(trie, env.reset(kg, query, tknn, max_steps))]
    while stack:
        node, state = stack.pop()
        for a, child in node.children.items():
            if state.done:
                break
            nxt = _advance(kg, state, a, tknn)
            if nxt.reward:
                out[child.all_leaves()] = 1.0
            else:
                stack.append((child, nxt))
    return out


def featurize_many(kg: TemporalKG, queries, bank: FeatureBank, tknn: int,
                   max_steps: int = env.DEFAULT_MAX_STEPS) -> np.ndarray:
    trie = _build_trie(bank.sequences)
    return np.array([featurize(kg, q, bank, tknn, max_steps, trie) for q in queries],
                    dtype=np.float64).reshape(len(queries), bank.dim)


class PredicateClassifier:
    """Linear layer + softmax over relation types."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = Param(weights)
        self.bias = Param(bias)

    @classmethod
    def zeros(cls, n_features: int, n_relations: int) -> "PredicateClassifier":
        return cls(np.zeros((n_features, n_relations)), np.zeros(n_relations))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.value + self.bias.value

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> float:
        """Mean cross-entropy; accumulates gradients into the parameters."""
        p = self.predict_proba(x)
        n = len(y)
        loss = -np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean()
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        d /= n
        self.weights.grad += x.T @ d
        self.bias.grad += d.sum(axis=0)
        return float(loss)

    def params(self) -> list[Param]:
        return [self.weights, self.bias]

    def to_json(self) -> dict:
        return {"weights": self.weights.value.tolist(), "bias": self.bias.value.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "PredicateClassifier":
        w = np.array(data["weights"], dtype=np.float64)
        b = np.array(data["bias"], dtype=np.float64)
        return cls(w.reshape(-1, len(b)), b)


def train_classifier(features: np.ndarray, labels, n_relations: int, epochs: int = 100,
                     lr: float = 0.01, batch_size: int = 64, seed: int = 0,
                     history: list | None = None) -> PredicateClassifier:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[1] == 0:
        raise ValueError("classifier needs at least one feature")
    clf = PredicateClassifier.zeros(features.shape[1], n_relations)
    opt = RMSprop(clf.params(), lr=lr)
    rng = np.random.default_rng(seed)
    n = len(labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            clf.loss_and_grad(features[idx], labels[idx])
            opt.step()
        if history is not None:
            p = clf.predict_proba(features)
            history.append(float(-np.log(np.maximum(p[np.arange(n), labels], 1e-300)).mean()))
    opt.zero_grad()
    return clf


def filtered_rank(scores: np.ndarray, true_rel: int, known: set[int] | None = None) -> int:
    """1-based rank of ``true_rel`` after removing the other known relations.

    Equal scores rank the smaller relation id first.
    """
    scores = np.asarray(scores)
    keep = np.ones(len(scores), dtype=bool)
    if known:
        keep[list(known)] = False
    keep[true_rel] = True
    s = scores[true_rel]
    ids = np.arange(len(scores))
    better = keep & ((scores > s) | ((scores == s) & (ids < true_rel)))
    return int(better.sum()) + 1


def rank_relations(kg: TemporalKG, query: Query, bank: FeatureBank, clf: PredicateClassifier,
                   known_index: dict, tknn: int, key=None, features: np.ndarray | None = None,
                   max_steps: int = env.DEFAULT_MAX_STEPS) -> tuple[list[int], int]:
    """Ranked relation ids (filtered) and the filtered rank of the true relation."""
    if features is None:
        features = featurize(kg, query, bank, tknn, max_steps)
    scores = clf.predict_proba(features[None, :])[0]
    if key is None:
        key = (query.subject, query.object, query.time)
    known = known_index.get(key, set())
    r_true = query.relation
    drop = set(known) - {r_true}
    ids = np.arange(len(scores))
    ranked = [int(i) for i in sorted(ids, key=lambda i: (-scores[i], i)) if i not in drop]
    return ranked, filtered_rank(scores, r_true, known)
