"""Temporal knowledge graph store.

Facts are interned into dense integer ids. The traversable graph holds the
train split only; vocabularies cover every split so evaluation queries can
always be encoded. Each entity keeps a time-sorted adjacency array of the
quad ids it touches as subject or object.
"""
from __future__ import annotations

import datetime
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NO_TIME = -1  # anchor value of facts without any timestamp

YAGO_KEYWORDS = ("occursSince", "occursUntil")


class LoadError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class Quadruple:
    subject: int
    relation: int
    object: int
    time: int
    quad_id: int

    @property
    def anchor(self) -> int:
        return self.time


@dataclass(frozen=True)
class IntervalFact:
    subject: int
    relation: int
    object: int
    since: int | None
    until: int | None
    quad_id: int

    @property
    def anchor(self) -> int:
        # the kNN filter needs one point per fact: since first, then until
        if self.since is not None:
            return self.since
        if self.until is not None:
            return self.until
        return NO_TIME

    @property
    def time(self) -> tuple[int | None, int | None]:
        return (self.since, self.until)


Fact = Quadruple | IntervalFact


class Vocab:
    """Bidirectional string <-> id mapping."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: list[str] = []
        self.ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self.ids.get(name)
        if idx is None:
            idx = len(self.names)
            self.ids[name] = idx
            self.names.append(name)
        return idx

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.ids

    def __getitem__(self, name: str) -> int:
        return self.ids[name]

    def name(self, idx: int) -> str:
        return self.names[idx]

    def to_dict(self) -> dict[str, int]:
        return dict(self.ids)


@dataclass
class Split:
    train: list
    valid: list
    test: list
    known_index: dict[tuple, set[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.known_index:
            for fact in (*self.train, *self.valid, *self.test):
                self.known_index.setdefault(fact_key(fact), set()).add(fact.relation)


def fact_key(fact: Fact) -> tuple:
    """(subject, object, time) key used by the filtered ranking protocol."""
    return (fact.subject, fact.object, fact.time)


class TemporalKG:
    """Immutable interned graph over the train facts.

    ``interval`` graphs carry ``since``/``until`` columns; their time
    embedding table reserves one extra id per slot for missing values.
    """

    def __init__(self, entities: Vocab, relations: Vocab, times: Vocab,
                 facts: Sequence[Fact], interval: bool = False):
        if not facts:
            raise LoadError("empty graph")
        self.entities = entities
        self.relations = relations
        self.times = times
        self.interval = interval
        self.facts = list(facts)
        n = len(self.facts)
        self.subj = np.fromiter((f.subject for f in self.facts), np.int64, n)
        self.rel = np.fromiter((f.relation for f in self.facts), np.int64, n)
        self.obj = np.fromiter((f.object for f in self.facts), np.int64, n)
        self.anchor = np.fromiter((f.anchor for f in self.facts), np.int64, n)
        if not np.array_equal(np.fromiter((f.quad_id for f in self.facts), np.int64, n),
                              np.arange(n)):
            raise LoadError("graph quad ids must be 0..n-1 in load order")
        for arr in (self.subj, self.rel, self.obj, self.anchor):
            arr.setflags(write=False)
        if interval:
            self.since = np.array([self.null_since if f.since is None else f.since
                                   for f in self.facts], dtype=np.int64)
            self.until = np.array([self.null_until if f.until is None else f.until
                                   for f in self.facts], dtype=np.int64)
        else:
            self.time = self.anchor
        self._build_adjacency()

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def null_since(self) -> int:
        return len(self.times)

    @property
    def null_until(self) -> int:
        return len(self.times) + 1

    @property
    def n_time_embeddings(self) -> int:
        """Rows needed in the time embedding table (incl. null slots)."""
        return len(self.times) + (2 if self.interval else 0)

    def __len__(self) -> int:
        return len(self.facts)

    def _build_adjacency(self):
        n = len(self.facts)
        qid = np.arange(n, dtype=np.int64)
        loops = self.subj == self.obj
        ent = np.concatenate([self.subj, self.obj[~loops]])
        q = np.concatenate([qid, qid[~loops]])
        order = np.lexsort((q, self.anchor[q], ent))
        ent, q = ent[order], q[order]
        counts = np.bincount(ent, minlength=self.n_entities)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        self.adjacency = [q[bounds[e]:bounds[e + 1]] for e in range(self.n_entities)]

    def quad(self, qid: int) -> Fact:
        return self.facts[qid]

    def time_distance(self, qids: np.ndarray, t_q: int | None) -> np.ndarray:
        """Chronological index distance |t_q - t_i|; 0 when either side is timeless."""
        anchors = self.anchor[qids]
        if t_q is None or t_q == NO_TIME:
            return np.zeros(len(qids), dtype=np.int64)
        return np.where(anchors == NO_TIME, 0, np.abs(anchors - t_q))

    def describe(self, qid: int) -> tuple[str, str, str, str]:
        """String form (subject, relation, object, time) of a graph fact."""
        f = self.facts[qid]
        return (self.entities.name(f.subject), self.relations.name(f.relation),
                self.entities.name(f.object), self.time_label(f))

    def time_label(self, fact: Fact) -> str:
        if isinstance(fact, IntervalFact):
            parts = []
            if fact.since is not None:
                parts.append(f"since {self.times.name(fact.since)}")
            if fact.until is not None:
                parts.append(f"until {self.times.name(fact.until)}")
            return " ".join(parts) or "-"
        return self.times.name(fact.time)

    def vocab_json(self) -> str:
        return json.dumps({
            "entities": self.entities.to_dict(),
            "relations": self.relations.to_dict(),
            "times": self.times.to_dict(),
            "interval": self.interval,
        }, indent=1, sort_keys=False)

    def stats(self, split: Split | None = None) -> dict[str, int]:
        out = {"entities": self.n_entities, "relations": self.n_relations,
               "times": self.n_times}
        if split is not None:
            out.update(train=len(split.train), valid=len(split.valid), test=len(split.test))
        return out


def incident_candidates(kg: TemporalKG, frontier_entities: Iterable[int],
                        core_quads: Iterable[int] = (),
                        exclude: Iterable[int] = ()) -> np.ndarray:
    """Graph facts touching the frontier (either endpoint), not yet in the core.

    ``exclude`` holds facts hidden from traversal, e.g. the query fact itself
    while training. Returned ids are unique and ascending.
    """
    ents = list(frontier_entities)
    if not ents:
        return np.empty(0, dtype=np.int64)
    if len(ents) == 1:
        cands = np.unique(kg.adjacency[ents[0]])
    else:
        cands = np.unique(np.concatenate([kg.adjacency[e] for e in ents]))
    drop = [*core_quads, *exclude]
    if drop and len(cands):
        cands = cands[~np.isin(cands, np.fromiter(drop, np.int64, len(drop)))]
    return cands


def temporal_knn_filter(kg: TemporalKG, candidates, t_q: int | None, k: int) -> np.ndarray:
    """Keep the ``k`` candidates closest to ``t_q`` in time.

    Ties are broken by ascending quad id; the result is sorted by
    (distance, quad id).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = np.asarray(candidates, dtype=np.int64)
    if len(cands) == 0:
        return cands
    dt = kg.time_distance(cands, t_q)
    order = np.lexsort((cands, dt))
    return cands[order[:k]]


# ---------------------------------------------------------------- loaders

def _parse_date(raw: str) -> datetime.date:
    return datetime.date.fromisoformat(raw)


def _read_rows(path: Path) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            rows.append((lineno, line.split("\t")))
    return rows


def load_icews(train_path, valid_path, test_path) -> tuple[TemporalKG, Split]:
    """Load ICEWS-style TSV files ``subject, relation, object, YYYY-MM-DD``."""
    raw_splits = []
    for path in (train_path, valid_path, test_path):
        path = Path(path)
        rows = []
        for lineno, cols in _read_rows(path):
            if len(cols) != 4:
                raise LoadError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
            try:
                _parse_date(cols[3])
            except ValueError:
                raise LoadError(f"{path}:{lineno}: bad timestamp {cols[3]!r}") from None
            rows.append(cols)
        raw_splits.append(rows)
    if not raw_splits[0]:
        raise LoadError("empty graph")

    entities, relations = Vocab(), Vocab()
    all_rows = [r for rows in raw_splits for r in rows]
    times = Vocab(sorted({r[3] for r in all_rows}, key=_parse_date))
    out, qid = [], 0
    for rows in raw_splits:
        facts = []
        for s, r, o, t in rows:
            facts.append(Quadruple(entities.add(s), relations.add(r), entities.add(o),
                                   times[t], qid))
            qid += 1
        out.append(facts)
    kg = TemporalKG(entities, relations, times, out[0])
    return kg, Split(*out)


_YEAR = re.compile(r"-?\d+")


def _parse_year(raw: str) -> int:
    m = _YEAR.match(raw.strip().strip('"'))
    if m is None:
        raise ValueError(raw)
    return int(m.group())


def load_yago15k(train_path, valid_path, test_path) -> tuple[TemporalKG, Split]:
    """Load YAGO15K-style TSV with optional ``occursSince|occursUntil <year>``.

    Rows sharing (subject, relation, object) are kept as separate facts; each
    row sets at most one temporal slot, the other stays null.
    """
    raw_splits = []
    for path in (train_path, valid_path, test_path):
        path = Path(path)
        rows = []
        for lineno, cols in _read_rows(path):
            if len(cols) == 3:
                rows.append((cols[0], cols[1], cols[2], None, None))
            elif len(cols) == 5:
                if cols[3] not in YAGO_KEYWORDS:
                    raise LoadError(f"{path}:{lineno}: unknown temporal keyword {cols[3]!r}")
                try:
                    year = _parse_year(cols[4])
                except ValueError:
                    raise LoadError(f"{path}:{lineno}: bad year {cols[4]!r}") from None
                rows.append((cols[0], cols[1], cols[2], cols[3], year))
            else:
                raise LoadError(f"{path}:{lineno}: expected 3 or 5 columns, got {len(cols)}")
        raw_splits.append(rows)
    if not raw_splits[0]:
        raise LoadError("empty graph")

    years = sorted({r[4] for rows in raw_splits for r in rows if r[4] is not None})
    times = Vocab(str(y) for y in years)
    entities, relations = Vocab(), Vocab()
    out, qid = [], 0
    for rows in raw_splits:
        facts = []
        for s, r, o, kw, year in rows:
            tid = None if year is None else times[str(year)]
            since = tid if kw == "occursSince" else None
            until = tid if kw == "occursUntil" else None
            facts.append(IntervalFact(entities.add(s), relations.add(r), entities.add(o),
                                      since, until, qid))
            qid += 1
        out.append(facts)
    kg = TemporalKG(entities, relations, times, out[0], interval=True)
    return kg, Split(*out)


def format_fact(kg: TemporalKG, fact: Fact) -> str:
    """One TSV line in the file format the fact was loaded from."""
    s, r, o = (kg.entities.name(fact.subject), kg.relations.name(fact.relation),
               kg.entities.name(fact.object))
    if isinstance(fact, IntervalFact):
        if fact.since is not None:
            return f"{s}\t{r}\t{o}\toccursSince\t{kg.times.name(fact.since)}"
        if fact.until is not None:
            return f"{s}\t{r}\t{o}\toccursUntil\t{kg.times.name(fact.until)}"
        return f"{s}\t{r}\t{o}"
    return f"{s}\t{r}\t{o}\t{kg.times.name(fact.time)}"


def write_facts(path, kg: TemporalKG, facts: Iterable[Fact]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fact in facts:
            fh.write(format_fact(kg, fact) + "\n")


def load_dataset(kind: str, data_dir) -> tuple[TemporalKG, Split]:
    """Load ``train.txt``/``valid.txt``/``test.txt`` from ``data_dir``."""
    d = Path(data_dir)
    paths = [d / f"{name}.txt" for name in ("train", "valid", "test")]
    for p in paths:
        if not p.exists():
            raise LoadError(f"missing dataset file {p}")
    if kind == "yago15k":
        return load_yago15k(*paths)
    if kind in ("icews14", "icews0515", "synthetic"):
        return load_icews(*paths)
    raise LoadError(f"unknown dataset {kind!r}")
