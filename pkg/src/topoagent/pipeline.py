"""End-to-end fit: agent training, sequence bank, feature bank, classifier."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dqn
from .config import RunConfig
from .dqn import Agent, EpisodeLog, QModel
from .env import Query
from .reasoner import (FeatureBank, PredicateClassifier, SequenceBank, featurize_many,
                       train_classifier)
from .tkg import TemporalKG

log = logging.getLogger(__name__)


@dataclass
class Artifacts:
    agent: Agent
    sequences: SequenceBank
    features: FeatureBank
    classifier: PredicateClassifier | None
    logs: list[EpisodeLog]
    train_queries: list


def query_facts(kg: TemporalKG, facts, cfg: RunConfig) -> list:
    """Facts whose relation is listed in ``cfg.query_relations`` (all if unset)."""
    if cfg.query_relations is None:
        return list(facts)
    wanted = {kg.relations[r] for r in cfg.query_relations}
    return [f for f in facts if f.relation in wanted]


def fit(kg: TemporalKG, split, cfg: RunConfig, progress_every: int = 0) -> Artifacts:
    facts = query_facts(kg, split.train, cfg)
    agent, bank, logs = dqn.train(kg, facts, cfg.train_config(), progress_every=progress_every)
    features = FeatureBank.build(bank, cfg.m, kg.n_relations, cfg.feature_mode)
    clf = None
    if features.dim:
        clf_facts = facts
        if cfg.classifier_max_queries is not None and len(facts) > cfg.classifier_max_queries:
            rng = np.random.default_rng(cfg.seed)
            pick = np.sort(rng.choice(len(facts), cfg.classifier_max_queries, replace=False))
            clf_facts = [facts[i] for i in pick]
        queries = [Query.from_fact(f, hide=True) for f in clf_facts]
        x = featurize_many(kg, queries, features, cfg.tknn, cfg.max_steps)
        y = [f.relation for f in clf_facts]
        clf = train_classifier(x, y, kg.n_relations, cfg.classifier_epochs, cfg.classifier_lr,
                               cfg.classifier_batch, cfg.seed)
    else:
        log.warning("no successful episodes: feature bank is empty, classifier not trained")
    return Artifacts(agent, bank, features, clf, logs, facts)


def checkpoint_dict(art: Artifacts, cfg: RunConfig) -> dict:
    return {"version": dqn.CHECKPOINT_VERSION, "config": json.loads(cfg.to_json()),
            **art.agent.model.to_json(),
            "classifier": art.classifier.to_json() if art.classifier is not None else None}


def save(art: Artifacts, kg: TemporalKG, cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoint.json").write_text(json.dumps(checkpoint_dict(art, cfg)))
    (out / "vocab.json").write_text(kg.vocab_json())
    (out / "bank.json").write_text(art.features.to_json(kg))
    (out / "sequences.json").write_text(art.sequences.to_json(kg))
    write_training_log(art.logs, out / "training_log.csv", cfg.max_steps)
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.6f}"
    return str(v)


def write_training_log(logs: list[EpisodeLog], path, max_steps: int = 5) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(dqn.LOG_COLUMNS)
        for row in dqn.log_rows(logs, max_steps):
            w.writerow([_fmt(row[c]) for c in dqn.LOG_COLUMNS])


@dataclass
class Loaded:
    config: RunConfig
    model: QModel
    features: FeatureBank
    classifier: PredicateClassifier | None


def load(out_dir, kg: TemporalKG) -> Loaded:
    out = Path(out_dir)
    data = json.loads((out / "checkpoint.json").read_text())
    if data.get("version") != dqn.CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    cfg = RunConfig.from_dict(data["config"])
    vocab = json.loads((out / "vocab.json").read_text())
    if vocab["relations"] != kg.relations.to_dict():
        raise ValueError("checkpoint relation vocabulary does not match the dataset")
    model = QModel.from_json(data, kg.interval, cfg.aggregation)
    features = FeatureBank.from_json((out / "bank.json").read_text(), kg)
    clf = PredicateClassifier.from_json(data["classifier"]) if data["classifier"] else None
    return Loaded(cfg, model, features, clf)
