"""Ranking metrics, training diagnostics and tknn sweeps."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import env
from .dqn import EpisodeLog, moving_average
from .env import Query
from .reasoner import FeatureBank, PredicateClassifier, featurize_many, rank_relations
from .tkg import TemporalKG, fact_key

HITS_AT = (1, 10)


@dataclass
class RankingReport:
    mrr: float
    hits_at: dict[int, float]
    n_queries: int
    per_relation: dict[int, tuple[float, int]] = field(default_factory=dict)

    def to_dict(self, kg: TemporalKG | None = None) -> dict:
        name = kg.relations.name if kg is not None else str
        return {
            "mrr": round(self.mrr, 6),
            "hits_at": {str(k): round(v, 6) for k, v in sorted(self.hits_at.items())},
            "n_queries": self.n_queries,
            "per_relation": {name(r): {"mrr": round(m, 6), "count": c}
                             for r, (m, c) in sorted(self.per_relation.items())},
        }


def mrr_hits(ranks, ks=HITS_AT) -> RankingReport:
    """Mean reciprocal rank and Hits@k of 1-based ranks."""
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no ranks to score")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return RankingReport(float(np.mean(1.0 / r)), {k: float(np.mean(r <= k)) for k in ks}, int(r.size))


@dataclass
class Prediction:
    query_id: int
    true_relation: int
    filtered_rank: int
    top5: list[int]


def evaluate(kg: TemporalKG, facts, bank: FeatureBank, clf: PredicateClassifier,
             known_index: dict, tknn: int, max_steps: int = env.DEFAULT_MAX_STEPS
             ) -> tuple[RankingReport, list[Prediction]]:
    """Filtered ranking of the true relation for every fact in ``facts``."""
    facts = list(facts)
    queries = [Query.from_fact(f) for f in facts]
    feats = featurize_many(kg, queries, bank, tknn, max_steps)
    preds = []
    for f, q, x in zip(facts, queries, feats):
        ranked, rank = rank_relations(kg, q, bank, clf, known_index, tknn, key=fact_key(f),
                                      features=x, max_steps=max_steps)
        preds.append(Prediction(f.quad_id, f.relation, rank, ranked[:5]))
    report = mrr_hits([p.filtered_rank for p in preds])
    by_rel: dict[int, list[int]] = {}
    for p in preds:
        by_rel.setdefault(p.true_relation, []).append(p.filtered_rank)
    report.per_relation = {r: (mrr_hits(v).mrr, len(v)) for r, v in by_rel.items()}
    return report, preds


def write_report(report: RankingReport, kg: TemporalKG, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(kg), indent=1) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["mrr", f"{report.mrr:.6f}"])
        for k, v in sorted(report.hits_at.items()):
            w.writerow([f"hits@{k}", f"{v:.6f}"])
        w.writerow(["n_queries", report.n_queries])


def write_predictions(preds: list[Prediction], kg: TemporalKG, path) -> None:
    name = kg.relations.name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "true_relation", "filtered_rank", "top5_relations"])
        for p in preds:
            w.writerow([p.query_id, name(p.true_relation), p.filtered_rank,
                        "|".join(name(r) for r in p.top5)])


# ------------------------------------------------------------ diagnostics

@dataclass
class DiagnosticsReport:
    avg_actions_per_step: list[float]
    reward_ma500: np.ndarray
    reward_ma10000: np.ndarray
    success_rate_per_relation: dict[int, float]
    ms_per_episode: float
    s_per_epoch: float | None = None


def avg_actions_per_step(logs: list[EpisodeLog], max_steps: int = 5) -> list[float]:
    """Mean legal-action count at decision i (1-based) over episodes reaching it."""
    out = []
    for i in range(max_steps):
        vals = [lg.actions_per_step[i] for lg in logs if len(lg.actions_per_step) > i]
        out.append(float(np.mean(vals)) if vals else float("nan"))
    return out


def initial_action_counts(kg: TemporalKG, queries, tknn: int) -> np.ndarray:
    """|A^1| for each query: legal actions in the freshly reset episode."""
    counts = []
    for q in queries:
        state = env.reset(kg, q, tknn)
        counts.append(int(env.periphery_mask(kg, state).sum()))
    return np.array(counts)


def diagnostics(logs: list[EpisodeLog], max_steps: int = 5, epoch_size: int | None = None
                ) -> DiagnosticsReport:
    rewards = [lg.reward for lg in logs]
    by_rel: dict[int, list[int]] = {}
    for lg in logs:
        if lg.relation is not None:
            by_rel.setdefault(lg.relation, []).append(lg.reward)
    ms = float(np.mean([lg.seconds for lg in logs]) * 1e3) if logs else float("nan")
    s_epoch = ms * epoch_size / 1e3 if epoch_size else None
    return DiagnosticsReport(avg_actions_per_step(logs, max_steps),
                             moving_average(rewards, 500), moving_average(rewards, 10000),
                             {r: float(np.mean(v)) for r, v in by_rel.items()}, ms, s_epoch)


def write_diagnostics(diag: DiagnosticsReport, kg: TemporalKG, path) -> None:
    name = kg.relations.name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "key", "value"])
        for i, v in enumerate(diag.avg_actions_per_step, 1):
            w.writerow(["avg_actions", f"step{i}", f"{v:.6f}"])
        for r, v in sorted(diag.success_rate_per_relation.items()):
            w.writerow(["success_rate", name(r), f"{v:.6f}"])
        w.writerow(["timing", "ms_per_episode", f"{diag.ms_per_episode:.6f}"])
        if diag.s_per_epoch is not None:
            w.writerow(["timing", "s_per_epoch", f"{diag.s_per_epoch:.6f}"])


SWEEP_COLUMNS = ["tknn", "mrr", "hits@10", "hits@1", "ms_per_episode", "s_per_epoch",
                 "mean_actions_step1"]


def tknn_sweep(kg: TemporalKG, split, config, k_values, out_path=None) -> list[dict]:
    """Full train + test evaluation per tknn value."""
    from .pipeline import fit, query_facts

    rows = []
    for k in k_values:
        cfg = replace(config, tknn=int(k))
        t0 = time.monotonic()
        art = fit(kg, split, cfg)
        train_s = time.monotonic() - t0
        if art.classifier is None:
            raise ValueError(f"tknn={k}: no successful episodes, nothing to evaluate")
        report, _ = evaluate(kg, query_facts(kg, split.test, cfg), art.features, art.classifier,
                             split.known_index, cfg.tknn, cfg.max_steps)
        diag = diagnostics(art.logs, cfg.max_steps)
        n_epochs = max(len(art.logs) / max(len(art.train_queries), 1), 1e-12)
        rows.append({"tknn": int(k), "mrr": report.mrr, "hits@10": report.hits_at[10],
                     "hits@1": report.hits_at[1], "ms_per_episode": diag.ms_per_episode,
                     "s_per_epoch": train_s / n_epochs,
                     "mean_actions_step1": diag.avg_actions_per_step[0]})
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows
