"""Planted-rule synthetic temporal KG in ICEWS TSV format.

Each rule k plants ``target_k(u, v, t)`` together with a witnessing chain
``body_a_k(u, w, t')``, ``body_b_k(w, v, t'')`` where both body times lie
within ``window`` steps of ``t``. Background facts are drawn uniformly over
noise relations; ``body_background`` sets the share that reuses rule-body
relations as distractors. Target facts are split 80/10/10; all other facts
are graph context and go to train.
"""
from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

EPOCH = datetime.date(2014, 1, 1)


@dataclass
class SynthConfig:
    n_entities: int = 200
    n_times: int = 100
    n_rules: int = 4
    instances_per_rule: int = 100
    n_noise_relations: int = 6
    n_background: int = 1500
    window: int = 3
    # share of background facts drawn over rule-body relations (rest: noise)
    body_background: float = 0.0
    seed: int = 0


Row = tuple[str, str, str, int]  # subject, relation, object, day index


def day(i: int) -> str:
    return (EPOCH + datetime.timedelta(days=int(i))).isoformat()


def rule_names(k: int) -> tuple[str, str, str]:
    return f"target_{k}", f"body_a_{k}", f"body_b_{k}"


def generate(cfg: SynthConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    ents = [f"e{i:03d}" for i in range(cfg.n_entities)]
    body_rels = [r for k in range(cfg.n_rules) for r in rule_names(k)[1:]]
    noise_rels = [f"noise_{j}" for j in range(cfg.n_noise_relations)]

    seen: set[Row] = set()
    context: list[Row] = []
    targets: list[Row] = []

    def add(row: Row, bucket: list) -> None:
        if row not in seen:
            seen.add(row)
            bucket.append(row)

    def near(t: int) -> int:
        return int(np.clip(t + rng.integers(-cfg.window, cfg.window + 1), 0, cfg.n_times - 1))

    for k in range(cfg.n_rules):
        tgt, ra, rb = rule_names(k)
        for _ in range(cfg.instances_per_rule):
            u, w, v = rng.choice(cfg.n_entities, size=3, replace=False)
            t = int(rng.integers(cfg.n_times))
            add((ents[u], ra, ents[w], near(t)), context)
            add((ents[w], rb, ents[v], near(t)), context)
            add((ents[u], tgt, ents[v], t), targets)
    for _ in range(cfg.n_background):
        u, v = rng.choice(cfg.n_entities, size=2, replace=False)
        pool = body_rels if rng.random() < cfg.body_background else noise_rels
        r = pool[rng.integers(len(pool))]
        add((ents[u], r, ents[v], int(rng.integers(cfg.n_times))), context)

    order = rng.permutation(len(targets))
    n_tr, n_va = int(0.8 * len(targets)), int(0.1 * len(targets))
    tr = [targets[i] for i in order[:n_tr]]
    va = [targets[i] for i in order[n_tr:n_tr + n_va]]
    te = [targets[i] for i in order[n_tr + n_va:]]
    # interleave context and train targets so relation ids are not grouped
    train = context + tr
    perm = rng.permutation(len(train))
    train = [train[i] for i in perm]
    rules = [{"target": rule_names(k)[0], "body": list(rule_names(k)[1:])}
             for k in range(cfg.n_rules)]
    return {"train": train, "valid": va, "test": te, "rules": rules, "config": asdict(cfg)}


def write(data: dict, out_dir) -> dict[str, str]:
    """Write split files plus ``rules.json``; return sha256 per file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name in ("train", "valid", "test"):
        text = "".join(f"{s}\t{r}\t{o}\t{day(t)}\n" for s, r, o, t in data[name])
        (out / f"{name}.txt").write_text(text, encoding="utf-8")
        hashes[f"{name}.txt"] = hashlib.sha256(text.encode()).hexdigest()
    meta = json.dumps({"rules": data["rules"], "config": data["config"]}, indent=1, sort_keys=True)
    (out / "rules.json").write_text(meta, encoding="utf-8")
    return hashes


def witnesses(rows: list[Row], target: Row, body: tuple[str, str], window: int) -> list[str]:
    """Intermediate entities w proving ``target`` under its rule."""
    u, _, v, t = target
    ra, rb = body
    first = {o for s, r, o, tt in rows if r == ra and s == u and abs(tt - t) <= window}
    return sorted({s for s, r, o, tt in rows
                   if r == rb and o == v and s in first and abs(tt - t) <= window})


def shuffle_times(rows: list[Row], seed: int = 0) -> list[Row]:
    rng = np.random.default_rng(seed)
    times = rng.permutation([t for *_, t in rows])
    return [(s, r, o, int(t)) for (s, r, o, _), t in zip(rows, times)]
