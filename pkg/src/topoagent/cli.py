"""Command line: train, eval, sweep, explain, synth, stats.

Flags mirror ``RunConfig`` keys (``--tknn 25 --m 25 --seed 7``).
``--config file.json`` is merged first; explicit flags override it.
Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import difflib
import json
import logging
import sys
from pathlib import Path

from . import evaluation, pipeline, synth
from .config import RunConfig
from .dqn import greedy_episode
from .env import Query
from .export import write_explanation
from .neural import NumericalError
from .tkg import LoadError, TemporalKG, load_dataset

log = logging.getLogger("topoagent")

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _converter(annotation: str):
    a = annotation.replace(" ", "")
    if a.startswith("tuple[int"):
        return lambda s: tuple(int(x) for x in s.split(",") if x)
    if a.startswith("list[str]"):
        return lambda s: [x for x in s.split(",") if x]
    if a.startswith("bool"):
        return _parse_bool
    if a.startswith("int"):
        return int
    if a.startswith("float"):
        return float
    return str


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys")
    for f in dataclasses.fields(RunConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*names, dest=f.name, type=_converter(str(f.type)),
                       default=argparse.SUPPRESS, help=f"default: {f.default!r}")


def build_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
    names = {f.name for f in dataclasses.fields(RunConfig)}
    data.update({k: v for k, v in vars(args).items() if k in names})
    try:
        cfg = RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    if cfg.dataset == "synthetic" and cfg.query_relations is None:
        rules = Path(cfg.data_dir) / "rules.json"
        if rules.exists():
            cfg.query_relations = [r["target"] for r in json.loads(rules.read_text())["rules"]]
    return cfg


def _load(cfg: RunConfig):
    kg, split = load_dataset(cfg.dataset, cfg.data_dir)
    log.info("loaded %s: %s", cfg.dataset, kg.stats(split))
    return kg, split


def cmd_train(cfg: RunConfig) -> int:
    kg, split = _load(cfg)
    art = pipeline.fit(kg, split, cfg, progress_every=500)
    out = pipeline.save(art, kg, cfg, cfg.out_dir)
    n_queries = len(art.train_queries)
    diag = evaluation.diagnostics(art.logs, cfg.max_steps, n_queries)
    evaluation.write_diagnostics(diag, kg, out / "diagnostics.csv")
    ma = diag.reward_ma500[-1] if len(diag.reward_ma500) else float("nan")
    print(json.dumps({"episodes": len(art.logs), "reward_ma500": round(float(ma), 6),
                      "features": art.features.dim, "out_dir": str(out)}))
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: str | None, split_name: str = "test") -> int:
    kg, split = _load(cfg)
    loaded = pipeline.load(checkpoint or cfg.out_dir, kg)
    if loaded.classifier is None:
        raise InputError("checkpoint has no trained classifier (empty feature bank)")
    tknn = cfg.tknn
    facts = pipeline.query_facts(kg, getattr(split, split_name), cfg)
    if not facts:
        raise InputError(f"no {split_name} queries to evaluate")
    report, preds = evaluation.evaluate(kg, facts, loaded.features, loaded.classifier,
                                        split.known_index, tknn, cfg.max_steps)
    out = Path(cfg.out_dir)
    evaluation.write_report(report, kg, out)
    evaluation.write_predictions(preds, kg, out / "predictions.csv")
    print(json.dumps(report.to_dict(kg)["hits_at"] | {"mrr": round(report.mrr, 6)}))
    return 0


def cmd_sweep(cfg: RunConfig, k_values) -> int:
    kg, split = _load(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = evaluation.tknn_sweep(kg, split, cfg, k_values, out / "sweep.csv")
    for row in rows:
        print(json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()}))
    return 0


def _lookup(vocab, name: str, what: str) -> int:
    if name in vocab:
        return vocab[name]
    close = difflib.get_close_matches(name, vocab.names, n=5)
    hint = f"; closest matches: {', '.join(close)}" if close else ""
    raise InputError(f"unknown {what} {name!r}{hint}")


def resolve_query(kg: TemporalKG, subject: str, obj: str, time: str | None) -> Query:
    s = _lookup(kg.entities, subject, "entity")
    o = _lookup(kg.entities, obj, "entity")
    t = None if time is None else _lookup(kg.times, time, "timestamp")
    return Query(s, o, t)


def cmd_explain(cfg: RunConfig, checkpoint: str | None, subject: str, obj: str,
                time: str | None) -> int:
    kg, _ = _load(cfg)
    loaded = pipeline.load(checkpoint or cfg.out_dir, kg)
    query = resolve_query(kg, subject, obj, time)
    states = greedy_episode(kg, loaded.model, query, cfg.tknn, cfg.max_steps)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = write_explanation(kg, states, out / "trace.json", out / "topology.dot")
    print(json.dumps({"actions": trace["actions"], "reward": trace["reward"],
                      "trace": str(out / "trace.json"), "dot": str(out / "topology.dot")}))
    return 0


def cmd_synth(out_dir: str, scfg: synth.SynthConfig) -> int:
    data = synth.generate(scfg)
    hashes = synth.write(data, out_dir)
    print(json.dumps({"out_dir": out_dir, "train": len(data["train"]), "valid": len(data["valid"]),
                      "test": len(data["test"]), "sha256": hashes}))
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    kg, split = _load(cfg)
    print(json.dumps(kg.stats(split)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topoagent", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "eval", "sweep", "explain", "stats"):
        p = sub.add_parser(name)
        add_config_flags(p)
        if name in ("eval", "explain"):
            p.add_argument("--checkpoint", help="run directory holding checkpoint.json "
                                                "(default: out_dir)")
        if name == "eval":
            p.add_argument("--split", dest="split_name", choices=("test", "valid"), default="test")
        if name == "sweep":
            p.add_argument("--k-values", default="5,10,15,20,30",
                           type=lambda s: [int(x) for x in s.split(",") if x])
        if name == "explain":
            p.add_argument("--subject", required=True)
            p.add_argument("--object", dest="object_", required=True)
            p.add_argument("--time")

    p = sub.add_parser("synth")
    p.add_argument("--out-dir", "--out_dir", dest="synth_out", default="data/synthetic")
    for f in dataclasses.fields(synth.SynthConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*names, dest=f"synth_{f.name}", type=_converter(str(f.type)),
                       default=f.default)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "synth":
        scfg = synth.SynthConfig(**{f.name: getattr(args, f"synth_{f.name}")
                                    for f in dataclasses.fields(synth.SynthConfig)})
        return cmd_synth(args.synth_out, scfg)
    cfg = build_config(args)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint, args.split_name)
    if args.command == "sweep":
        return cmd_sweep(cfg, args.k_values)
    if args.command == "explain":
        return cmd_explain(cfg, args.checkpoint, args.subject, args.object_, args.time)
    return cmd_stats(cfg)


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, LoadError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
