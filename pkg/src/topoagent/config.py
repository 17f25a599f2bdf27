"""Run configuration. Defaults follow the reference training setup."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 1e-5
    max_steps: int = 5
    tknn: int = 20
    replay_capacity: int = 1000
    target_sync: int = 100
    use_target_network: bool = True
    update_cadence: str = "step"  # "step" | "episode"
    rms_rho: float = 0.99
    rms_eps: float = 1e-8
    d_r: int = 10
    d_t: int = 10
    d_f: int = 16
    fingerprint_hidden: tuple[int, ...] = (16, 16)
    qnet_hidden: tuple[int, ...] = (16, 32)
    aggregation: str = "concat"
    epochs: int = 1
    max_episodes: int | None = None
    max_seconds: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.fingerprint_hidden = tuple(self.fingerprint_hidden)
        self.qnet_hidden = tuple(self.qnet_hidden)
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        if self.update_cadence not in ("step", "episode"):
            raise ValueError("update_cadence must be 'step' or 'episode'")


@dataclass
class RunConfig(TrainConfig):
    dataset: str = "icews14"
    data_dir: str = "data/icews14"
    out_dir: str = "runs/default"
    m: int = 25
    feature_mode: str = "per_relation_union"  # | "global_m"
    query_relations: list[str] | None = None
    classifier_epochs: int = 100
    classifier_lr: float = 0.01
    classifier_batch: int = 64
    classifier_max_queries: int | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.dataset not in ("icews14", "icews0515", "yago15k", "synthetic"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.feature_mode not in ("per_relation_union", "global_m"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def config_fields(cls=RunConfig):
    return fields(cls)
