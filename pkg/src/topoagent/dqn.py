"""Masked deep Q-learning over topology fingerprints."""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import env
from .config import TrainConfig
from .env import EpisodeState, Query
from .neural import (MLP, Fingerprinter, NumericalError, RMSprop, aggregate,
                     aggregate_backward, aggregate_width)
from .reasoner import SequenceBank
from .tkg import TemporalKG

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Compact state record: quad ids per side plus the query time."""

    subject_core: tuple[int, ...]
    subject_periphery: tuple[int, ...]
    object_core: tuple[int, ...]
    object_periphery: tuple[int, ...]
    time: int | None
    subject_quads: np.ndarray = field(repr=False, default=None)
    object_quads: np.ndarray = field(repr=False, default=None)

    @classmethod
    def of(cls, state: EpisodeState) -> "Snapshot":
        s, o = state.subject_topo, state.object_topo
        return cls(tuple(sorted(s.core)), tuple(sorted(s.periphery)),
                   tuple(sorted(o.core)), tuple(sorted(o.periphery)), state.query.time,
                   s.quads(), o.quads())


@dataclass(frozen=True, eq=False)
class Transition:
    state: Snapshot
    action: int
    reward: int
    next_state: Snapshot | None
    next_mask: np.ndarray | None
    done: bool


class ReplayMemory:
    """Fixed-capacity FIFO ring buffer sampled uniformly with replacement."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.buffer: list = []
        self.cursor = 0

    def __len__(self) -> int:
        return len(self.buffer)

    def push(self, item) -> None:
        if len(self.buffer) < self.capacity:
            self.buffer.append(item)
        else:
            self.buffer[self.cursor] = item
        self.cursor = (self.cursor + 1) % self.capacity

    def items(self) -> list:
        """Contents oldest first."""
        if len(self.buffer) < self.capacity:
            return list(self.buffer)
        return self.buffer[self.cursor:] + self.buffer[:self.cursor]

    def sample(self, n: int, rng: np.random.Generator) -> list:
        idx = rng.integers(0, len(self.buffer), size=n)
        return [self.buffer[i] for i in idx]


class QModel:
    """Fingerprint both topologies, aggregate, map to one Q-value per relation."""

    def __init__(self, fp: Fingerprinter, qnet: MLP, aggregation: str = "concat"):
        self.fp, self.qnet, self.aggregation = fp, qnet, aggregation
        self._phi = None

    @classmethod
    def create(cls, kg: TemporalKG, cfg: TrainConfig, rng: np.random.Generator) -> "QModel":
        fp = Fingerprinter.create(kg.n_relations, kg.n_time_embeddings, rng, cfg.d_r, cfg.d_t,
                                  cfg.d_f, cfg.fingerprint_hidden, kg.interval)
        qnet = MLP([aggregate_width(cfg.d_f, cfg.aggregation), *cfg.qnet_hidden, kg.n_relations], rng)
        return cls(fp, qnet, cfg.aggregation)

    def params(self):
        return self.fp.params() + self.qnet.params()

    def forward(self, kg: TemporalKG, subject_sets, object_sets) -> np.ndarray:
        b = len(subject_sets)
        phi = self.fp.forward(kg, list(subject_sets) + list(object_sets))
        a, o = phi[:b], phi[b:]
        self._phi = (a, o)
        return self.qnet.forward(aggregate(a, o, self.aggregation))

    def backward(self, dq: np.ndarray) -> None:
        a, o = self._phi
        da, do = aggregate_backward(a, o, self.qnet.backward(dq), self.aggregation)
        self.fp.backward(np.concatenate([da, do], axis=0))

    def raw_q(self, kg: TemporalKG, state: EpisodeState) -> np.ndarray:
        return self.forward(kg, [state.subject_topo.quads()], [state.object_topo.quads()])[0]

    def load_from(self, other: "QModel") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst.value[...] = src.value

    def to_json(self) -> dict:
        return {"psi": self.fp.psi.table.value.tolist(), "xi": self.fp.xi.table.value.tolist(),
                "fingerprint_mlp": self.fp.mlp.to_json(), "qnet_mlp": self.qnet.to_json()}

    @classmethod
    def from_json(cls, data: dict, interval: bool, aggregation: str) -> "QModel":
        from .neural import Embedding
        fp = Fingerprinter(Embedding(0, 0, weights=np.array(data["psi"], dtype=np.float64)),
                           Embedding(0, 0, weights=np.array(data["xi"], dtype=np.float64)),
                           MLP.from_json(data["fingerprint_mlp"]), interval)
        return cls(fp, MLP.from_json(data["qnet_mlp"]), aggregation)


def q_values(kg: TemporalKG, state: EpisodeState, model: QModel, mask: np.ndarray) -> np.ndarray:
    """Raw Q-vector times the action mask (masked entries exactly 0)."""
    return model.raw_q(kg, state) * mask


def epsilon(n: int, cfg: TrainConfig) -> float:
    return cfg.eps_end + (cfg.eps_start - cfg.eps_end) * math.exp(-cfg.eps_decay * n)


def select_action(q_masked: np.ndarray, mask: np.ndarray, eps: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over unmasked relations; greedy ties go to the smallest id."""
    legal = np.flatnonzero(mask)
    if len(legal) == 0:
        raise env.EpisodeError("no legal action")
    if eps > 0 and rng.random() < eps:
        return int(legal[rng.integers(len(legal))])
    return int(legal[np.argmax(np.asarray(q_masked)[legal])])


@dataclass
class EpisodeLog:
    episode: int
    reward: int
    epsilon: float
    loss: float
    actions_per_step: list[int]
    relation: int | None
    steps: int
    seconds: float


class Agent:
    def __init__(self, kg: TemporalKG, cfg: TrainConfig, model: QModel | None = None):
        self.kg, self.cfg = kg, cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        init_rng, self.explore_rng, self.sample_rng, self.shuffle_rng = (
            np.random.default_rng(s) for s in seeds)
        self.model = model if model is not None else QModel.create(kg, cfg, init_rng)
        self.target = copy.deepcopy(self.model)
        self.optimizer = RMSprop(self.model.params(), lr=cfg.lr, rho=cfg.rms_rho,
                                 eps=cfg.rms_eps, weight_decay=cfg.weight_decay)
        self.memory = ReplayMemory(cfg.replay_capacity)
        self.env_steps = 0
        self.updates = 0

    def q_values(self, state: EpisodeState, mask: np.ndarray) -> np.ndarray:
        return q_values(self.kg, state, self.model, mask)

    def act(self, state: EpisodeState, mask: np.ndarray, eps: float) -> int:
        if eps >= 1.0:
            # pure exploration: skip the forward pass
            return select_action(mask.astype(float), mask, 1.0, self.explore_rng)
        return select_action(self.q_values(state, mask), mask, eps, self.explore_rng)

    def sync_target(self) -> None:
        self.target.load_from(self.model)

    def td_targets(self, batch: list[Transition]) -> np.ndarray:
        cfg = self.cfg
        y = np.array([t.reward for t in batch], dtype=np.float64)
        live = [i for i, t in enumerate(batch) if not t.done]
        if live and cfg.gamma > 0:
            net = self.target if cfg.use_target_network else self.model
            nxt = [batch[i].next_state for i in live]
            qn = net.forward(self.kg, [s.subject_quads for s in nxt], [s.object_quads for s in nxt])
            masks = np.stack([batch[i].next_mask for i in live])
            qn = np.where(masks, qn, -np.inf).max(axis=1)
            y[live] += cfg.gamma * np.where(np.isfinite(qn), qn, 0.0)
        return y

    def td_update(self, batch: list[Transition]) -> float:
        """One RMSprop step on the mean squared TD error."""
        y = self.td_targets(batch)
        states = [t.state for t in batch]
        acts = np.array([t.action for t in batch])
        q = self.model.forward(self.kg, [s.subject_quads for s in states],
                               [s.object_quads for s in states])
        n = len(batch)
        diff = q[np.arange(n), acts] - y
        loss = float(np.mean(diff ** 2))
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite TD loss after {self.updates} updates")
        dq = np.zeros_like(q)
        dq[np.arange(n), acts] = 2.0 * diff / n
        self.optimizer.zero_grad()
        self.model.backward(dq)
        self.optimizer.step()
        self.updates += 1
        if self.updates % self.cfg.target_sync == 0:
            self.sync_target()
        return loss

    def maybe_update(self) -> float | None:
        if len(self.memory) < self.cfg.batch_size:
            return None
        return self.td_update(self.memory.sample(self.cfg.batch_size, self.sample_rng))

    def run_episode(self, query: Query, eps: float | None = None,
                    learn: bool = True) -> tuple[EpisodeState, list[int], list[float]]:
        """Roll out one episode. ``eps=None`` follows the decay schedule."""
        kg, cfg = self.kg, self.cfg
        state = env.reset(kg, query, cfg.tknn, cfg.max_steps)
        n_actions, losses = [], []
        while not state.done:
            mask = env.legal_actions(kg, state)
            n_actions.append(int(mask.sum()))
            e = epsilon(self.env_steps, cfg) if eps is None else eps
            action = self.act(state, mask, e)
            nxt, reward, done = env.step(kg, state, action, cfg.tknn)
            if learn:
                self.env_steps += 1
                self.memory.push(Transition(
                    Snapshot.of(state), action, reward,
                    None if done else Snapshot.of(nxt),
                    None if done else env.legal_actions(kg, nxt), done))
                if cfg.update_cadence == "step":
                    loss = self.maybe_update()
                    if loss is not None:
                        losses.append(loss)
            state = nxt
        if learn and cfg.update_cadence == "episode" and n_actions:
            loss = self.maybe_update()
            if loss is not None:
                losses.append(loss)
        return state, n_actions, losses

    def state_dict(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "config": asdict(self.cfg), **self.model.to_json()}


def train(kg: TemporalKG, train_facts, cfg: TrainConfig, bank: SequenceBank | None = None,
          agent: Agent | None = None, progress_every: int = 0):
    """Run episodes over shuffled train facts used as queries.

    The query fact itself is hidden from traversal. Returns the agent, the
    bank of successful sequences and one ``EpisodeLog`` per episode.
    """
    agent = agent or Agent(kg, cfg)
    bank = bank if bank is not None else SequenceBank()
    facts = list(train_facts)
    logs: list[EpisodeLog] = []
    if not facts:
        return agent, bank, logs
    t0 = time.monotonic()
    limit = cfg.max_episodes
    ep = 0
    for epoch in range(cfg.epochs):
        for i in agent.shuffle_rng.permutation(len(facts)):
            if limit is not None and ep >= limit:
                return agent, bank, logs
            if cfg.max_seconds is not None and time.monotonic() - t0 > cfg.max_seconds:
                return agent, bank, logs
            fact = facts[i]
            ts = time.monotonic()
            eps = epsilon(agent.env_steps, cfg)
            query = Query.from_fact(fact, hide=True)
            final, n_actions, losses = agent.run_episode(query)
            if final.reward == 1:
                bank.record_success(final)
            logs.append(EpisodeLog(ep, final.reward, eps,
                                   float(np.mean(losses)) if losses else float("nan"),
                                   n_actions, fact.relation, final.step,
                                   time.monotonic() - ts))
            ep += 1
            if progress_every and ep % progress_every == 0:
                recent = [lg.reward for lg in logs[-500:]]
                log.info("episode %d eps=%.3f success(500)=%.3f", ep, eps, np.mean(recent))
    return agent, bank, logs


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over at most ``window`` most recent values."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


LOG_COLUMNS = ["episode", "reward", "reward_ma500", "reward_ma10000", "epsilon", "loss",
               *[f"mean_actions_step{i}" for i in range(1, 6)]]


def log_rows(logs: list[EpisodeLog], max_steps: int = 5) -> list[dict]:
    """Training-log rows; per-step action counts are running means."""
    rewards = [lg.reward for lg in logs]
    ma500, ma10k = moving_average(rewards, 500), moving_average(rewards, 10000)
    sums = np.zeros(max(max_steps, 5))
    counts = np.zeros(max(max_steps, 5))
    rows = []
    for lg, a, b in zip(logs, ma500, ma10k):
        for i, n in enumerate(lg.actions_per_step):
            sums[i] += n
            counts[i] += 1
        row = {"episode": lg.episode, "reward": lg.reward, "reward_ma500": a,
               "reward_ma10000": b, "epsilon": lg.epsilon, "loss": lg.loss}
        for i in range(5):
            row[f"mean_actions_step{i + 1}"] = sums[i] / counts[i] if counts[i] else float("nan")
        rows.append(row)
    return rows


def greedy_episode(kg: TemporalKG, model: QModel, query: Query, tknn: int,
                   max_steps: int = env.DEFAULT_MAX_STEPS) -> list[EpisodeState]:
    """All states of an epsilon=0 rollout, starting with the reset state."""
    state = env.reset(kg, query, tknn, max_steps)
    states = [state]
    rng = np.random.default_rng(0)
    while not state.done:
        mask = env.legal_actions(kg, state)
        action = select_action(q_values(kg, state, model, mask), mask, 0.0, rng)
        state = env.step(kg, state, action, tknn)[0]
        states.append(state)
    return states
