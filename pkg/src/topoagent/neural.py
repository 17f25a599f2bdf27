"""Small float64 neural stack with hand-written reverse mode.

Covers exactly what the agent needs: embedding lookups, dense layers with
ReLU/identity, row-wise max pooling over variable-size sets (batched as
segments), fingerprint aggregation, softmax and RMSprop.
"""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "identity")
AGGREGATIONS = ("concat", "sum", "max", "hadamard")


class NumericalError(ArithmeticError):
    """Non-finite values appeared in a forward or backward pass."""


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class Embedding:
    def __init__(self, count: int, dim: int, rng: np.random.Generator | None = None,
                 weights: np.ndarray | None = None):
        if weights is None:
            weights = rng.normal(0.0, 0.1, size=(count, dim))
        self.table = Param(weights)

    @property
    def count(self) -> int:
        return self.table.value.shape[0]

    @property
    def dim(self) -> int:
        return self.table.value.shape[1]

    def __call__(self, idx) -> np.ndarray:
        return self.table.value[idx]

    def params(self) -> list[Param]:
        return [self.table]


class Dense:
    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = Param(weight)
        self.bias = Param(bias)
        self.activation = activation
        self._x = self._z = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weight.value + self.bias.value
        self._x, self._z = x, z
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dz = dy * (self._z > 0) if self.activation == "relu" else dy
        self.weight.grad += self._x.T @ dz
        self.bias.grad += dz.sum(axis=0)
        return dz @ self.weight.value.T


class MLP:
    """Dense stack; hidden layers use ``hidden_activation``, the last is identity."""

    def __init__(self, sizes: list[int] | None = None, rng: np.random.Generator | None = None,
                 hidden_activation: str = "relu", layers: list[Dense] | None = None):
        if layers is None:
            layers = []
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                act = "identity" if i == len(sizes) - 2 else hidden_activation
                layers.append(Dense(glorot(rng, a, b), np.zeros(b), act))
        if layers[-1].activation != "identity":
            raise ValueError("final layer must be linear")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.weight.value.shape[1] != nxt.weight.value.shape[0]:
                raise ValueError("layer dimensions do not chain")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.value.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.value.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def to_json(self) -> list[dict]:
        return [{"weight": layer.weight.value.tolist(), "bias": layer.bias.value.tolist(),
                 "activation": layer.activation} for layer in self.layers]

    @classmethod
    def from_json(cls, data: list[dict]) -> "MLP":
        return cls(layers=[Dense(np.array(d["weight"], dtype=np.float64),
                                 np.array(d["bias"], dtype=np.float64), d["activation"])
                           for d in data])


def segment_max(y: np.ndarray, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise max over consecutive row segments.

    Returns the pooled matrix and, per segment and column, the first row
    index attaining the max (gradient routing target).
    """
    pooled = np.maximum.reduceat(y, starts, axis=0)
    seg = np.repeat(np.arange(len(starts)), np.diff(np.append(starts, len(y))))
    rows = np.arange(len(y))[:, None]
    idx = np.where(y == pooled[seg], rows, len(y))
    return pooled, np.minimum.reduceat(idx, starts, axis=0)


def max_pool(y: np.ndarray) -> np.ndarray:
    return y.max(axis=0)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate(a: np.ndarray, b: np.ndarray, kind: str = "concat") -> np.ndarray:
    if kind == "concat":
        return np.concatenate([a, b], axis=-1)
    if kind == "sum":
        return a + b
    if kind == "max":
        return np.maximum(a, b)
    if kind == "hadamard":
        return a * b
    raise ValueError(f"unknown aggregation {kind!r}")


def aggregate_backward(a: np.ndarray, b: np.ndarray, dh: np.ndarray,
                       kind: str = "concat") -> tuple[np.ndarray, np.ndarray]:
    if kind == "concat":
        d = a.shape[-1]
        return dh[..., :d], dh[..., d:]
    if kind == "sum":
        return dh, dh
    if kind == "max":
        first = a >= b
        return dh * first, dh * ~first
    if kind == "hadamard":
        return dh * b, dh * a
    raise ValueError(f"unknown aggregation {kind!r}")


def aggregate_width(d_f: int, kind: str) -> int:
    return 2 * d_f if kind == "concat" else d_f


class Fingerprinter:
    """Relation/time embeddings -> per-fact MLP -> max pool over the fact set.

    Point graphs embed each fact as ``psi(r) || xi(t)``; interval graphs as
    ``psi(r) || xi(since) || xi(until)`` with reserved null rows. An empty
    fact set is encoded as a single all-zero input row.
    """

    def __init__(self, psi: Embedding, xi: Embedding, mlp: MLP, interval: bool = False):
        self.psi, self.xi, self.mlp, self.interval = psi, xi, mlp, interval
        if mlp.in_dim != self.width:
            raise ValueError(f"MLP expects {mlp.in_dim} inputs, embeddings give {self.width}")
        self._cache = None

    @classmethod
    def create(cls, n_relations: int, n_times: int, rng: np.random.Generator, d_r: int = 10,
               d_t: int = 10, d_f: int = 16, hidden: tuple[int, ...] = (16, 16),
               interval: bool = False) -> "Fingerprinter":
        psi = Embedding(n_relations, d_r, rng)
        xi = Embedding(n_times, d_t, rng)
        width = d_r + (2 if interval else 1) * d_t
        return cls(psi, xi, MLP([width, *hidden, d_f], rng), interval)

    @property
    def width(self) -> int:
        return self.psi.dim + (2 if self.interval else 1) * self.xi.dim

    @property
    def d_f(self) -> int:
        return self.mlp.out_dim

    def params(self) -> list[Param]:
        return self.psi.params() + self.xi.params() + self.mlp.params()

    def _keys(self, kg, q: np.ndarray) -> np.ndarray:
        """Integer code of each fact's (relation, time slots) input."""
        t = self.xi.count
        if self.interval:
            return (kg.rel[q] * t + kg.since[q]) * t + kg.until[q]
        return kg.rel[q] * t + kg.time[q]

    def _decode(self, keys: np.ndarray) -> tuple[np.ndarray, tuple]:
        t = self.xi.count
        if self.interval:
            return keys // (t * t), ((keys // t) % t, keys % t)
        return keys // t, (keys % t,)

    def embed(self, kg, qid_sets) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Input rows for a batch of fact sets.

        Facts with identical (relation, time) inputs share one row, which
        leaves the max pool unchanged. Returns (unique rows X, their keys,
        row index of every fact, segment starts); key -1 is the zero row of
        an empty set.
        """
        sizes = np.array([max(len(q), 1) for q in qid_sets])
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        flat = np.full(int(sizes.sum()), -1, dtype=np.int64)
        for s, q in zip(starts, qid_sets):
            if len(q):
                flat[s:s + len(q)] = q
        keys = np.full(len(flat), -1, dtype=np.int64)
        valid = flat >= 0
        keys[valid] = self._keys(kg, flat[valid])
        ukeys, inv = np.unique(keys, return_inverse=True)
        x = np.zeros((len(ukeys), self.width))
        ok = ukeys >= 0
        r_idx, t_idx = self._decode(ukeys[ok])
        d_r, d_t = self.psi.dim, self.xi.dim
        x[ok, :d_r] = self.psi.table.value[r_idx]
        for j, t in enumerate(t_idx):
            x[ok, d_r + j * d_t:d_r + (j + 1) * d_t] = self.xi.table.value[t]
        return x, ukeys, inv.reshape(-1), starts

    def forward(self, kg, qid_sets) -> np.ndarray:
        x, ukeys, inv, starts = self.embed(kg, qid_sets)
        yu = self.mlp.forward(x)
        pooled, argrow = segment_max(yu[inv], starts)
        self._cache = (yu.shape, inv[argrow], ukeys)
        return pooled

    def backward(self, dphi: np.ndarray) -> None:
        shape, urow, ukeys = self._cache
        dy = np.zeros(shape)
        cols = np.broadcast_to(np.arange(shape[1]), urow.shape)
        np.add.at(dy, (urow, cols), dphi)
        dx = self.mlp.backward(dy)
        ok = ukeys >= 0
        dx = dx[ok]
        r_idx, t_idx = self._decode(ukeys[ok])
        d_r, d_t = self.psi.dim, self.xi.dim
        np.add.at(self.psi.table.grad, r_idx, dx[:, :d_r])
        for j, t in enumerate(t_idx):
            np.add.at(self.xi.table.grad, t, dx[:, d_r + j * d_t:d_r + (j + 1) * d_t])


def embed_state(kg, qids, psi: Embedding, xi: Embedding, interval: bool = False) -> np.ndarray:
    """Input matrix for one fact set (rows in ascending quad id order)."""
    qids = np.array(sorted(qids), dtype=np.int64)
    width = psi.dim + (2 if interval else 1) * xi.dim
    if len(qids) == 0:
        return np.zeros((1, width))
    parts = [psi(kg.rel[qids])]
    if interval:
        parts += [xi(kg.since[qids]), xi(kg.until[qids])]
    else:
        parts.append(xi(kg.time[qids]))
    return np.concatenate(parts, axis=1)


def fingerprint(x: np.ndarray, net: MLP) -> np.ndarray:
    return max_pool(net.forward(x))


class RMSprop:
    """RMSprop with decoupled L2 decay, matching:

    accum <- rho*accum + (1-rho)*g^2
    p     <- p - lr*g/(sqrt(accum)+eps) - lr*weight_decay*p
    """

    def __init__(self, params: list[Param], lr: float = 1e-4, rho: float = 0.99,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.rho, self.eps, self.weight_decay = lr, rho, eps, weight_decay
        self.accum = [np.zeros_like(p.value) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError("non-finite gradient")
        for p, acc in zip(self.params, self.accum):
            acc *= self.rho
            acc += (1.0 - self.rho) * p.grad * p.grad
            p.value -= self.lr * p.grad / (np.sqrt(acc) + self.eps) + self.lr * self.weight_decay * p.value
