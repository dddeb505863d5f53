"""Minimal reverse-mode autodiff over numpy arrays, attention layers, Adam.

Only the operations the two stage models need are implemented: dense and
graph-attention forward passes, segment softmax over edge lists, and the
elementwise nonlinearities. Every reduction runs in a fixed (target, source)
sorted order so repeated forward passes are bit-identical.

Attention follows the additive single-head scheme: per directed pair (i, j)

    e_ij = LeakyReLU(a . [W h_i || W h_j])
    alpha_ij = softmax_j(e_ij)  over j in N(i) plus i itself

The self-loop is included so every node propagates its own features and
isolated nodes have a well-defined softmax.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import Network

CHECKPOINT_MAGIC = "cgnn-ckpt-v1"


class TrainingDivergedError(RuntimeError):
    """A loss, gradient or parameter became non-finite."""


# ---------------------------------------------------------------------------
# autodiff engine


class Tensor:
    """Array node in the computation graph built by the ops below."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def parameter(data, name: str) -> Tensor:
    """Trainable tensor; the name keys checkpoints and optimizer state."""
    t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
    return t


def _out(data, parents, backward) -> Tensor:
    t = Tensor(data)
    t._parents = tuple(parents)
    t._backward = backward
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return _out(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))
    return _out(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return _out(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g * c)
    return _out(a.data * c, (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g * (2.0 * a.data))
    return _out(a.data * a.data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(n,d)@(d,k)->(n,k) or (n,d)@(d,)->(n,)."""
    def bw(g):
        if b.data.ndim == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        else:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
    return _out(a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.data.shape))
    return _out(a.data.reshape(shape), (a,), bw)


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[start:stop] += g
    return _out(a.data[start:stop], (a,), bw)


def concat_cols(parts: list[Tensor]) -> Tensor:
    """Column-wise concat of (n, k_i) blocks."""
    widths = [p.data.shape[1] for p in parts]
    def bw(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, off:off + w])
            off += w
    return _out(np.concatenate([p.data for p in parts], axis=1), parts, bw)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)
    return _out(a.data[idx], (a,), bw)


def segment_sum(a: Tensor, seg: np.ndarray, n_segments: int) -> Tensor:
    out = np.zeros((n_segments,) + a.data.shape[1:])
    np.add.at(out, seg, a.data)
    def bw(g):
        _accum(a, g[seg])
    return _out(out, (a,), bw)


def segment_softmax(e: Tensor, seg: np.ndarray, n_segments: int) -> Tensor:
    """Softmax of e within each segment, with per-segment max subtraction."""
    m = np.full(n_segments, -np.inf)
    np.maximum.at(m, seg, e.data)
    ex = np.exp(e.data - m[seg])
    denom = np.bincount(seg, weights=ex, minlength=n_segments)
    alpha = ex / denom[seg]
    def bw(g):
        dot = np.bincount(seg, weights=alpha * g, minlength=n_segments)
        _accum(e, alpha * (g - dot[seg]))
    return _out(alpha, (e,), bw)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    pos = a.data > 0
    factor = np.where(pos, 1.0, slope)
    def bw(g):
        _accum(a, g * factor)
    return _out(np.where(pos, a.data, slope * a.data), (a,), bw)


def elu(a: Tensor) -> Tensor:
    neg_exp = np.exp(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg_exp - 1.0)
    def bw(g):
        _accum(a, g * np.where(a.data > 0, 1.0, neg_exp))
    return _out(out, (a,), bw)


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_arr(a.data)
    def bw(g):
        _accum(a, g * s * (1.0 - s))
    return _out(s, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy())
    return _out(a.data.sum(), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    def bw(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())
    return _out(a.data.mean(), (a,), bw)


def backward(loss: Tensor) -> None:
    """Reverse-mode gradients of a scalar loss; trips on non-finite values."""
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise TrainingDivergedError("loss is non-finite")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node.requires_grad and node.grad is not None and not np.all(np.isfinite(node.grad)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {node.name!r}")


# ---------------------------------------------------------------------------
# layers


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(frozen=True)
class GraphIndex:
    """Directed (target, source) pairs with self-loops, sorted by (target, source)."""

    n_nodes: int
    targets: np.ndarray
    sources: np.ndarray

    @classmethod
    def from_network(cls, network: Network) -> "GraphIndex":
        tgt_parts = []
        src_parts = []
        for i in range(network.n_nodes):
            attended = np.sort(np.append(network.neighbors(i), i))
            src_parts.append(attended)
            tgt_parts.append(np.full(attended.shape[0], i, dtype=np.int64))
        targets = np.concatenate(tgt_parts)
        sources = np.concatenate(src_parts)
        targets.flags.writeable = False
        sources.flags.writeable = False
        return cls(network.n_nodes, targets, sources)

    def __len__(self) -> int:
        return self.targets.shape[0]


class AttentionLayer:
    """Single-head graph attention with a linear self path and ELU output.

    Output per node: ELU( sum_j alpha_ij W h_j + W_self h_i ). The softmax
    aggregation necessarily averages a node's own features away as degree
    grows (no shared attention functional can rank "self" on top for every
    node), so the separate self path is what lets the network keep
    own-feature signal; without it, outcome terms that depend on a node's
    own features are unrepresentable on denser graphs.
    """

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        leaky_slope: float = 0.2,
        name: str = "att",
    ) -> None:
        if not 0.0 < leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must be in (0, 1), got {leaky_slope}")
        self.d_in = d_in
        self.d_out = d_out
        self.leaky_slope = leaky_slope
        self.W = parameter(glorot_uniform(rng, (d_in, d_out)), f"{name}.W")
        self.a = parameter(glorot_uniform(rng, (2 * d_out,)), f"{name}.a")
        self.W_self = parameter(glorot_uniform(rng, (d_in, d_out)), f"{name}.W_self")
        self.last_rowsum_dev = 0.0

    def parameters(self) -> list[Tensor]:
        return [self.W, self.a, self.W_self]

    def _scores_from_hw(self, hw: Tensor, gidx: GraphIndex) -> Tensor:
        a_tgt = slice1d(self.a, 0, self.d_out)
        a_src = slice1d(self.a, self.d_out, 2 * self.d_out)
        s_tgt = matmul(hw, a_tgt)
        s_src = matmul(hw, a_src)
        e = leaky_relu(
            add(gather_rows(s_tgt, gidx.targets), gather_rows(s_src, gidx.sources)),
            self.leaky_slope,
        )
        alpha = segment_softmax(e, gidx.targets, gidx.n_nodes)
        rowsum = np.bincount(gidx.targets, weights=alpha.data, minlength=gidx.n_nodes)
        self.last_rowsum_dev = float(np.max(np.abs(rowsum - 1.0)))
        return alpha

    def scores(self, h: Tensor, gidx: GraphIndex) -> Tensor:
        """Normalized attention weights per directed (target, source) pair."""
        return self._scores_from_hw(matmul(h, self.W), gidx)

    def forward(self, h: Tensor, gidx: GraphIndex) -> Tensor:
        hw = matmul(h, self.W)
        alpha = self._scores_from_hw(hw, gidx)
        msg = mul(gather_rows(hw, gidx.sources), reshape(alpha, (len(gidx), 1)))
        agg = segment_sum(msg, gidx.targets, gidx.n_nodes)
        return elu(add(agg, matmul(h, self.W_self)))


class Dense:
    """Affine map (n, d_in) -> (n, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str = "dense") -> None:
        self.W = parameter(glorot_uniform(rng, (d_in, d_out)), f"{name}.W")
        self.b = parameter(np.zeros(d_out), f"{name}.b")

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    def forward(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.W), self.b)


def attention_scores(layer: AttentionLayer, h: np.ndarray | Tensor, network: Network | GraphIndex) -> tuple[np.ndarray, GraphIndex]:
    """Attention weights for fixed inputs; returns (alpha, index) as plain arrays."""
    gidx = network if isinstance(network, GraphIndex) else GraphIndex.from_network(network)
    h_t = h if isinstance(h, Tensor) else Tensor(h)
    return layer.scores(h_t, gidx).data, gidx


def attention_layer_forward(layer: AttentionLayer, h: np.ndarray | Tensor, network: Network | GraphIndex) -> np.ndarray:
    """One attention layer applied to fixed inputs, as a plain array."""
    gidx = network if isinstance(network, GraphIndex) else GraphIndex.from_network(network)
    h_t = h if isinstance(h, Tensor) else Tensor(h)
    return layer.forward(h_t, gidx).data


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Full-batch adaptive moment estimation with bias correction."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient for {p.name!r}")
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise TrainingDivergedError(f"non-finite value in parameter {p.name!r}")


# ---------------------------------------------------------------------------
# checkpoints


def snapshot(params: list[Tensor]) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in params}


def restore(params: list[Tensor], state: dict[str, np.ndarray]) -> None:
    for p in params:
        p.data = state[p.name].copy()


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """JSON checkpoint: shape-tagged named arrays under a version magic string."""
    blob = {
        "magic": CHECKPOINT_MAGIC,
        "meta": meta,
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True)
        fh.write("\n")


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    arrays = {
        name: np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in blob["arrays"].items()
    }
    return arrays, blob["meta"]
