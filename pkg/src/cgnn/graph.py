"""Graph and dataset containers, random-graph generation, node splits.

Graphs are undirected and unweighted; edge weights live in the peer-exposure
layer. All containers are immutable after construction (arrays are marked
read-only) and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Network:
    """Undirected graph: node count, canonical edge array, neighbor index.

    Edges are stored as an (E, 2) int array with u < v, sorted
    lexicographically. No self-loops, no duplicates. Neighbor lists are
    sorted, symmetric and precomputed.
    """

    def __init__(self, n_nodes: int, edges) -> None:
        if n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            u, v = edges[:, 0], edges[:, 1]
            if np.any(u == v):
                bad = int(u[np.argmax(u == v)])
                raise ValueError(f"self-loop at node {bad}")
            if np.any((edges < 0) | (edges >= n_nodes)):
                raise ValueError("edge endpoint out of range")
            lo, hi = np.minimum(u, v), np.maximum(u, v)
            edges = np.stack([lo, hi], axis=1)
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            dup = np.all(edges[1:] == edges[:-1], axis=1)
            if np.any(dup):
                i, j = edges[1:][dup][0]
                raise ValueError(f"duplicate edge ({i}, {j})")
        self._n_nodes = int(n_nodes)
        self._edges = _frozen(edges)
        self._neighbors = self._build_neighbor_index()

    def _build_neighbor_index(self) -> tuple[np.ndarray, ...]:
        buckets: list[list[int]] = [[] for _ in range(self._n_nodes)]
        for u, v in self._edges:
            buckets[u].append(int(v))
            buckets[v].append(int(u))
        return tuple(_frozen(np.array(sorted(b), dtype=np.int64)) for b in buckets)

    @property
    def n_nodes(self) -> int:
        return self._n_nodes

    @property
    def n_edges(self) -> int:
        return int(self._edges.shape[0])

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    def neighbors(self, node: int) -> np.ndarray:
        return self._neighbors[node]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self._n_nodes, dtype=np.int64)
        if self._edges.size:
            deg += np.bincount(self._edges[:, 0], minlength=self._n_nodes)
            deg += np.bincount(self._edges[:, 1], minlength=self._n_nodes)
        return deg

    def has_edge(self, u: int, v: int) -> bool:
        return v in self._neighbors[u]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return self._n_nodes == other._n_nodes and np.array_equal(self._edges, other._edges)

    def __repr__(self) -> str:
        return f"Network(n_nodes={self._n_nodes}, n_edges={self.n_edges})"


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense node-feature matrix, one row per node."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def d_x(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class ObservationalDataset:
    """Network, features and (optionally) per-node binary treatments and real outcomes.

    Treatments and outcomes are either both present or both None; the latter
    supports graph+feature files whose treatments are simulated downstream.
    """

    network: Network
    features: FeatureMatrix
    treatments: np.ndarray | None = None
    outcomes: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.network.n_nodes
        if self.features.n_nodes != n:
            raise ValueError(
                f"feature rows ({self.features.n_nodes}) != n_nodes ({n})"
            )
        if (self.treatments is None) != (self.outcomes is None):
            raise ValueError("treatments and outcomes must be provided together")
        if self.treatments is not None:
            t = np.asarray(self.treatments, dtype=np.int64)
            if t.shape != (n,):
                raise ValueError(f"treatments shape {t.shape} != ({n},)")
            if not np.all((t == 0) | (t == 1)):
                raise ValueError("treatments must be exactly 0 or 1")
            y = np.asarray(self.outcomes, dtype=np.float64)
            if y.shape != (n,):
                raise ValueError(f"outcomes shape {y.shape} != ({n},)")
            if not np.all(np.isfinite(y)):
                raise ValueError("outcomes contain non-finite values")
            object.__setattr__(self, "treatments", _frozen(t))
            object.__setattr__(self, "outcomes", _frozen(y))

    @property
    def n_nodes(self) -> int:
        return self.network.n_nodes

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationalDataset):
            return NotImplemented
        if self.network != other.network or self.features != other.features:
            return False
        if (self.treatments is None) != (other.treatments is None):
            return False
        if self.treatments is None:
            return True
        return np.array_equal(self.treatments, other.treatments) and np.array_equal(
            self.outcomes, other.outcomes
        )


def generate_random_network(n_nodes: int, edge_prob: float, seed: int) -> Network:
    """Erdos-Renyi G(n, p) graph; identical seed gives an identical graph."""
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must be in [0, 1], got {edge_prob}")
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n_nodes, k=1)
    keep = rng.random(iu.shape[0]) < edge_prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return Network(n_nodes, edges)


def split_nodes(
    network: Network, train_frac: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive train/test node partition, deterministic per seed."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = network.n_nodes
    n_train = int(round(train_frac * n))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"degenerate split: train_frac={train_frac} on {n} nodes leaves an empty part"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
