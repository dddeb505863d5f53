"""Feature-distribution peer weights and treatment exposure.

Each node's features are turned into a strictly positive probability
distribution; the weight an edge (i, j) carries is

    w_ij = 1 / (1 + KL(P_i || P_j))

so weight decays smoothly with divergence and stays in (0, 1], with
w_ij = 1 exactly when the two distributions coincide. KL uses the natural
logarithm. Weights are computed once from observed features and frozen;
the simulator and the estimator share this definition.

Exposure of node i to a treatment vector t is the first-order weighted sum
z_i = sum_{j in N(i)} w_ij * t_j, with the empty-neighborhood convention
z_i = 0. Real-valued t is accepted so predicted propensities can be used.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import FeatureMatrix, Network

DEFAULT_SMOOTHING = 1e-3


@dataclass(frozen=True)
class NodeDistributions:
    """Row-stochastic matrix: one strictly positive distribution per node."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] < 1:
            raise ValueError(f"expected (n, d) probabilities, got shape {p.shape}")
        if not np.all(p > 0):
            raise ValueError("distributions must be strictly positive")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("distribution rows must sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def n_nodes(self) -> int:
        return self.probs.shape[0]


class PeerWeights:
    """w_ij for every ordered adjacent pair, grouped by target node.

    Stored as parallel arrays (targets, sources, values) sorted by
    (target, source) so downstream reductions run in a fixed order.
    """

    def __init__(self, n_nodes: int, targets, sources, values) -> None:
        targets = np.asarray(targets, dtype=np.int64)
        sources = np.asarray(sources, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (targets.shape == sources.shape == values.shape):
            raise ValueError("targets, sources, values must have equal length")
        order = np.lexsort((sources, targets))
        self.n_nodes = int(n_nodes)
        self.targets = targets[order]
        self.sources = sources[order]
        self.values = values[order]
        if self.values.size and not (
            np.all(self.values > 0) and np.all(self.values <= 1) and np.all(np.isfinite(self.values))
        ):
            raise ValueError("peer weights must lie in (0, 1]")
        for arr in (self.targets, self.sources, self.values):
            arr.flags.writeable = False
        self._index = {
            (int(i), int(j)): float(w)
            for i, j, w in zip(self.targets, self.sources, self.values)
        }

    def weight(self, i: int, j: int) -> float:
        return self._index[(i, j)]

    def __len__(self) -> int:
        return self.values.size

    def row_sums(self) -> np.ndarray:
        """sum_j w_ij per target node (upper bound for exposure)."""
        return np.bincount(self.targets, weights=self.values, minlength=self.n_nodes)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("i,j,w\n")
            for i, j, w in zip(self.targets, self.sources, self.values):
                fh.write(f"{i},{j},{repr(float(w))}\n")


def feature_to_distribution(
    features: FeatureMatrix | np.ndarray, smoothing: float = DEFAULT_SMOOTHING
) -> NodeDistributions:
    """Clamp features at zero, add smoothing, normalize each row to sum 1."""
    if smoothing <= 0:
        raise ValueError(f"smoothing must be > 0, got {smoothing}")
    x = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("features must be (n, d) with d >= 1")
    shifted = np.maximum(x, 0.0) + smoothing
    return NodeDistributions(shifted / shifted.sum(axis=1, keepdims=True))


def kl_divergence(p_i: np.ndarray, p_j: np.ndarray) -> float:
    """KL(P_i || P_j) with natural log; both inputs strictly positive."""
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    kl = float(np.sum(p_i * (np.log(p_i) - np.log(p_j))))
    return max(kl, 0.0)  # guard float round-off; KL >= 0


def peer_weight(p_i: np.ndarray, p_j: np.ndarray) -> float:
    """1 / (1 + KL(P_i || P_j)); 1.0 exactly iff the distributions match."""
    w = 1.0 / (1.0 + kl_divergence(p_i, p_j))
    if not np.isfinite(w):
        raise ValueError("non-finite peer weight")
    return w


def compute_peer_weights(
    network: Network,
    features: FeatureMatrix | np.ndarray | NodeDistributions,
    smoothing: float = DEFAULT_SMOOTHING,
) -> PeerWeights:
    """Vectorized w_ij over all ordered adjacent pairs of the network."""
    if isinstance(features, NodeDistributions):
        dists = features
    else:
        dists = feature_to_distribution(features, smoothing)
    if dists.n_nodes != network.n_nodes:
        raise ValueError(
            f"distributions for {dists.n_nodes} nodes, network has {network.n_nodes}"
        )
    edges = network.edges
    if edges.size == 0:
        empty = np.zeros(0)
        return PeerWeights(network.n_nodes, empty, empty, empty)
    tgt = np.concatenate([edges[:, 0], edges[:, 1]])
    src = np.concatenate([edges[:, 1], edges[:, 0]])
    p = dists.probs
    logp = np.log(p)
    self_term = np.einsum("ij,ij->i", p, logp)
    cross = np.einsum("ij,ij->i", p[tgt], logp[src])
    kl = np.maximum(self_term[tgt] - cross, 0.0)
    return PeerWeights(network.n_nodes, tgt, src, 1.0 / (1.0 + kl))


def weighted_neighbor_sum(weights: PeerWeights, values: np.ndarray) -> np.ndarray:
    """sum_{j in N(i)} w_ij * values_j for arbitrary real per-node values."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (weights.n_nodes,):
        raise ValueError(f"values shape {values.shape} != ({weights.n_nodes},)")
    if len(weights) == 0:
        return np.zeros(weights.n_nodes)
    return np.bincount(
        weights.targets,
        weights=weights.values * values[weights.sources],
        minlength=weights.n_nodes,
    )


def exposure(network: Network, weights: PeerWeights, treatments: np.ndarray) -> np.ndarray:
    """Per-node exposure z_i = sum_{j in N(i)} w_ij * t_j.

    Treatments may be binary or real-valued (e.g. predicted propensities).
    """
    treatments = np.asarray(treatments, dtype=np.float64)
    if treatments.shape != (network.n_nodes,):
        raise ValueError(f"treatments shape {treatments.shape} != ({network.n_nodes},)")
    if weights.n_nodes != network.n_nodes:
        raise ValueError("weights and network disagree on node count")
    return weighted_neighbor_sum(weights, treatments)
