"""Two-stage instrumental-variable estimator over graph-attention networks.

Stage 1 regresses the observed treatment on node features and graph
structure; the fitted propensities stand in for the treatment downstream.
Stage 2 regresses the observed outcome on a fresh attention embedding of the
features plus the two scalars (t_hat, z_hat), where z_hat is the peer
exposure recomputed from the stage-1 propensities. Observed treatments and
outcomes never enter a stage-2 forward input: outcomes appear only as the
regression target, and treatments only reach stage 2 through the stage-1
fit (or through the explicit no-IV ablation flag, which exists to quantify
what the indirection buys).

Counterfactual queries intervene on the two scalar inputs directly; effect
estimates are differences of such queries:

    ME_i = y(1, 0) - y(0, 0)
    PE_i = y(0, z_i) - y(0, 0)
    TE_i = y(1, z_i) - y(0, 0)

with z_i the evaluation exposure supplied by the caller (for simulated data,
the generator's recorded exposure, so predicted and true contrasts use
identical pairs).
"""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field

import numpy as np

from .exposure import PeerWeights, exposure
from .graph import Network, ObservationalDataset
from .metrics import mse, pehe
from . import nn
from .nn import (
    Adam,
    AttentionLayer,
    Dense,
    GraphIndex,
    Tensor,
    TrainingDivergedError,
    add,
    backward,
    concat_cols,
    elu,
    gather_rows,
    matmul,
    mean_all,
    reshape,
    scale,
    sigmoid,
    square,
    sub,
    sum_all,
)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both stages; model widths live here, not in code.

    ``patience > 0`` enables early stopping on a held-out ``val_frac`` of the
    training nodes with best-checkpoint restore; ``patience = 0`` trains the
    full epoch budget and keeps the final parameters.
    """

    epochs_stage1: int = 2500
    epochs_stage2: int = 1200
    lr: float = 0.01
    weight_decay: float = 1e-4
    hidden_width: int = 8
    n_layers: int = 2
    head_hidden: int = 8
    head_type: str = "additive"
    val_frac: float = 0.1
    patience: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs_stage1 < 1 or self.epochs_stage2 < 1:
            raise ValueError("epochs must be >= 1")
        if self.n_layers < 1 or self.hidden_width < 1:
            raise ValueError("need at least one attention layer of width >= 1")
        if not 0.0 <= self.val_frac < 1.0:
            raise ValueError("val_frac must be in [0, 1)")
        if self.head_type not in ("concat_hidden", "additive", "linear"):
            raise ValueError(f"unknown head_type {self.head_type!r}")


def _standardizer(x: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x[idx].mean(axis=0)
    std = x[idx].std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    return mean, std


def _fit_val_split(train_nodes: np.ndarray, config: TrainConfig):
    """Inner fit/val carve-out for early stopping, shared by both stages.

    With early stopping disabled (patience == 0) the full training set is fit
    directly; both stages then minimize over the identical node set, which is
    what makes the stage-2 regression on stage-1 fitted values well behaved.
    """
    if config.patience == 0 or config.val_frac == 0.0:
        return train_nodes, np.array([], dtype=np.int64)
    rng = np.random.default_rng([config.seed, 3])
    perm = rng.permutation(train_nodes)
    n_val = int(round(config.val_frac * train_nodes.size))
    if n_val == 0 or n_val == train_nodes.size:
        return np.sort(perm), np.array([], dtype=np.int64)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class _AttentionStack:
    def __init__(self, d_in: int, config: TrainConfig, rng: np.random.Generator, prefix: str):
        widths = [d_in] + [config.hidden_width] * config.n_layers
        self.layers = [
            AttentionLayer(widths[i], widths[i + 1], rng, name=f"{prefix}.att{i}")
            for i in range(config.n_layers)
        ]

    def forward(self, h: Tensor, gidx: GraphIndex) -> Tensor:
        for layer in self.layers:
            h = layer.forward(h, gidx)
        return h

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def weight_matrices(self) -> list[Tensor]:
        return [m for layer in self.layers for m in (layer.W, layer.W_self)]

    def max_rowsum_dev(self) -> float:
        return max(layer.last_rowsum_dev for layer in self.layers)


def _l2_penalty(mats: list[Tensor]) -> Tensor:
    total = sum_all(square(mats[0]))
    for m in mats[1:]:
        total = add(total, sum_all(square(m)))
    return total


class StageOneModel:
    """Attention stack plus sigmoid head mapping features to propensities."""

    def __init__(self, d_in: int, config: TrainConfig, rng: np.random.Generator):
        self.d_in = d_in
        self.config = config
        self.stack = _AttentionStack(d_in, config, rng, "s1")
        self.head = Dense(config.hidden_width, 1, rng, name="s1.head")
        self.x_mean = np.zeros(d_in)
        self.x_std = np.ones(d_in)
        self.loss_trace: list[float] = []
        self.val_trace: list[float] = []
        self.train_info: dict = {}

    def parameters(self) -> list[Tensor]:
        return self.stack.parameters() + self.head.parameters()

    def weight_matrices(self) -> list[Tensor]:
        return self.stack.weight_matrices() + [self.head.W]

    def forward(self, x_std: Tensor, gidx: GraphIndex) -> Tensor:
        h = self.stack.forward(x_std, gidx)
        return sigmoid(reshape(self.head.forward(h), (-1,)))

    def predict(self, features: np.ndarray, network: Network | GraphIndex) -> np.ndarray:
        """Propensities in (0, 1) for fixed parameters."""
        gidx = network if isinstance(network, GraphIndex) else GraphIndex.from_network(network)
        x = (np.asarray(features, dtype=np.float64) - self.x_mean) / self.x_std
        return self.forward(Tensor(x), gidx).data

    def max_rowsum_dev(self) -> float:
        return self.stack.max_rowsum_dev()


class StageTwoModel:
    """Attention embedding of features; outcome head over (embedding, t, z).

    The head takes raw t in [0, 1] and z scaled by the training-time spread;
    predictions are de-standardized back to outcome units. Head variants:

    - ``concat_hidden``: [embedding || t || z] through one hidden ELU layer
    - ``additive``: embedding through one hidden ELU layer, plus a linear
      term in (t, z) — exact extrapolation to intervention values like z = 0
    - ``linear``: a single affine map of [embedding || t || z], the ablation
      head under which total effect = main + peer exactly
    """

    def __init__(self, d_in: int, config: TrainConfig, rng: np.random.Generator):
        self.d_in = d_in
        self.config = config
        self.stack = _AttentionStack(d_in, config, rng, "s2")
        self.head_type = config.head_type
        self.head_hidden = None
        self.head_tz = None
        self.head_x = None
        if self.head_type == "concat_hidden":
            self.head_hidden = Dense(config.hidden_width + 2, config.head_hidden, rng, name="s2.head_hidden")
            self.head_out = Dense(config.head_hidden, 1, rng, name="s2.head_out")
        elif self.head_type == "additive":
            self.head_hidden = Dense(config.hidden_width, config.head_hidden, rng, name="s2.head_hidden")
            self.head_out = Dense(config.head_hidden, 1, rng, name="s2.head_out")
            self.head_tz = Dense(2, 1, rng, name="s2.head_tz")
            self.head_x = Dense(d_in, 1, rng, name="s2.head_x")
        else:  # linear
            self.head_out = Dense(config.hidden_width + 2, 1, rng, name="s2.head_out")
        self.x_mean = np.zeros(d_in)
        self.x_std = np.ones(d_in)
        self.y_mean = 0.0
        self.y_std = 1.0
        self.t_center = 0.0
        self.z_center = 0.0
        self.z_scale = 1.0
        self.use_observed_treatment = False
        self.loss_trace: list[float] = []
        self.val_trace: list[float] = []
        self.train_info: dict = {}

    def parameters(self) -> list[Tensor]:
        params = self.stack.parameters()
        if self.head_hidden is not None:
            params += self.head_hidden.parameters()
        if self.head_tz is not None:
            params += [self.head_tz.W]  # its bias would duplicate head_out's
        if self.head_x is not None:
            params += [self.head_x.W]
        return params + self.head_out.parameters()

    def weight_matrices(self) -> list[Tensor]:
        mats = self.stack.weight_matrices()
        if self.head_hidden is not None:
            mats.append(self.head_hidden.W)
        if self.head_tz is not None:
            mats.append(self.head_tz.W)
        if self.head_x is not None:
            mats.append(self.head_x.W)
        return mats + [self.head_out.W]

    def forward(self, x_std: Tensor, gidx: GraphIndex, t_in: np.ndarray, z_in: np.ndarray) -> Tensor:
        """Standardized-outcome prediction; t_in and z_in are fixed inputs."""
        emb = self.stack.forward(x_std, gidx)
        n = gidx.n_nodes
        t_col = Tensor(np.asarray(t_in, dtype=np.float64).reshape(n, 1) - self.t_center)
        z_col = Tensor((np.asarray(z_in, dtype=np.float64).reshape(n, 1) - self.z_center) / self.z_scale)
        if self.head_type == "concat_hidden":
            hidden = elu(self.head_hidden.forward(concat_cols([emb, t_col, z_col])))
            out = self.head_out.forward(hidden)
        elif self.head_type == "additive":
            hidden = elu(self.head_hidden.forward(emb))
            out = add(self.head_out.forward(hidden), matmul(concat_cols([t_col, z_col]), self.head_tz.W))
            out = add(out, matmul(x_std, self.head_x.W))  # linear feature skip
        else:
            out = self.head_out.forward(concat_cols([emb, t_col, z_col]))
        return reshape(out, (-1,))

    def predict(
        self,
        features: np.ndarray,
        network: Network | GraphIndex,
        t_in: np.ndarray,
        z_in: np.ndarray,
    ) -> np.ndarray:
        """Outcome prediction in original units at the given (t, z) inputs."""
        gidx = network if isinstance(network, GraphIndex) else GraphIndex.from_network(network)
        x = (np.asarray(features, dtype=np.float64) - self.x_mean) / self.x_std
        out = self.forward(Tensor(x), gidx, t_in, z_in).data
        return self.y_mean + self.y_std * out

    def max_rowsum_dev(self) -> float:
        return self.stack.max_rowsum_dev()


def train_stage1(
    dataset: ObservationalDataset,
    network: Network,
    config: TrainConfig,
    train_nodes: np.ndarray | None = None,
) -> StageOneModel:
    """Fit the treatment model by full-batch Adam on squared error plus L2.

    Message passing runs over the full graph; the loss is restricted to the
    training nodes, with an inner 10% (``val_frac``) held out for early
    stopping. Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    if dataset.treatments is None:
        raise ValueError("dataset has no treatments to fit")
    n = dataset.n_nodes
    train_nodes = np.arange(n) if train_nodes is None else np.sort(np.asarray(train_nodes))
    if train_nodes.size == 0:
        raise ValueError("train node set is empty")
    rng = np.random.default_rng([config.seed, 1])
    x = dataset.features.values
    t_obs = dataset.treatments.astype(np.float64)
    model = StageOneModel(dataset.features.d_x, config, rng)
    model.x_mean, model.x_std = _standardizer(x, train_nodes)
    fit, val = _fit_val_split(train_nodes, config)
    gidx = GraphIndex.from_network(network)
    x_in = Tensor((x - model.x_mean) / model.x_std)
    t_fit = Tensor(t_obs[fit])
    opt = Adam(model.parameters(), lr=config.lr)
    best_val = np.inf
    best_state: dict | None = None
    bad = 0
    max_dev = 0.0
    for epoch in range(config.epochs_stage1):
        opt.zero_grad()
        p = model.forward(x_in, gidx)
        data_loss = mean_all(square(sub(gather_rows(p, fit), t_fit)))
        loss = add(data_loss, scale(_l2_penalty(model.weight_matrices()), config.weight_decay))
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(f"stage-1 loss non-finite at epoch {epoch}")
        model.loss_trace.append(loss.item())
        max_dev = max(max_dev, model.max_rowsum_dev())
        if val.size:
            val_loss = float(np.mean((p.data[val] - t_obs[val]) ** 2))
            model.val_trace.append(val_loss)
            if config.patience > 0:
                if val_loss < best_val - 1e-12:
                    best_val = val_loss
                    best_state = nn.snapshot(model.parameters())
                    bad = 0
                else:
                    bad += 1
                    if bad > config.patience:
                        break
        backward(loss)
        opt.step()
    if best_state is not None:
        nn.restore(model.parameters(), best_state)
    model.train_info = {
        "train_nodes": train_nodes,
        "fit_nodes": fit,
        "val_nodes": val,
        "epochs_run": len(model.loss_trace),
        "best_val": best_val if val.size else None,
        "max_alpha_rowsum_dev": max_dev,
    }
    return model


def stage2_inputs(
    stage1: StageOneModel,
    dataset: ObservationalDataset,
    network: Network,
    peer_weights: PeerWeights,
    use_observed_treatment: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """The (t, z) pair stage 2 trains on: propensities and their exposure.

    With ``use_observed_treatment`` (the no-IV ablation) the realized
    treatments and their exposure are passed through instead.
    """
    if use_observed_treatment:
        t_in = dataset.treatments.astype(np.float64)
    else:
        t_in = stage1.predict(dataset.features.values, network)
    z_in = exposure(network, peer_weights, t_in)
    return t_in, z_in


def _refit_output_layer(
    model: StageTwoModel,
    x_in: Tensor,
    gidx: GraphIndex,
    t_in: np.ndarray,
    z_in: np.ndarray,
    y_standardized: np.ndarray,
    fit: np.ndarray,
    ridge: float,
) -> None:
    """Exact ridge solve of the final linear layer, embedding held fixed.

    Gradient descent crawls along the nearly flat valley that trades the
    explicit (t, z) coefficients against the embedding path; the closed-form
    solve lands on the actual optimum of the training objective in the
    output-layer directions, which is what pins the treatment coefficient.
    """
    emb = model.stack.forward(x_in, gidx).data
    n = gidx.n_nodes
    t_col = np.asarray(t_in, dtype=np.float64).reshape(n, 1) - model.t_center
    z_col = (np.asarray(z_in, dtype=np.float64).reshape(n, 1) - model.z_center) / model.z_scale
    if model.head_type == "concat_hidden":
        pre = np.concatenate([emb, t_col, z_col], axis=1) @ model.head_hidden.W.data + model.head_hidden.b.data
        feats = np.where(pre > 0, pre, np.exp(np.minimum(pre, 0.0)) - 1.0)
        weight_slices = [("s2.head_out.W", slice(0, feats.shape[1]))]
    elif model.head_type == "additive":
        pre = emb @ model.head_hidden.W.data + model.head_hidden.b.data
        hidden = np.where(pre > 0, pre, np.exp(np.minimum(pre, 0.0)) - 1.0)
        k = hidden.shape[1]
        feats = np.concatenate([hidden, x_in.data, t_col, z_col], axis=1)
        weight_slices = [
            ("s2.head_out.W", slice(0, k)),
            ("s2.head_x.W", slice(k, k + x_in.data.shape[1])),
            ("s2.head_tz.W", slice(k + x_in.data.shape[1], k + x_in.data.shape[1] + 2)),
        ]
    else:  # linear
        feats = np.concatenate([emb, t_col, z_col], axis=1)
        weight_slices = [("s2.head_out.W", slice(0, feats.shape[1]))]
    d = feats.shape[1]
    design = np.concatenate([feats[fit], np.ones((fit.size, 1))], axis=1)
    gram = design.T @ design / fit.size
    gram[:d, :d] += ridge * np.eye(d)  # bias column unpenalized, matching the training loss
    rhs = design.T @ y_standardized[fit] / fit.size
    beta = np.linalg.solve(gram, rhs)
    by_name = {p.name: p for p in model.parameters()}
    if model.head_type == "additive":
        for name, sl in weight_slices:
            by_name[name].data = beta[sl].reshape(-1, 1)
    else:
        by_name["s2.head_out.W"].data = beta[:d].reshape(-1, 1)
    by_name["s2.head_out.b"].data = beta[-1:].reshape(1)


def train_stage2(
    dataset: ObservationalDataset,
    network: Network,
    stage1: StageOneModel,
    peer_weights: PeerWeights,
    config: TrainConfig,
    train_nodes: np.ndarray | None = None,
    use_observed_treatment: bool = False,
) -> StageTwoModel:
    """Fit the outcome model on (features, graph, t_hat, z_hat); stage 1 stays frozen."""
    if dataset.outcomes is None:
        raise ValueError("dataset has no outcomes to fit")
    n = dataset.n_nodes
    train_nodes = np.arange(n) if train_nodes is None else np.sort(np.asarray(train_nodes))
    if train_nodes.size == 0:
        raise ValueError("train node set is empty")
    t_in, z_in = stage2_inputs(stage1, dataset, network, peer_weights, use_observed_treatment)
    rng = np.random.default_rng([config.seed, 2])
    x = dataset.features.values
    y_obs = dataset.outcomes
    model = StageTwoModel(dataset.features.d_x, config, rng)
    model.use_observed_treatment = use_observed_treatment
    model.x_mean, model.x_std = _standardizer(x, train_nodes)
    model.y_mean = float(y_obs[train_nodes].mean())
    y_std = float(y_obs[train_nodes].std())
    model.y_std = y_std if y_std > 1e-8 else 1.0
    model.t_center = float(t_in[train_nodes].mean())
    model.z_center = float(z_in[train_nodes].mean())
    z_spread = float(z_in[train_nodes].std())
    model.z_scale = z_spread if z_spread > 1e-8 else 1.0
    fit, val = _fit_val_split(train_nodes, config)
    gidx = GraphIndex.from_network(network)
    x_in = Tensor((x - model.x_mean) / model.x_std)
    y_standardized = (y_obs - model.y_mean) / model.y_std
    y_fit = Tensor(y_standardized[fit])
    opt = Adam(model.parameters(), lr=config.lr)
    best_val = np.inf
    best_state: dict | None = None
    bad = 0
    max_dev = 0.0
    for epoch in range(config.epochs_stage2):
        opt.zero_grad()
        yhat = model.forward(x_in, gidx, t_in, z_in)
        data_loss = mean_all(square(sub(gather_rows(yhat, fit), y_fit)))
        loss = add(data_loss, scale(_l2_penalty(model.weight_matrices()), config.weight_decay))
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(f"stage-2 loss non-finite at epoch {epoch}")
        model.loss_trace.append(loss.item())
        max_dev = max(max_dev, model.max_rowsum_dev())
        if val.size:
            val_loss = float(np.mean((yhat.data[val] - y_standardized[val]) ** 2))
            model.val_trace.append(val_loss)
            if config.patience > 0:
                if val_loss < best_val - 1e-12:
                    best_val = val_loss
                    best_state = nn.snapshot(model.parameters())
                    bad = 0
                else:
                    bad += 1
                    if bad > config.patience:
                        break
        backward(loss)
        opt.step()
    if best_state is not None:
        nn.restore(model.parameters(), best_state)
    _refit_output_layer(model, x_in, gidx, t_in, z_in, y_standardized, fit, config.weight_decay)
    model.train_info = {
        "train_nodes": train_nodes,
        "fit_nodes": fit,
        "val_nodes": val,
        "epochs_run": len(model.loss_trace),
        "best_val": best_val if val.size else None,
        "max_alpha_rowsum_dev": max_dev,
        "factual_t_input": t_in,
        "factual_z_input": z_in,
    }
    return model


def predict_counterfactual(
    model2: StageTwoModel,
    dataset: ObservationalDataset,
    t_override: np.ndarray,
    z_override: np.ndarray,
) -> np.ndarray:
    """Outcome prediction with (t, z) forced to the given intervention values."""
    t_override = np.asarray(t_override, dtype=np.float64)
    z_override = np.asarray(z_override, dtype=np.float64)
    n = dataset.n_nodes
    if t_override.shape != (n,) or z_override.shape != (n,):
        raise ValueError("overrides must have length n_nodes")
    return model2.predict(dataset.features.values, dataset.network, t_override, z_override)


@dataclass
class EffectReport:
    """Per-node effect estimates with optional paired truth and summaries."""

    nodes: np.ndarray
    me_hat: np.ndarray
    pe_hat: np.ndarray
    te_hat: np.ndarray
    me_true: np.ndarray | None = None
    pe_true: np.ndarray | None = None
    te_true: np.ndarray | None = None
    pehe_me: float | None = None
    pehe_pe: float | None = None
    pehe_te: float | None = None
    mse: float | None = None
    meta: dict = field(default_factory=dict)

    def recompute_summaries(self) -> dict[str, float | None]:
        """Summaries recomputed from the per-node columns (consistency check)."""
        out: dict[str, float | None] = {"pehe_me": None, "pehe_pe": None, "pehe_te": None}
        if self.me_true is not None:
            out["pehe_me"] = pehe(self.me_hat, self.me_true, kind="me").value
            out["pehe_pe"] = pehe(self.pe_hat, self.pe_true, kind="pe").value
            out["pehe_te"] = pehe(self.te_hat, self.te_true, kind="te").value
        return out

    def to_csv(self, path) -> None:
        def cell(arr, i):
            return repr(float(arr[i])) if arr is not None else ""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("node,me_hat,pe_hat,te_hat,me_true,pe_true,te_true\n")
            for i, node in enumerate(self.nodes):
                fh.write(
                    f"{int(node)},{float(self.me_hat[i])!r},{float(self.pe_hat[i])!r},{float(self.te_hat[i])!r},"
                    f"{cell(self.me_true, i)},{cell(self.pe_true, i)},{cell(self.te_true, i)}\n"
                )

    def summary_dict(self) -> dict:
        return {
            "n": int(self.nodes.size),
            "pehe_me": self.pehe_me,
            "pehe_pe": self.pehe_pe,
            "pehe_te": self.pehe_te,
            "mse": self.mse,
            **self.meta,
        }


def estimate_effects(
    model2: StageTwoModel,
    dataset: ObservationalDataset,
    peer_weights: PeerWeights,
    z_query: np.ndarray | None = None,
    nodes: np.ndarray | None = None,
    truth=None,
    factual: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    meta: dict | None = None,
) -> EffectReport:
    """Main/peer/total effect estimates from counterfactual queries.

    ``z_query`` fixes the peer-exposure contrast per node; when omitted it is
    derived from the observed treatments (the estimand for real data — for
    simulated data pass the generator's recorded exposure). ``truth`` is a
    :class:`~cgnn.simulate.GroundTruthEffects`; ``factual`` is an optional
    (t, z, noiseless outcome) triple used for the counterfactual-outcome MSE.
    """
    n = dataset.n_nodes
    nodes = np.arange(n) if nodes is None else np.sort(np.asarray(nodes))
    if z_query is None:
        if dataset.treatments is None:
            raise ValueError("need treatments or an explicit z_query")
        z_query = exposure(dataset.network, peer_weights, dataset.treatments)
    z_query = np.asarray(z_query, dtype=np.float64)
    ones = np.ones(n)
    zeros = np.zeros(n)
    y_t1_z0 = predict_counterfactual(model2, dataset, ones, zeros)
    y_t0_z0 = predict_counterfactual(model2, dataset, zeros, zeros)
    y_t0_zq = predict_counterfactual(model2, dataset, zeros, z_query)
    y_t1_zq = predict_counterfactual(model2, dataset, ones, z_query)
    report = EffectReport(
        nodes=nodes,
        me_hat=(y_t1_z0 - y_t0_z0)[nodes],
        pe_hat=(y_t0_zq - y_t0_z0)[nodes],
        te_hat=(y_t1_zq - y_t0_z0)[nodes],
        meta=dict(meta or {}),
    )
    if truth is not None:
        report.me_true = np.asarray(truth.me)[nodes]
        report.pe_true = np.asarray(truth.pe)[nodes]
        report.te_true = np.asarray(truth.te)[nodes]
        summaries = report.recompute_summaries()
        report.pehe_me = summaries["pehe_me"]
        report.pehe_pe = summaries["pehe_pe"]
        report.pehe_te = summaries["pehe_te"]
    if factual is not None:
        t_obs, z_obs, y_true = factual
        y_fact = predict_counterfactual(model2, dataset, np.asarray(t_obs, dtype=np.float64), z_obs)
        report.mse = mse(y_fact[nodes], np.asarray(y_true)[nodes]).value
    return report


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    denom = float(np.sum((y - y.mean()) ** 2))
    if denom < 1e-15:
        return 0.0
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / denom


@dataclass(frozen=True)
class IvDiagnostics:
    """Instrument-quality report for a trained stage-1 model."""

    r2_graph: float
    r2_structure_free: float
    relevance_gap: float
    residual_outcome_corr: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def iv_diagnostics(
    stage1: StageOneModel,
    dataset: ObservationalDataset,
    network: Network,
    nodes: np.ndarray | None = None,
) -> IvDiagnostics:
    """Relevance proxy and residual check for the graph-as-instrument story.

    Relevance: predictive R^2 of the trained stage-1 model against a
    structure-free twin retrained on an edgeless copy of the graph — a gap
    near zero means the graph adds nothing to treatment prediction.
    Residual check: correlation between stage-1 residuals and the observed
    outcome; a large value is a warning sign for the exclusion conditions.

    Relevance is scored predictively: two fresh twins (graph / edgeless) are
    trained with early stopping from the stage-1 config and scored over all
    nodes by default. Scoring the estimation-oriented model itself would
    conflate predictive signal with memorization and can rate even a
    shuffled graph as "relevant". The residual check uses the given model's
    own residuals. Pass ``nodes`` to restrict the evaluation set.
    """
    n = dataset.n_nodes
    train_nodes = stage1.train_info.get("train_nodes")
    if train_nodes is None:
        train_nodes = np.arange(n)
    nodes = np.arange(n) if nodes is None else np.sort(np.asarray(nodes))
    t = dataset.treatments.astype(np.float64)
    config = stage1.config
    if config.patience == 0:
        config = dataclasses.replace(config, patience=50)
    graph_twin = train_stage1(dataset, network, config, train_nodes=train_nodes)
    edgeless = Network(n, np.zeros((0, 2), dtype=np.int64))
    flat_twin = train_stage1(dataset, edgeless, config, train_nodes=train_nodes)
    r2_graph = r_squared(t[nodes], graph_twin.predict(dataset.features.values, network)[nodes])
    r2_flat = r_squared(t[nodes], flat_twin.predict(dataset.features.values, edgeless)[nodes])
    residual = t - stage1.predict(dataset.features.values, network)
    if dataset.outcomes is None or residual[nodes].std() < 1e-12 or dataset.outcomes[nodes].std() < 1e-12:
        corr = 0.0
    else:
        corr = float(np.corrcoef(residual[nodes], dataset.outcomes[nodes])[0, 1])
    return IvDiagnostics(
        r2_graph=r2_graph,
        r2_structure_free=r2_flat,
        relevance_gap=r2_graph - r2_flat,
        residual_outcome_corr=corr,
        n=int(nodes.size),
    )


# ---------------------------------------------------------------------------
# checkpoints


def _scaler_arrays(model) -> dict[str, np.ndarray]:
    arrays = {
        "scaler.x_mean": np.asarray(model.x_mean, dtype=np.float64),
        "scaler.x_std": np.asarray(model.x_std, dtype=np.float64),
    }
    if isinstance(model, StageTwoModel):
        arrays["scaler.y_mean"] = np.array(model.y_mean)
        arrays["scaler.y_std"] = np.array(model.y_std)
        arrays["scaler.t_center"] = np.array(model.t_center)
        arrays["scaler.z_center"] = np.array(model.z_center)
        arrays["scaler.z_scale"] = np.array(model.z_scale)
    return arrays


def save_stage1(model: StageOneModel, path) -> None:
    arrays = {p.name: p.data for p in model.parameters()}
    arrays.update(_scaler_arrays(model))
    nn.save_arrays(path, arrays, {"kind": "stage1", "d_in": model.d_in, "config": asdict(model.config)})


def save_stage2(model: StageTwoModel, path) -> None:
    arrays = {p.name: p.data for p in model.parameters()}
    arrays.update(_scaler_arrays(model))
    meta = {
        "kind": "stage2",
        "d_in": model.d_in,
        "config": asdict(model.config),
        "use_observed_treatment": model.use_observed_treatment,
    }
    nn.save_arrays(path, arrays, meta)


def _load_model(path, expected_kind: str):
    arrays, meta = nn.load_arrays(path)
    if meta.get("kind") != expected_kind:
        raise ValueError(f"{path}: expected a {expected_kind} checkpoint, got {meta.get('kind')!r}")
    config = TrainConfig(**meta["config"])
    rng = np.random.default_rng(0)
    if expected_kind == "stage1":
        model: StageOneModel | StageTwoModel = StageOneModel(int(meta["d_in"]), config, rng)
    else:
        model = StageTwoModel(int(meta["d_in"]), config, rng)
        model.y_mean = float(arrays["scaler.y_mean"])
        model.y_std = float(arrays["scaler.y_std"])
        model.t_center = float(arrays["scaler.t_center"])
        model.z_center = float(arrays["scaler.z_center"])
        model.z_scale = float(arrays["scaler.z_scale"])
        model.use_observed_treatment = bool(meta.get("use_observed_treatment", False))
    model.x_mean = arrays["scaler.x_mean"]
    model.x_std = arrays["scaler.x_std"]
    for p in model.parameters():
        p.data = arrays[p.name]
    return model


def load_stage1(path) -> StageOneModel:
    return _load_model(path, "stage1")


def load_stage2(path) -> StageTwoModel:
    return _load_model(path, "stage2")
