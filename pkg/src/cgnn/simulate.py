"""Semi-synthetic instance generator with a noiseless counterfactual oracle.

Generative process, all draws from one seeded stream in a fixed order so an
instance is bit-reproducible from its seed:

    U_i ~ N(0, mu * I_{d_u})                        hidden confounders
    X_i = x_i + U_i @ psi + eps_x                   observed features
    p_i = sigmoid(a0*w0.X_i + a1*sum_j w_ij*w1.X_j + a2*w2.U_i + eps_t)
    T_i ~ Bernoulli(p_i)
    Y_i = sigmoid(b0*w3.X_i) + sigmoid(b1*sum_j w_ij*w4.X_j)
          + b2*T_i + b3*z_i + b4*w5.U_i + eps_y

with z_i the peer exposure of the realized treatments. b0..b4 ~ U(0,1) are
resampled per instance seed; w0..w5 and psi are fixed random vectors/maps
drawn once per instance. Defaults: mu=20, d_u=10, a=(1, 0.5, 0.1),
eps_t ~ N(0, 0.01^2), eps_y ~ N(0, 0.1^2).

The confounded flag is the confounding knob: False forces a2 = b4 = 0 while
consuming the same random draws, so a clean and a confounded instance with
the same seed share everything else.

Ground-truth effects are noiseless oracle contrasts at fixed pairs:
main (t=1,z=0) vs (t=0,z=0); peer (t=0,z=z_obs) vs (t=0,z=0); total
(t=1,z=z_obs) vs (t=0,z=0). Because the outcome is linear in (t, z), the
contrasts reduce exactly to b2, b3*z_obs and b2 + b3*z_obs; they are
computed in that closed form so the constants are recovered bit-exactly.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data_io
from .exposure import (
    DEFAULT_SMOOTHING,
    PeerWeights,
    compute_peer_weights,
    exposure,
    weighted_neighbor_sum,
)
from .graph import FeatureMatrix, Network, ObservationalDataset, generate_random_network

PARAMS_FILE = "params.json"
GROUND_TRUTH_FILE = "ground_truth.csv"
WEIGHTS_FILE = "peer_weights.csv"
INSTANCE_MAGIC = "cgnn-instance-v1"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass(frozen=True)
class SimulationConfig:
    """Desk-scale generator knobs; the stated defaults are the reference setup."""

    n_nodes: int = 500
    d_x: int = 16
    edge_prob: float = 0.02
    mu: float = 20.0
    d_u: int = 10
    alpha: tuple[float, float, float] = (1.0, 0.5, 0.1)
    sigma_t: float = 0.01
    sigma_y: float = 0.1
    sigma_x: float = 0.1
    smoothing: float = DEFAULT_SMOOTHING
    confounded: bool = True

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.d_u < 1 or self.d_x < 1 or self.n_nodes < 1:
            raise ValueError("n_nodes, d_x, d_u must be >= 1")

    @property
    def regime(self) -> str:
        return "confounded" if self.confounded else "clean"


@dataclass(frozen=True)
class SimulationParams:
    """Realized generator constants for one instance."""

    mu: float
    d_u: int
    alpha: tuple[float, float, float]
    beta: tuple[float, float, float, float, float]
    w0: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    w5: np.ndarray
    psi: np.ndarray  # (d_u, d_x) linear confounder-to-feature map
    sigma_t: float
    sigma_y: float
    sigma_x: float
    smoothing: float
    seed: int

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.d_u < 1:
            raise ValueError("mu must be > 0 and d_u >= 1")
        for name in ("w0", "w1", "w2", "w3", "w4", "w5", "psi"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.psi.shape != (self.d_u, self.w0.shape[0]):
            raise ValueError(f"psi shape {self.psi.shape} does not conform")
        if self.w2.shape != (self.d_u,) or self.w5.shape != (self.d_u,):
            raise ValueError("confounder weight vectors must have length d_u")


@dataclass(frozen=True)
class GroundTruthEffects:
    """Per-node true main/peer/total effects at the evaluation pairs."""

    me: np.ndarray
    pe: np.ndarray
    te: np.ndarray
    z_obs: np.ndarray


@dataclass(frozen=True)
class FlippedScenario:
    """Counterfactual treatment assignment with recomputed exposure and noiseless outcomes."""

    flip_rate: float
    flipped: np.ndarray  # node ids whose treatment was inverted
    treatments: np.ndarray
    z: np.ndarray
    outcomes: np.ndarray  # noiseless oracle outcomes


@dataclass(frozen=True)
class SimulatedInstance:
    """Everything the generator produced, including what a real dataset hides."""

    config: SimulationConfig
    params: SimulationParams
    dataset: ObservationalDataset
    confounders: np.ndarray  # (n, d_u)
    x_base: np.ndarray
    peer_weights: PeerWeights
    propensities: np.ndarray
    z_obs: np.ndarray
    noise_y: np.ndarray
    outcome_base: np.ndarray = field(init=False)  # treatment-free outcome terms

    def __post_init__(self) -> None:
        base = _outcome_base(self.dataset.features.values, self.confounders, self.peer_weights, self.params)
        base.flags.writeable = False
        object.__setattr__(self, "outcome_base", base)

    @property
    def network(self) -> Network:
        return self.dataset.network

    @property
    def n_nodes(self) -> int:
        return self.dataset.n_nodes


def sample_confounders(n: int, params: SimulationParams, rng) -> np.ndarray:
    """n i.i.d. rows from N(0, mu * I_{d_u})."""
    rng = _as_rng(rng)
    return rng.normal(0.0, np.sqrt(params.mu), size=(n, params.d_u))


def synthesize_features(x_base: np.ndarray, confounders: np.ndarray, params: SimulationParams, rng) -> np.ndarray:
    """X = x_base + U @ psi + Gaussian noise."""
    rng = _as_rng(rng)
    x_base = np.asarray(x_base, dtype=np.float64)
    if x_base.shape[1] != params.psi.shape[1] or confounders.shape[1] != params.d_u:
        raise ValueError("feature/confounder shapes do not conform to psi")
    if x_base.shape[0] != confounders.shape[0]:
        raise ValueError("x_base and confounders disagree on node count")
    noise = rng.normal(0.0, params.sigma_x, size=x_base.shape) if params.sigma_x > 0 else 0.0
    return x_base + confounders @ params.psi + noise


def treatment_logits(
    features: np.ndarray,
    confounders: np.ndarray,
    peer_weights: PeerWeights,
    params: SimulationParams,
    noise_t: np.ndarray | float = 0.0,
) -> np.ndarray:
    a0, a1, a2 = params.alpha
    own = features @ params.w0
    peer = weighted_neighbor_sum(peer_weights, features @ params.w1)
    conf = confounders @ params.w2
    return a0 * own + a1 * peer + a2 * conf + noise_t


def assign_treatments(
    features: np.ndarray,
    confounders: np.ndarray,
    network: Network,
    peer_weights: PeerWeights,
    params: SimulationParams,
    rng,
) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli treatments and the propensities they were drawn from."""
    rng = _as_rng(rng)
    n = network.n_nodes
    noise_t = rng.normal(0.0, params.sigma_t, size=n) if params.sigma_t > 0 else np.zeros(n)
    props = _sigmoid(treatment_logits(features, confounders, peer_weights, params, noise_t))
    treatments = (rng.random(n) < props).astype(np.int64)
    return treatments, props


def _outcome_base(
    features: np.ndarray,
    confounders: np.ndarray,
    peer_weights: PeerWeights,
    params: SimulationParams,
) -> np.ndarray:
    """Outcome terms that do not depend on (t, z): both sigmoid terms plus the confounder leak."""
    b0, b1, _, _, b4 = params.beta
    own = _sigmoid(b0 * (features @ params.w3))
    peer = _sigmoid(b1 * weighted_neighbor_sum(peer_weights, features @ params.w4))
    return own + peer + b4 * (confounders @ params.w5)


def oracle_outcome(
    instance: SimulatedInstance,
    treatments: np.ndarray,
    z: np.ndarray,
    include_noise: bool = False,
) -> np.ndarray:
    """Generative outcome at arbitrary (t, z); optionally adds the recorded factual noise."""
    t = np.asarray(treatments, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if t.shape != (instance.n_nodes,) or z.shape != (instance.n_nodes,):
        raise ValueError("treatments and z must be length n_nodes")
    _, _, b2, b3, _ = instance.params.beta
    y = instance.outcome_base + b2 * t + b3 * z
    if include_noise:
        y = y + instance.noise_y
    return y


def ground_truth_effects(instance: SimulatedInstance) -> GroundTruthEffects:
    """Noiseless oracle contrasts at the standard evaluation pairs.

    The outcome is linear in (t, z), so the contrasts equal b2, b3*z_obs and
    their sum exactly; computed in closed form rather than by subtracting two
    oracle sums, which would lose the exactness to float cancellation.
    """
    _, _, b2, b3, _ = instance.params.beta
    n = instance.n_nodes
    me = np.full(n, b2)
    pe = b3 * instance.z_obs
    return GroundTruthEffects(me=me, pe=pe, te=me + pe, z_obs=instance.z_obs.copy())


def flip_treatments(instance: SimulatedInstance, flip_rate: float, seed: int) -> FlippedScenario:
    """Invert the treatment of an exact round(flip_rate * n) uniform random subset.

    Exposure is recomputed for the flipped assignment and outcomes come from
    the noiseless oracle.
    """
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError(f"flip_rate must be in [0, 1], got {flip_rate}")
    n = instance.n_nodes
    n_flip = int(round(flip_rate * n))
    rng = np.random.default_rng(seed)
    flipped = np.sort(rng.choice(n, size=n_flip, replace=False))
    t = instance.dataset.treatments.astype(np.int64).copy()
    t[flipped] = 1 - t[flipped]
    z = exposure(instance.network, instance.peer_weights, t)
    y = oracle_outcome(instance, t, z, include_noise=False)
    return FlippedScenario(flip_rate=flip_rate, flipped=flipped, treatments=t, z=z, outcomes=y)


def draw_params(config: SimulationConfig, seed: int, rng) -> SimulationParams:
    """Draw beta, the weight vectors and psi; applies the confounding knob."""
    rng = _as_rng(rng)
    beta = rng.uniform(0.0, 1.0, size=5)
    sx = 1.0 / np.sqrt(config.d_x)
    su = 1.0 / np.sqrt(config.d_u)
    w0 = rng.normal(0.0, sx, size=config.d_x)
    w1 = rng.normal(0.0, sx, size=config.d_x)
    w2 = rng.normal(0.0, su, size=config.d_u)
    w3 = rng.normal(0.0, sx, size=config.d_x)
    w4 = rng.normal(0.0, sx, size=config.d_x)
    w5 = rng.normal(0.0, su, size=config.d_u)
    # leak scale: Var(U @ psi per feature dim) = mu * d_u * Var(psi entry) = 1,
    # so the confounder signature in X is unit order, comparable to the base
    # features, and confounders stay only partially recoverable from X
    psi = rng.normal(0.0, 1.0 / np.sqrt(config.mu * config.d_u), size=(config.d_u, config.d_x))
    alpha = config.alpha
    if not config.confounded:
        alpha = (alpha[0], alpha[1], 0.0)
        beta[4] = 0.0
    return SimulationParams(
        mu=config.mu,
        d_u=config.d_u,
        alpha=tuple(float(a) for a in alpha),
        beta=tuple(float(b) for b in beta),
        w0=w0, w1=w1, w2=w2, w3=w3, w4=w4, w5=w5, psi=psi,
        sigma_t=config.sigma_t,
        sigma_y=config.sigma_y,
        sigma_x=config.sigma_x,
        smoothing=config.smoothing,
        seed=int(seed),
    )


def generate_instance(config: SimulationConfig, seed: int) -> SimulatedInstance:
    """Generate a full instance; identical (config, seed) is bit-reproducible."""
    rng = np.random.default_rng(seed)
    network_seed = int(rng.integers(0, 2**63 - 1))
    network = generate_random_network(config.n_nodes, config.edge_prob, network_seed)
    params = draw_params(config, seed, rng)
    n = config.n_nodes
    x_base = rng.standard_normal((n, config.d_x))
    confounders = sample_confounders(n, params, rng)
    features = synthesize_features(x_base, confounders, params, rng)
    peer_weights = compute_peer_weights(network, features, config.smoothing)
    treatments, propensities = assign_treatments(features, confounders, network, peer_weights, params, rng)
    z_obs = exposure(network, peer_weights, treatments)
    noise_y = rng.normal(0.0, params.sigma_y, size=n)
    _, _, b2, b3, _ = params.beta
    base = _outcome_base(features, confounders, peer_weights, params)
    outcomes = base + b2 * treatments + b3 * z_obs + noise_y
    dataset = ObservationalDataset(network, FeatureMatrix(features), treatments, outcomes)
    for arr in (x_base, confounders, propensities, z_obs, noise_y):
        arr.flags.writeable = False
    return SimulatedInstance(
        config=config,
        params=params,
        dataset=dataset,
        confounders=confounders,
        x_base=x_base,
        peer_weights=peer_weights,
        propensities=propensities,
        z_obs=z_obs,
        noise_y=noise_y,
    )


def save_instance(instance: SimulatedInstance, out_dir, dump_weights: bool = False) -> dict[str, str]:
    """Serialize an instance directory: dataset files, params.json, ground_truth.csv."""
    os.makedirs(out_dir, exist_ok=True)
    paths = data_io.save_dataset(instance.dataset, out_dir)
    params_path = os.path.join(out_dir, PARAMS_FILE)
    p = instance.params
    blob = {
        "format": INSTANCE_MAGIC,
        "seed": p.seed,
        "config": asdict(instance.config),
        "alpha": list(p.alpha),
        "beta": list(p.beta),
        "mu": p.mu,
        "d_u": p.d_u,
        "sigma_t": p.sigma_t,
        "sigma_y": p.sigma_y,
        "sigma_x": p.sigma_x,
        "smoothing": p.smoothing,
        "weight_vectors": {
            "w0": p.w0.tolist(), "w1": p.w1.tolist(), "w2": p.w2.tolist(),
            "w3": p.w3.tolist(), "w4": p.w4.tolist(), "w5": p.w5.tolist(),
            "psi": p.psi.tolist(),
        },
    }
    with open(params_path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")
    truth = ground_truth_effects(instance)
    gt_path = os.path.join(out_dir, GROUND_TRUTH_FILE)
    with open(gt_path, "w", encoding="utf-8") as fh:
        fh.write("node,me,pe,te,z_obs\n")
        for i in range(instance.n_nodes):
            fh.write(
                f"{i},{float(truth.me[i])!r},{float(truth.pe[i])!r},"
                f"{float(truth.te[i])!r},{float(truth.z_obs[i])!r}\n"
            )
    paths["params"] = params_path
    paths["ground_truth"] = gt_path
    if dump_weights:
        wpath = os.path.join(out_dir, WEIGHTS_FILE)
        instance.peer_weights.to_csv(wpath)
        paths["peer_weights"] = wpath
    return paths


def load_instance(in_dir) -> SimulatedInstance:
    """Rebuild an instance from its directory.

    The generator is deterministic per (config, seed), so the instance is
    regenerated from params.json and verified bit-for-bit against the
    serialized dataset files; a mismatch means the directory was edited.
    """
    params_path = os.path.join(in_dir, PARAMS_FILE)
    with open(params_path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != INSTANCE_MAGIC:
        raise ValueError(f"{params_path}: not a {INSTANCE_MAGIC} file")
    cfg = blob["config"]
    cfg["alpha"] = tuple(cfg["alpha"])
    config = SimulationConfig(**cfg)
    instance = generate_instance(config, int(blob["seed"]))
    on_disk = data_io.load_dataset_dir(in_dir)
    if on_disk != instance.dataset:
        raise ValueError(f"{in_dir}: dataset files do not match the recorded seed/config")
    return instance
