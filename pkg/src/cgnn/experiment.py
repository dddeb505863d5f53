"""Multi-seed experiment protocol: simulate, split, train, evaluate, flip.

A single repetition generates an instance, splits nodes into train/test,
trains both stages, and produces within-sample (train nodes) and
out-of-sample (test nodes) effect reports plus a treatment-flip table, all
under full-graph message passing. The pipeline repeats this with derived
seeds base_seed + run_index and reports mean and standard deviation across
repetitions. Every artifact write is canonical (sorted keys, repr floats,
no timestamps) so identical configs produce byte-identical output trees.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .estimator import (
    EffectReport,
    StageOneModel,
    StageTwoModel,
    TrainConfig,
    estimate_effects,
    save_stage1,
    save_stage2,
    train_stage1,
    train_stage2,
)
from .graph import split_nodes
from .metrics import mse
from .simulate import (
    SimulatedInstance,
    SimulationConfig,
    flip_treatments,
    generate_instance,
    ground_truth_effects,
    oracle_outcome,
    save_instance,
)


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    flip_rates: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    flip_draws: int = 1
    repetitions: int = 5
    base_seed: int = 0
    train_frac: float = 0.8

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.flip_draws < 1:
            raise ValueError("flip_draws must be >= 1")
        if any(not 0.0 <= r <= 1.0 for r in self.flip_rates):
            raise ValueError("flip rates must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON or TOML file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if str(path).endswith(".toml"):
        blob = _loads_toml(raw)
    else:
        try:
            blob = json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError:
            blob = _loads_toml(raw)
    return config_from_dict(blob)


def _loads_toml(raw: bytes) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    return tomllib.loads(raw.decode("utf-8"))


def config_from_dict(blob: dict) -> ExperimentConfig:
    sim_kwargs = dict(blob.get("sim", {}))
    if "alpha" in sim_kwargs:
        sim_kwargs["alpha"] = tuple(sim_kwargs["alpha"])
    train_kwargs = dict(blob.get("train", {}))
    top = {k: v for k, v in blob.items() if k not in ("sim", "train")}
    if "flip_rates" in top:
        top["flip_rates"] = tuple(top["flip_rates"])
    return ExperimentConfig(
        sim=SimulationConfig(**sim_kwargs), train=TrainConfig(**train_kwargs), **top
    )


@dataclass
class FlipRow:
    flip_rate: float
    seeds: list[int]
    values: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0


def run_flip_experiment(
    model2: StageTwoModel,
    instance: SimulatedInstance,
    flip_rates,
    seeds,
    nodes: np.ndarray | None = None,
) -> list[FlipRow]:
    """Counterfactual-outcome MSE per flip rate against noiseless truth.

    For each (rate, seed) the treatments of an exact flip_rate fraction of
    nodes are inverted, exposure recomputed, noiseless outcomes regenerated,
    and predictions made with the counterfactual overrides.
    """
    nodes = np.arange(instance.n_nodes) if nodes is None else np.sort(np.asarray(nodes))
    rows = []
    for rate in flip_rates:
        values = []
        for seed in seeds:
            scenario = flip_treatments(instance, rate, seed)
            y_hat = model2.predict(
                instance.dataset.features.values,
                instance.network,
                scenario.treatments.astype(np.float64),
                scenario.z,
            )
            values.append(mse(y_hat[nodes], scenario.outcomes[nodes]).value)
        rows.append(FlipRow(flip_rate=float(rate), seeds=[int(s) for s in seeds], values=values))
    return rows


@dataclass
class RunResult:
    seed: int
    regime: str
    train_nodes: np.ndarray
    test_nodes: np.ndarray
    stage1: StageOneModel
    stage2: StageTwoModel
    report_within: EffectReport
    report_out: EffectReport
    flip_rows: list[FlipRow]
    instance: SimulatedInstance

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "regime": self.regime,
            "train_nodes": [int(i) for i in self.train_nodes],
            "test_nodes": [int(i) for i in self.test_nodes],
            "stage1": {
                "epochs_run": self.stage1.train_info["epochs_run"],
                "final_loss": self.stage1.loss_trace[-1],
                "max_alpha_rowsum_dev": self.stage1.train_info["max_alpha_rowsum_dev"],
            },
            "stage2": {
                "epochs_run": self.stage2.train_info["epochs_run"],
                "final_loss": self.stage2.loss_trace[-1],
                "max_alpha_rowsum_dev": self.stage2.train_info["max_alpha_rowsum_dev"],
            },
            "within": self.report_within.summary_dict(),
            "out_of_sample": self.report_out.summary_dict(),
            "flip": [
                {"rate": r.flip_rate, "seeds": r.seeds, "values": r.values, "mean": r.mean, "std": r.std}
                for r in self.flip_rows
            ],
        }


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_single(
    config: ExperimentConfig,
    seed: int,
    out_dir=None,
    use_observed_treatment: bool = False,
) -> RunResult:
    """One repetition of the full protocol at the given seed."""
    instance = generate_instance(config.sim, seed)
    dataset = instance.dataset
    train_nodes, test_nodes = split_nodes(instance.network, config.train_frac, seed)
    train_cfg = replace(config.train, seed=seed)
    stage1 = train_stage1(dataset, instance.network, train_cfg, train_nodes)
    stage2 = train_stage2(
        dataset,
        instance.network,
        stage1,
        instance.peer_weights,
        train_cfg,
        train_nodes,
        use_observed_treatment=use_observed_treatment,
    )
    truth = ground_truth_effects(instance)
    y_noiseless = oracle_outcome(instance, dataset.treatments, instance.z_obs, include_noise=False)
    factual = (dataset.treatments.astype(np.float64), instance.z_obs, y_noiseless)
    common = dict(
        model2=stage2,
        dataset=dataset,
        peer_weights=instance.peer_weights,
        z_query=instance.z_obs,
        truth=truth,
        factual=factual,
    )
    config_echo = asdict(train_cfg)
    report_within = estimate_effects(
        nodes=train_nodes,
        meta={"scope": "within", "seed": seed, "regime": config.sim.regime, "config": config_echo},
        **common,
    )
    report_out = estimate_effects(
        nodes=test_nodes,
        meta={"scope": "out_of_sample", "seed": seed, "regime": config.sim.regime, "config": config_echo},
        **common,
    )
    flip_seeds = [seed + 7919 * (k + 1) for k in range(config.flip_draws)]
    flip_rows = run_flip_experiment(stage2, instance, config.flip_rates, flip_seeds, nodes=test_nodes)
    result = RunResult(
        seed=seed,
        regime=config.sim.regime,
        train_nodes=train_nodes,
        test_nodes=test_nodes,
        stage1=stage1,
        stage2=stage2,
        report_within=report_within,
        report_out=report_out,
        flip_rows=flip_rows,
        instance=instance,
    )
    if out_dir is not None:
        _write_run(result, config, out_dir)
    return result


def _write_run(result: RunResult, config: ExperimentConfig, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_instance(result.instance, os.path.join(out_dir, "instance"))
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    save_stage1(result.stage1, os.path.join(ckpt_dir, "stage1.json"))
    save_stage2(result.stage2, os.path.join(ckpt_dir, "stage2.json"))
    result.report_within.to_csv(os.path.join(out_dir, "effects_within.csv"))
    result.report_out.to_csv(os.path.join(out_dir, "effects_out.csv"))
    _dump_json(result.report_within.summary_dict(), os.path.join(out_dir, "effects_within.json"))
    _dump_json(result.report_out.summary_dict(), os.path.join(out_dir, "effects_out.json"))
    write_flip_csv(result.flip_rows, os.path.join(out_dir, "flip_table.csv"))
    _dump_json(result.to_dict(), os.path.join(out_dir, "run.json"))


def write_flip_csv(rows: list[FlipRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("flip_rate,flip_seed,mse\n")
        for row in rows:
            for s, v in zip(row.seeds, row.values):
                fh.write(f"{float(row.flip_rate)!r},{s},{float(v)!r}\n")


def _agg(values: list[float]) -> dict:
    return {
        "values": [float(v) for v in values],
        "mean": float(np.mean(values)),
        "std": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
    }


def summarize(runs: list[RunResult], config: ExperimentConfig) -> dict:
    """Cross-repetition means and standard deviations, recomputable from runs."""
    summary: dict = {
        "regime": config.sim.regime,
        "repetitions": len(runs),
        "base_seed": config.base_seed,
        "seeds": [r.seed for r in runs],
        "config": config.to_dict(),
    }
    for scope, pick in (("within", lambda r: r.report_within), ("out_of_sample", lambda r: r.report_out)):
        block = {}
        for key in ("pehe_me", "pehe_pe", "pehe_te", "mse"):
            vals = [getattr(pick(r), key if key != "mse" else "mse") for r in runs]
            block[key] = _agg(vals)
        summary[scope] = block
    flip_block = []
    if runs and runs[0].flip_rows:
        for idx, row in enumerate(runs[0].flip_rows):
            per_run_means = [r.flip_rows[idx].mean for r in runs]
            flip_block.append({"rate": row.flip_rate, **_agg(per_run_means)})
    summary["flip"] = flip_block
    return summary


@dataclass
class PipelineResult:
    runs: list[RunResult]
    summary: dict
    out_dir: str | None


def run_pipeline(config: ExperimentConfig, out_dir=None) -> PipelineResult:
    """Full protocol repeated with seeds base_seed + run index."""
    runs = []
    for i in range(config.repetitions):
        run_dir = os.path.join(out_dir, f"run_{i:03d}") if out_dir is not None else None
        runs.append(run_single(config, config.base_seed + i, out_dir=run_dir))
    summary = summarize(runs, config)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _dump_json(summary, os.path.join(out_dir, "summary.json"))
        with open(os.path.join(out_dir, "flip_summary.csv"), "w", encoding="utf-8") as fh:
            fh.write("flip_rate,mean_mse,std_mse\n")
            for row in summary["flip"]:
                fh.write(f"{float(row['rate'])!r},{float(row['mean'])!r},{float(row['std'])!r}\n")
    return PipelineResult(runs=runs, summary=summary, out_dir=None if out_dir is None else str(out_dir))
