"""Command-line surface: simulate / train / evaluate / flip-exp / pipeline / diagnose.

Every subcommand accepts --seed, --config (JSON or TOML experiment config)
and --out. Exit code is 0 on success; failures print a machine-readable
error object to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .estimator import (
    estimate_effects,
    iv_diagnostics,
    load_stage1,
    load_stage2,
    save_stage1,
    save_stage2,
    train_stage1,
    train_stage2,
)
from .experiment import (
    ExperimentConfig,
    load_config,
    run_flip_experiment,
    run_pipeline,
    write_flip_csv,
)
from .graph import split_nodes
from .simulate import generate_instance, ground_truth_effects, load_instance, oracle_outcome, save_instance


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _experiment_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    return config


def _require_out(args) -> str:
    if not args.out:
        raise ValueError("--out is required for this command")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_simulate(args) -> int:
    config = _experiment_config(args)
    out = _require_out(args)
    instance = generate_instance(config.sim, config.base_seed)
    save_instance(instance, out, dump_weights=args.dump_weights)
    print(f"instance with {instance.n_nodes} nodes, {instance.network.n_edges} edges -> {out}")
    return 0


def cmd_train(args) -> int:
    config = _experiment_config(args)
    out = _require_out(args)
    instance = load_instance(args.instance)
    seed = config.base_seed
    train_nodes, test_nodes = split_nodes(instance.network, config.train_frac, seed)
    train_cfg = replace(config.train, seed=seed)
    stage1 = train_stage1(instance.dataset, instance.network, train_cfg, train_nodes)
    stage2 = train_stage2(
        instance.dataset,
        instance.network,
        stage1,
        instance.peer_weights,
        train_cfg,
        train_nodes,
        use_observed_treatment=args.ablation_observed_t,
    )
    save_stage1(stage1, os.path.join(out, "stage1.json"))
    save_stage2(stage2, os.path.join(out, "stage2.json"))
    _dump_json(
        {
            "seed": seed,
            "train_frac": config.train_frac,
            "train_nodes": [int(i) for i in train_nodes],
            "test_nodes": [int(i) for i in test_nodes],
            "use_observed_treatment": bool(args.ablation_observed_t),
            "stage1": {"epochs_run": stage1.train_info["epochs_run"], "final_loss": stage1.loss_trace[-1]},
            "stage2": {"epochs_run": stage2.train_info["epochs_run"], "final_loss": stage2.loss_trace[-1]},
        },
        os.path.join(out, "train.json"),
    )
    print(f"checkpoints -> {out}")
    return 0


def _load_run_context(args):
    instance = load_instance(args.instance)
    with open(os.path.join(args.checkpoints, "train.json"), "r", encoding="utf-8") as fh:
        info = json.load(fh)
    stage1 = load_stage1(os.path.join(args.checkpoints, "stage1.json"))
    stage2 = load_stage2(os.path.join(args.checkpoints, "stage2.json"))
    train_nodes = np.array(info["train_nodes"], dtype=np.int64)
    test_nodes = np.array(info["test_nodes"], dtype=np.int64)
    return instance, stage1, stage2, train_nodes, test_nodes, info


def cmd_evaluate(args) -> int:
    out = _require_out(args)
    instance, _, stage2, train_nodes, test_nodes, info = _load_run_context(args)
    truth = ground_truth_effects(instance)
    y_noiseless = oracle_outcome(instance, instance.dataset.treatments, instance.z_obs)
    factual = (instance.dataset.treatments.astype(np.float64), instance.z_obs, y_noiseless)
    for scope, nodes in (("within", train_nodes), ("out", test_nodes)):
        report = estimate_effects(
            stage2,
            instance.dataset,
            instance.peer_weights,
            z_query=instance.z_obs,
            nodes=nodes,
            truth=truth,
            factual=factual,
            meta={
                "scope": scope,
                "seed": info["seed"],
                "regime": instance.config.regime,
                "config": dataclasses.asdict(stage2.config),
            },
        )
        report.to_csv(os.path.join(out, f"effects_{scope}.csv"))
        _dump_json(report.summary_dict(), os.path.join(out, f"effects_{scope}.json"))
    print(f"effect reports -> {out}")
    return 0


def cmd_flip_exp(args) -> int:
    out = _require_out(args)
    instance, _, stage2, _, test_nodes, info = _load_run_context(args)
    rates = [float(r) for r in args.rates.split(",")] if args.rates else [0.25, 0.5, 0.75, 1.0]
    if args.flip_seeds:
        seeds = [int(s) for s in args.flip_seeds.split(",")]
    else:
        seeds = [info["seed"] + 7919]
    rows = run_flip_experiment(stage2, instance, rates, seeds, nodes=test_nodes)
    write_flip_csv(rows, os.path.join(out, "flip_table.csv"))
    _dump_json(
        [{"rate": r.flip_rate, "seeds": r.seeds, "values": r.values, "mean": r.mean, "std": r.std} for r in rows],
        os.path.join(out, "flip_table.json"),
    )
    print(f"flip table -> {out}")
    return 0


def cmd_pipeline(args) -> int:
    config = _experiment_config(args)
    out = _require_out(args)
    result = run_pipeline(config, out_dir=out)
    within = result.summary["within"]
    print(
        f"{config.repetitions} runs ({config.sim.regime}): "
        f"pehe_me={within['pehe_me']['mean']:.4f}±{within['pehe_me']['std']:.4f} -> {out}"
    )
    return 0


def cmd_diagnose(args) -> int:
    out = _require_out(args)
    instance, stage1, _, _, _, _ = _load_run_context(args)
    diag = iv_diagnostics(stage1, instance.dataset, instance.network)
    _dump_json(diag.to_dict(), os.path.join(out, "diagnostics.json"))
    print(
        f"relevance gap {diag.relevance_gap:.4f} "
        f"(graph R2 {diag.r2_graph:.4f} vs structure-free {diag.r2_structure_free:.4f}) -> {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base random seed (overrides config)")
    common.add_argument("--config", type=str, default=None, help="experiment config, .json or .toml")
    common.add_argument("--out", type=str, default=None, help="output directory")

    parser = argparse.ArgumentParser(prog="cgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate and serialize an instance")
    p.add_argument("--dump-weights", action="store_true", help="also write peer-weight triples CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train both stages on an instance")
    p.add_argument("--instance", required=True, help="instance directory from `simulate`")
    p.add_argument(
        "--ablation-observed-t",
        action="store_true",
        help="no-IV ablation: feed observed treatments to stage 2",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="effect reports from checkpoints")
    p.add_argument("--instance", required=True)
    p.add_argument("--checkpoints", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flip-exp", parents=[common], help="counterfactual MSE vs treatment flip rate")
    p.add_argument("--instance", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--rates", default=None, help="comma-separated flip rates")
    p.add_argument("--flip-seeds", default=None, help="comma-separated flip seeds")
    p.set_defaults(func=cmd_flip_exp)

    p = sub.add_parser("pipeline", parents=[common], help="full multi-seed protocol")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("diagnose", parents=[common], help="instrument-quality diagnostics")
    p.add_argument("--instance", required=True)
    p.add_argument("--checkpoints", required=True)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
