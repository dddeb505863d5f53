import filecmp
import json
import os

import numpy as np
import pytest

from cgnn.estimator import TrainConfig
from cgnn.experiment import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    run_flip_experiment,
    run_pipeline,
    run_single,
)
from cgnn.metrics import mse
from cgnn.simulate import SimulationConfig, flip_treatments, oracle_outcome

TINY = ExperimentConfig(
    sim=SimulationConfig(n_nodes=60, edge_prob=0.1),
    train=TrainConfig(epochs_stage1=60, epochs_stage2=80, patience=0, hidden_width=8, head_hidden=4),
    flip_rates=(0.0, 0.25, 1.0),
    repetitions=2,
    base_seed=5,
)


@pytest.fixture(scope="module")
def tiny_run():
    return run_single(TINY, TINY.base_seed)


def test_run_single_reports(tiny_run):
    r = tiny_run
    assert r.report_within.nodes.size == 48
    assert r.report_out.nodes.size == 12
    assert r.report_within.pehe_me is not None
    assert r.report_within.mse is not None
    assert r.report_within.meta["scope"] == "within"
    assert r.report_out.meta["scope"] == "out_of_sample"


def test_flip_rate_zero_row_equals_factual_noiseless_mse(tiny_run):
    r = tiny_run
    inst = r.instance
    row0 = [row for row in r.flip_rows if row.flip_rate == 0.0][0]
    y_hat = r.stage2.predict(
        inst.dataset.features.values,
        inst.network,
        inst.dataset.treatments.astype(float),
        inst.z_obs,
    )
    y_true = oracle_outcome(inst, inst.dataset.treatments, inst.z_obs)
    expected = mse(y_hat[r.test_nodes], y_true[r.test_nodes]).value
    assert row0.values[0] == expected
    assert row0.values[0] == r.report_out.mse


def test_flip_experiment_row_shape(tiny_run):
    r = tiny_run
    rows = run_flip_experiment(r.stage2, r.instance, [0.25, 0.5, 0.75, 1.0], seeds=[1, 2], nodes=r.test_nodes)
    assert [row.flip_rate for row in rows] == [0.25, 0.5, 0.75, 1.0]
    for row in rows:
        assert len(row.values) == 2
        assert row.mean == pytest.approx(np.mean(row.values))
        scenario = flip_treatments(r.instance, row.flip_rate, row.seeds[0])
        assert scenario.flip_rate == row.flip_rate


def test_pipeline_writes_artifacts(tmp_path):
    out = tmp_path / "exp"
    result = run_pipeline(TINY, out_dir=out)
    assert (out / "summary.json").exists()
    assert (out / "flip_summary.csv").exists()
    for i in range(TINY.repetitions):
        run_dir = out / f"run_{i:03d}"
        for name in (
            "instance/edges.txt",
            "instance/features.csv",
            "instance/treatment_outcome.csv",
            "instance/params.json",
            "instance/ground_truth.csv",
            "checkpoints/stage1.json",
            "checkpoints/stage2.json",
            "effects_within.csv",
            "effects_out.csv",
            "effects_within.json",
            "effects_out.json",
            "flip_table.csv",
            "run.json",
        ):
            assert (run_dir / name).exists(), name
    assert result.summary["regime"] == "confounded"


def test_summary_recomputes_from_run_files(tmp_path):
    out = tmp_path / "exp"
    result = run_pipeline(TINY, out_dir=out)
    summary = json.loads((out / "summary.json").read_text())
    per_run = []
    for i in range(TINY.repetitions):
        blob = json.loads((out / f"run_{i:03d}" / "run.json").read_text())
        per_run.append(blob["within"]["pehe_me"])
    assert summary["within"]["pehe_me"]["values"] == per_run
    assert summary["within"]["pehe_me"]["mean"] == float(np.mean(per_run))
    assert summary["within"]["pehe_me"]["std"] == float(np.std(per_run, ddof=1))
    assert summary["seeds"] == [TINY.base_seed, TINY.base_seed + 1]


def test_first_run_identical_regardless_of_repetitions():
    one = run_pipeline(ExperimentConfig(**{**TINY.__dict__, "repetitions": 1}))
    two = run_pipeline(TINY)
    a = one.runs[0].report_within
    b = two.runs[0].report_within
    assert np.array_equal(a.me_hat, b.me_hat)
    assert a.pehe_me == b.pehe_me


def _tree_files(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = p
    return out


def test_pipeline_outputs_byte_identical(tmp_path):
    run_pipeline(TINY, out_dir=tmp_path / "a")
    run_pipeline(TINY, out_dir=tmp_path / "b")
    fa, fb = _tree_files(tmp_path / "a"), _tree_files(tmp_path / "b")
    assert set(fa) == set(fb)
    for rel in fa:
        assert filecmp.cmp(fa[rel], fb[rel], shallow=False), rel


def test_config_from_dict_and_files(tmp_path):
    blob = {
        "sim": {"n_nodes": 30, "edge_prob": 0.2, "confounded": False, "alpha": [1.0, 0.5, 0.1]},
        "train": {"epochs_stage1": 5, "epochs_stage2": 5, "hidden_width": 4},
        "flip_rates": [0.5],
        "repetitions": 1,
        "base_seed": 9,
    }
    cfg = config_from_dict(blob)
    assert cfg.sim.n_nodes == 30 and not cfg.sim.confounded
    assert cfg.train.hidden_width == 4
    assert cfg.flip_rates == (0.5,) and cfg.base_seed == 9

    jpath = tmp_path / "cfg.json"
    jpath.write_text(json.dumps(blob))
    assert load_config(jpath) == cfg

    tpath = tmp_path / "cfg.toml"
    tpath.write_text(
        "flip_rates = [0.5]\nrepetitions = 1\nbase_seed = 9\n"
        "[sim]\nn_nodes = 30\nedge_prob = 0.2\nconfounded = false\nalpha = [1.0, 0.5, 0.1]\n"
        "[train]\nepochs_stage1 = 5\nepochs_stage2 = 5\nhidden_width = 4\n"
    )
    assert load_config(tpath) == cfg


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ValueError):
        ExperimentConfig(flip_rates=(1.5,))
    with pytest.raises(ValueError):
        ExperimentConfig(flip_draws=0)


def test_pipeline_regime_labels():
    import dataclasses
    clean = dataclasses.replace(TINY, sim=dataclasses.replace(TINY.sim, confounded=False), repetitions=1)
    result = run_pipeline(clean)
    assert result.summary["regime"] == "clean"
    assert result.runs[0].report_within.meta["regime"] == "clean"
    confounded = dataclasses.replace(TINY, repetitions=1)
    assert run_pipeline(confounded).summary["regime"] == "confounded"
