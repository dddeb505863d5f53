import dataclasses

import numpy as np
import pytest

from cgnn.exposure import exposure
from cgnn.simulate import (
    SimulationConfig,
    SimulationParams,
    draw_params,
    flip_treatments,
    generate_instance,
    ground_truth_effects,
    load_instance,
    oracle_outcome,
    sample_confounders,
    save_instance,
    synthesize_features,
    treatment_logits,
    assign_treatments,
)


@pytest.fixture(scope="module")
def small_instance():
    return generate_instance(SimulationConfig(n_nodes=120, edge_prob=0.06), seed=11)


def _params(config, seed=0):
    return draw_params(config, seed, np.random.default_rng(seed))


def test_confounder_variance_matches_mu():
    cfg = SimulationConfig(n_nodes=5000)
    params = _params(cfg)
    u = sample_confounders(5000, params, np.random.default_rng(0))
    assert u.shape == (5000, cfg.d_u)
    per_dim_var = u.var(axis=0)
    assert np.all(np.abs(per_dim_var - 20.0) < 0.2 * 20.0)


def test_confounder_zero_variance_limit():
    cfg = SimulationConfig(mu=1e-300)
    params = _params(cfg)
    u = sample_confounders(100, params, np.random.default_rng(0))
    assert np.allclose(u, 0.0)


def test_confounders_deterministic_per_seed():
    params = _params(SimulationConfig())
    a = sample_confounders(50, params, 42)
    b = sample_confounders(50, params, 42)
    assert np.array_equal(a, b)


def test_synthesize_identity_when_psi_and_noise_zero():
    cfg = SimulationConfig(n_nodes=30, sigma_x=0.0)
    params = dataclasses.replace(_params(cfg), psi=np.zeros((cfg.d_u, cfg.d_x)), sigma_x=0.0)
    rng = np.random.default_rng(1)
    x_base = rng.standard_normal((30, cfg.d_x))
    u = sample_confounders(30, params, rng)
    x = synthesize_features(x_base, u, params, rng)
    assert np.array_equal(x, x_base)


def test_synthesize_pure_confounder_leak():
    cfg = SimulationConfig(n_nodes=30, sigma_x=0.0)
    params = dataclasses.replace(_params(cfg), sigma_x=0.0)
    rng = np.random.default_rng(1)
    u = sample_confounders(30, params, rng)
    x = synthesize_features(np.zeros((30, cfg.d_x)), u, params, rng)
    assert np.allclose(x, u @ params.psi)


def test_synthesize_noise_variance():
    cfg = SimulationConfig(n_nodes=4000, sigma_x=0.1)
    params = _params(cfg)
    rng = np.random.default_rng(5)
    x_base = rng.standard_normal((4000, cfg.d_x))
    u = sample_confounders(4000, params, rng)
    x = synthesize_features(x_base, u, params, rng)
    residual = x - x_base - u @ params.psi
    assert residual.var() == pytest.approx(0.01, rel=0.1)


def test_propensity_half_when_weights_and_noise_zero():
    cfg = SimulationConfig(n_nodes=20, edge_prob=0.2, sigma_t=0.0)
    params = _params(cfg)
    params = dataclasses.replace(
        params,
        w0=np.zeros(cfg.d_x), w1=np.zeros(cfg.d_x), w2=np.zeros(cfg.d_u), sigma_t=0.0,
    )
    inst = generate_instance(cfg, 3)
    _, props = assign_treatments(
        inst.dataset.features.values, inst.confounders, inst.network, inst.peer_weights, params,
        np.random.default_rng(0),
    )
    assert np.all(props == 0.5)


def test_alpha2_zero_makes_propensity_independent_of_confounders(small_instance):
    inst = small_instance
    params = dataclasses.replace(inst.params, alpha=(inst.params.alpha[0], inst.params.alpha[1], 0.0))
    logits = treatment_logits(inst.dataset.features.values, inst.confounders, inst.peer_weights, params)
    perm = np.random.default_rng(0).permutation(inst.n_nodes)
    logits_perm = treatment_logits(inst.dataset.features.values, inst.confounders[perm], inst.peer_weights, params)
    assert np.array_equal(logits, logits_perm)


def test_treated_fraction_near_mean_propensity():
    inst = generate_instance(SimulationConfig(n_nodes=2000, edge_prob=0.005), seed=2)
    t = inst.dataset.treatments
    p = inst.propensities
    se = np.sqrt(np.sum(p * (1 - p))) / inst.n_nodes
    assert abs(t.mean() - p.mean()) <= 3 * se


def test_propensities_strictly_inside_unit_interval(small_instance):
    assert np.all(small_instance.propensities > 0)
    assert np.all(small_instance.propensities < 1)


def test_oracle_linearity_in_treatment(small_instance):
    inst = small_instance
    n = inst.n_nodes
    z = inst.z_obs
    y1 = oracle_outcome(inst, np.ones(n), z)
    y0 = oracle_outcome(inst, np.zeros(n), z)
    assert np.allclose(y1 - y0, inst.params.beta[2], atol=1e-12)


def test_oracle_linearity_in_exposure(small_instance):
    inst = small_instance
    n = inst.n_nodes
    t = inst.dataset.treatments.astype(float)
    y_z = oracle_outcome(inst, t, inst.z_obs)
    y_0 = oracle_outcome(inst, t, np.zeros(n))
    assert np.allclose(y_z - y_0, inst.params.beta[3] * inst.z_obs, atol=1e-12)


def test_factual_outcomes_reproduce_exactly(small_instance):
    inst = small_instance
    y = oracle_outcome(inst, inst.dataset.treatments, inst.z_obs, include_noise=True)
    assert np.array_equal(y, inst.dataset.outcomes)


def test_ground_truth_effects_exact(small_instance):
    inst = small_instance
    gt = ground_truth_effects(inst)
    b2, b3 = inst.params.beta[2], inst.params.beta[3]
    assert np.all(gt.me == b2)
    assert np.array_equal(gt.pe, b3 * inst.z_obs)
    assert np.array_equal(gt.te, gt.me + gt.pe)


def test_ground_truth_matches_oracle_contrasts(small_instance):
    inst = small_instance
    gt = ground_truth_effects(inst)
    n = inst.n_nodes
    zeros = np.zeros(n)
    me = oracle_outcome(inst, np.ones(n), zeros) - oracle_outcome(inst, zeros, zeros)
    pe = oracle_outcome(inst, zeros, inst.z_obs) - oracle_outcome(inst, zeros, zeros)
    te = oracle_outcome(inst, np.ones(n), inst.z_obs) - oracle_outcome(inst, zeros, zeros)
    assert np.allclose(me, gt.me, atol=1e-12)
    assert np.allclose(pe, gt.pe, atol=1e-12)
    assert np.allclose(te, gt.te, atol=1e-12)


def test_flip_rate_zero_is_noop(small_instance):
    inst = small_instance
    s = flip_treatments(inst, 0.0, seed=9)
    assert np.array_equal(s.treatments, inst.dataset.treatments)
    assert np.array_equal(s.z, inst.z_obs)
    y_noiseless = oracle_outcome(inst, inst.dataset.treatments, inst.z_obs)
    assert np.array_equal(s.outcomes, y_noiseless)


def test_flip_rate_one_inverts_everything(small_instance):
    inst = small_instance
    s = flip_treatments(inst, 1.0, seed=9)
    assert np.array_equal(s.treatments, 1 - inst.dataset.treatments)


def test_flip_exact_count():
    inst = generate_instance(SimulationConfig(n_nodes=100, edge_prob=0.05), seed=4)
    s = flip_treatments(inst, 0.5, seed=0)
    changed = np.sum(s.treatments != inst.dataset.treatments)
    assert changed == 50 and s.flipped.size == 50


def test_flip_deterministic_per_seed(small_instance):
    a = flip_treatments(small_instance, 0.25, seed=7)
    b = flip_treatments(small_instance, 0.25, seed=7)
    assert np.array_equal(a.flipped, b.flipped)
    c = flip_treatments(small_instance, 0.25, seed=8)
    assert not np.array_equal(a.flipped, c.flipped)


def test_flip_exposure_matches_incremental_update(small_instance):
    inst = small_instance
    s = flip_treatments(inst, 0.3, seed=13)
    delta_t = s.treatments.astype(float) - inst.dataset.treatments
    incremental = inst.z_obs + exposure(inst.network, inst.peer_weights, delta_t)
    assert np.allclose(s.z, incremental, atol=1e-12)


def test_instance_bit_reproducible():
    cfg = SimulationConfig(n_nodes=80, edge_prob=0.05)
    a = generate_instance(cfg, 21)
    b = generate_instance(cfg, 21)
    assert a.dataset == b.dataset
    assert np.array_equal(a.confounders, b.confounders)
    assert np.array_equal(a.propensities, b.propensities)
    assert np.array_equal(a.noise_y, b.noise_y)
    assert np.array_equal(a.peer_weights.values, b.peer_weights.values)
    assert a.params.beta == b.params.beta


def test_confounding_knob_pairs_instances():
    cfg = SimulationConfig(n_nodes=60, edge_prob=0.08, confounded=True)
    conf = generate_instance(cfg, 5)
    clean = generate_instance(dataclasses.replace(cfg, confounded=False), 5)
    assert clean.params.alpha[2] == 0.0 and clean.params.beta[4] == 0.0
    assert conf.params.alpha[2] != 0.0 and conf.params.beta[4] != 0.0
    assert conf.params.beta[:4] == clean.params.beta[:4]
    assert conf.network == clean.network
    assert np.array_equal(conf.x_base, clean.x_base)
    assert np.array_equal(conf.confounders, clean.confounders)


def test_params_validation():
    cfg = SimulationConfig()
    params = _params(cfg)
    with pytest.raises(ValueError, match="conform"):
        dataclasses.replace(params, psi=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        SimulationConfig(mu=0.0)
    with pytest.raises(ValueError):
        SimulationConfig(d_u=0)


def test_save_and_load_instance_round_trip(tmp_path, small_instance):
    paths = save_instance(small_instance, tmp_path / "inst", dump_weights=True)
    assert (tmp_path / "inst" / "peer_weights.csv").exists()
    loaded = load_instance(tmp_path / "inst")
    assert loaded.dataset == small_instance.dataset
    assert loaded.params.beta == small_instance.params.beta
    assert np.array_equal(loaded.confounders, small_instance.confounders)
    gt_lines = (tmp_path / "inst" / "ground_truth.csv").read_text().splitlines()
    assert gt_lines[0] == "node,me,pe,te,z_obs"
    assert len(gt_lines) == 1 + small_instance.n_nodes


def test_load_instance_rejects_tampered_files(tmp_path, small_instance):
    save_instance(small_instance, tmp_path / "inst")
    to = tmp_path / "inst" / "treatment_outcome.csv"
    lines = to.read_text().splitlines()
    node, t, y = lines[1].split(",")
    lines[1] = f"{node},{1 - int(t)},{y}"
    to.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="do not match"):
        load_instance(tmp_path / "inst")
