import json
from dataclasses import replace

import numpy as np
import pytest

from les_youla import autodiff as ad
from les_youla.ode import rollout
from les_youla.training import (AdamState, Experiment, TrainConfig, adam_step, load_checkpoint,
                                sample_init, train, truncated_cost)

TINY = TrainConfig(T=0.2, h=0.01, batch=2, epochs=2, lr=1e-3, seed=0)


def test_sample_init_contract():
    with pytest.raises(ValueError):
        sample_init(4, 0.0, np.random.default_rng(0))
    a = sample_init(5, 0.05, np.random.default_rng(7))
    b = sample_init(5, 0.05, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    big = sample_init(10_000, 0.05, np.random.default_rng(1))
    std = big.std(axis=0)
    assert np.all((std >= 0.048) & (std <= 0.052))
    assert np.allclose(big.mean(axis=0), 0.0, atol=0.003)
    shifted = sample_init(10_000, 0.05, np.random.default_rng(1), mean=[-1, 0, 0, 0])
    np.testing.assert_allclose(shifted - big, np.tile([-1.0, 0, 0, 0], (10_000, 1)))


def test_truncated_cost_examples():
    c = 0.25
    F = lambda z: ad.concatenate([0.0 * z[..., :1], c + 0.0 * z[..., :1]], axis=-1)
    assert truncated_cost(rollout(F, np.zeros(2), 0.01, 300)) == pytest.approx(c * 3.0)
    G = lambda z: ad.concatenate([-z[..., :1], z[..., :1] * z[..., :1]], axis=-1)
    J = truncated_cost(rollout(G, np.array([1.0, 0.0]), 0.01, 600))
    assert J == pytest.approx(0.5, abs=1e-4)


def test_zero_state_has_zero_cost_with_matched_initializer():
    exp = Experiment(TINY)
    pol = exp.policy
    flat = pol.store.values.copy()
    for name in pol.store.layout:
        if name.startswith(("phi1.b", "phi2.b")):
            flat[pol.store.slice_of(name)] = 0.0
    ro = exp.simulate(flat, np.zeros((1, 4)))
    assert ro.J_T[0] == 0.0


def test_adam_examples():
    p, st, skipped = adam_step(np.array([0.0]), np.array([1.0]), AdamState.zeros(1), 1e-2)
    assert not skipped and p[0] == pytest.approx(-1e-2, rel=1e-6)
    p0 = np.array([1.0, 2.0])
    p, _, _ = adam_step(p0, np.zeros(2), AdamState.zeros(2), 1e-2)
    np.testing.assert_array_equal(p, p0)
    g = np.array([0.3])
    p1, s1, _ = adam_step(np.zeros(1), g, AdamState.zeros(1), 1e-2)
    p2, _, _ = adam_step(p1, g, s1, 1e-2)
    d1, d2 = p1[0], p2[0] - p1[0]
    assert np.sign(d1) == np.sign(d2) and abs(d2 / d1 - 1) < 0.01


def test_adam_skips_non_finite_gradient():
    st = AdamState.zeros(2)
    p, st2, skipped = adam_step(np.ones(2), np.array([np.nan, 1.0]), st, 0.1)
    assert skipped and st2 is st
    np.testing.assert_array_equal(p, np.ones(2))
    with pytest.raises(ValueError):
        adam_step(np.ones(2), np.ones(3), st, 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        replace(TINY, T=0.205).validate()
    with pytest.raises(ValueError):
        replace(TINY, batch=0).validate()
    with pytest.raises(ValueError):
        replace(TINY, lr=-1.0).validate()
    assert TrainConfig().steps == 400


def test_one_epoch_zero_lr_leaves_params():
    cfg = replace(TINY, epochs=1, batch=1, lr=0.0)
    res = train(cfg)
    assert len(res.curve) == 1
    np.testing.assert_array_equal(res.params, res.experiment.policy.store.values)


def test_training_is_bit_reproducible():
    a = train(TINY)
    b = train(TINY)
    assert a.curve.mean == b.curve.mean
    np.testing.assert_array_equal(a.params, b.params)
    assert a.final_hurwitz is True


def test_batch_gradient_matches_finite_differences():
    cfg = replace(TINY, T=0.1, batch=2)
    exp = Experiment(cfg)
    x0 = sample_init(2, 0.05, np.random.default_rng(3), mean=cfg.x0_mean)
    loss = exp.batch_loss(x0)
    flat = exp.policy.store.values.copy()
    val, g = ad.grad(loss, flat)
    # central differences lose about eps |J| / step to cancellation
    noise = 1e3 * np.finfo(float).eps * abs(val) / 1e-6
    rng = np.random.default_rng(4)
    for i in rng.choice(flat.size, 5, replace=False):
        e = np.zeros_like(flat)
        e[i] = 1e-6
        fd = (float(loss(flat + e)) - float(loss(flat - e))) / 2e-6
        assert abs(fd - g[i]) <= 1e-3 * abs(fd) + noise


def test_non_finite_epochs_are_flagged_and_rolled_back(monkeypatch):
    calls = {"n": 0}
    orig = ad.grad

    def flaky(loss, params):
        calls["n"] += 1
        if calls["n"] == 2:
            raise ad.NonFiniteError(7, "exp")
        return orig(loss, params)

    monkeypatch.setattr("les_youla.training.ad.grad", flaky)
    res = train(replace(TINY, epochs=3))
    assert res.curve.flagged == [False, True, False]
    assert res.curve.mean[1] == np.inf


def test_run_directory_contents(tmp_path):
    res = train(TINY, out_dir=tmp_path)
    for name in ("curve.csv", "checkpoint.json", "config.resolved.toml", "summary.json",
                 "trajectories/nominal.csv"):
        assert (tmp_path / name).is_file(), name
    ck = json.loads((tmp_path / "checkpoint.json").read_text())
    assert ck["kind"] == "youla" and ck["n_params"] == res.experiment.policy.n_params
    assert len(ck["K"][0]) == 4
    exp, flat = load_checkpoint(tmp_path / "checkpoint.json", TINY)
    np.testing.assert_array_equal(flat, res.params)
    header = (tmp_path / "curve.csv").read_text().splitlines()[0]
    assert header == "epoch,mean_cost,min_cost,max_cost"
