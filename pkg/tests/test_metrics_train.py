from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mepognn import autodiff as ad
from mepognn.autodiff import ContractError
from mepognn.metrics import horizon_report, mean_ci, metrics, spearman
from mepognn.model import MepoGNN
from mepognn.network import NetworkConfig
from mepognn.pipeline import fit, load_model, save_model
from mepognn.synth import ScenarioConfig, synth_scenario
from mepognn.train import AdamW, Prediction, TrainConfig, _forward, curriculum_horizon, mae_loss, predict, train


def test_metric_example():
    r = metrics([2, 2, 2], [1, 2, 3])
    assert round(r.MAE, 4) == 0.6667
    assert round(r.RMSE, 4) == 0.8165
    assert round(r.MAPE, 2) == 44.44
    assert round(r.RAE, 4) == 1.0


def test_metric_degenerate_cases():
    r = metrics([1, 2, 3], [1, 2, 3])
    assert r.MAE == r.RMSE == r.MAPE == r.RAE == 0
    r = metrics([6, 6], [5, 5])
    assert r.RAE is None
    r = metrics([1, 0], [0, 0])
    assert r.MAPE is None and r.zero_targets == 2
    r = metrics([1, 3], [0, 2])
    assert r.MAPE == pytest.approx(50.0) and r.zero_targets == 1
    with pytest.raises(ContractError):
        metrics([1, 2], [1, 2, 3])


@given(arrays(np.float64, 12, elements=st.floats(0, 1e4)), arrays(np.float64, 12, elements=st.floats(1e-3, 1e4)))
def test_rmse_dominates_mae(a, b):
    r = metrics(a, b)
    assert r.RMSE >= r.MAE - 1e-9 >= -1e-9


def test_horizon_report_and_ci():
    y = np.arange(2 * 3 * 7, dtype=float).reshape(2, 3, 7)
    rep = horizon_report(y + 1, y)
    assert set(rep) == {"overall", "h3", "h7"}
    assert mean_ci([1.0]) == (1.0, None)
    m, ci = mean_ci([1.0, 2.0, 3.0])
    assert m == 2.0 and ci == pytest.approx(1.96 * 1.0 / math.sqrt(3))
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)


def test_curriculum_examples():
    assert curriculum_horizon(1, 14) == 1
    assert curriculum_horizon(5, 14) == 3
    assert curriculum_horizon(100, 14) == 14
    with pytest.raises(ContractError):
        curriculum_horizon(0, 14)


@given(st.integers(1, 500), st.integers(1, 30))
def test_curriculum_monotone_capped(epoch, t_out):
    h = curriculum_horizon(epoch, t_out)
    assert 1 <= h <= t_out and curriculum_horizon(epoch + 1, t_out) >= h


def test_r_hat_ratio():
    p = Prediction(np.zeros((1, 1, 1)), np.array([[[0.25]]]), np.array([[[0.125]]]))
    assert p.r_hat[0, 0, 0] == 2.0


def test_train_config_invariants():
    with pytest.raises(ContractError):
        TrainConfig(patience=300, max_epochs=300)
    with pytest.raises(ContractError):
        TrainConfig(lr=0.0)


def test_adamw_decoupled_decay():
    p = ad.Parameter(np.array([1.0]))
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad[...] = 0.0
    opt.step()
    assert p.value[0] == pytest.approx(1.0 - 0.1 * 0.5)


@pytest.fixture(scope="module")
def small():
    ds = synth_scenario(ScenarioConfig(n_regions=3, n_days=120), seed=1)
    net = NetworkConfig(n_layers=2, dilations=(1, 2), channels=8, skip_channels=8, t_in=8, t_out=5)
    return ds, net


def test_loss_equals_metric_mae(small):
    ds, net = small
    w = ds.windows(net.t_in, net.t_out)
    model = MepoGNN(net, ds.regions.population, "adaptive", init_graph=ds.flows_static, seed=0)
    idx = np.arange(6)
    f = _forward(model, w.train, idx)
    for h in (1, 3, 5):
        loss = mae_loss(f.y, w.train.Y[idx], h).item()
        assert loss == pytest.approx(metrics(f.y.value[:, :, :h], w.train.Y[idx][:, :, :h]).MAE, rel=1e-14)


def test_training_decreases_and_is_deterministic(small, tmp_path):
    ds, net = small
    cfg = TrainConfig(max_epochs=10, patience=9, seed=3)
    m1, w1, r1 = fit(ds, net, cfg, timing=False, log_path=tmp_path / "a.csv")
    m2, w2, r2 = fit(ds, net, cfg, timing=False, log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert all(np.isfinite(row["train_mae"]) for row in r1.log)
    # the horizon grows every two epochs; within each pair the loss must fall
    for a, b in zip(r1.log[::2], r1.log[1::2]):
        assert a["horizon"] == b["horizon"] and b["train_mae"] < a["train_mae"]


def test_training_improves_full_horizon_error(small):
    ds, net = small
    w = ds.windows(net.t_in, net.t_out)
    model = MepoGNN(net, ds.regions.population, "adaptive", init_graph=ds.flows_static, seed=3)
    before = np.abs(predict(model, w.train).y - w.train.Y).mean()
    train(model, w, TrainConfig(max_epochs=10, patience=9, seed=3), use_validation=False, timing=False)
    after = np.abs(predict(model, w.train).y - w.train.Y).mean()
    assert after < before


def test_early_stopping_contract(small):
    ds, net = small
    cfg = TrainConfig(max_epochs=60, patience=3, seed=0, lr=0.05)
    _, _, res = fit(ds, net, cfg, timing=False)
    assert res.stopped_epoch <= res.best_epoch + 3
    assert res.best_val == min(r["val_mae"] for r in res.log)


def test_checkpoint_round_trip(small, tmp_path):
    ds, net = small
    model, w, _ = fit(ds, net, TrainConfig(max_epochs=3, patience=2), timing=False)
    path = save_model(tmp_path / "m.ckpt", model, w.scaler, {"note": "x"})
    back, scaler, meta = load_model(path)
    assert meta["config"] == {"note": "x"}
    assert scaler == w.scaler
    np.testing.assert_array_equal(predict(back, w.test).y, predict(model, w.test).y)
    raw = path.read_bytes()
    assert raw[:8] == b"MEPOCKPT"


def test_dynamic_training_runs(small):
    ds, net = small
    model, w, res = fit(ds, net, TrainConfig(max_epochs=2, patience=1), mode="dynamic", timing=False)
    p = predict(model, w.val)
    assert np.all(p.y >= 0) and p.y.shape == w.val.Y.shape
