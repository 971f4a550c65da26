from __future__ import annotations

import numpy as np
import pytest

from mepognn import autodiff as ad
from mepognn.autodiff import ContractError, NumericDomainError
from mepognn.model import MepoGNN, coupling_scale
from mepognn.network import NetworkConfig, STNetwork, diffusion_gcn, gated_dense, gated_tcn


def test_gated_tcn_zero_input_and_saturation(rng):
    c = 3
    Z = np.zeros((1, 2, 5, c))
    t = rng.normal(size=(2, c, c))
    out = gated_tcn(Z, t, np.zeros(c), t, np.zeros(c))
    assert out.shape == (1, 2, 4, c) and not out.value.any()
    Z = rng.normal(size=(1, 2, 5, c))
    out = gated_tcn(Z, t, np.ones(c), t, np.full(c, 1e3)).value
    ref = np.tanh(ad.conv1d(Z, t).value + 1.0)
    np.testing.assert_allclose(out, ref, atol=1e-12)
    with pytest.raises(ContractError):
        gated_tcn(np.zeros((1, 1, 2, c)), t, np.zeros(c), t, np.zeros(c), dilation=2)


def test_diffusion_k0_and_identity(rng):
    Q = rng.normal(size=(1, 3, 4, 2))
    W1, W2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    I3 = np.eye(3)
    out = diffusion_gcn(Q, I3, I3, [W1], [W2]).value
    np.testing.assert_allclose(out, Q @ (W1 + W2), atol=1e-12)
    out = diffusion_gcn(Q, I3, I3, [np.eye(2)], [np.eye(2)]).value
    np.testing.assert_allclose(out, 2 * Q)


def test_gated_dense_examples(rng):
    D = rng.normal(size=(1, 2, 4, 3))
    z, d = gated_dense(np.zeros((1, 2, 4, 3)), None, D)
    np.testing.assert_allclose(z.value, D / 2)
    zt = np.full((1, 2, 3, 3), 50.0)
    z, d2 = gated_dense(zt, d, rng.normal(size=(1, 2, 3, 3)))
    np.testing.assert_allclose(z.value, zt, rtol=1e-12)
    assert d2.shape == (1, 2, 3, 3)


def test_network_config_validation():
    NetworkConfig()
    assert NetworkConfig().receptive_field() == 8
    with pytest.raises(ContractError, match="receptive field"):
        NetworkConfig(t_in=7)
    with pytest.raises(ContractError):
        NetworkConfig(n_layers=2)


def test_network_shapes_and_ranges(rng):
    cfg = NetworkConfig(channels=8, skip_channels=8, t_in=14, t_out=6)
    net = STNetwork(cfg, seed=3)
    X = rng.normal(size=(4, 5, 14, 4))
    A = rng.uniform(0, 1, (5, 5))
    beta, gamma = net.forward(X, A)
    assert beta.shape == gamma.shape == (4, 5, 6)
    assert np.all(beta.value >= 0) and np.all((gamma.value > 0) & (gamma.value < 1))
    with pytest.raises(ContractError):
        net.forward(rng.normal(size=(4, 5, 13, 4)), A)
    X[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericDomainError, match="layer 0"):
        net.forward(X, A)


def test_network_seeded(rng):
    cfg = NetworkConfig(channels=4, skip_channels=4)
    a, b = STNetwork(cfg, seed=1), STNetwork(cfg, seed=1)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].value, b.params[k].value)


def _toy(mode, rng, N=3, t_in=8, t_out=5):
    cfg = NetworkConfig(n_layers=2, channels=4, dilations=(1, 2), skip_channels=6, t_in=t_in, t_out=t_out)
    P = np.array([1e5, 2e5, 5e4])[:N]
    if mode == "adaptive":
        m = MepoGNN(cfg, P, "adaptive", init_graph=rng.uniform(100, 1000, (N, N)), seed=1)
    else:
        m = MepoGNN(cfg, P, "dynamic", seed=1, rate_scale=1.0)
        m.graph.L.value[...] = rng.normal(size=(t_out, t_in))
    B = 2
    I0 = rng.uniform(50, 200, (B, N))
    R0 = rng.uniform(0, 100, (B, N))
    batch = dict(X=rng.normal(size=(B, N, t_in, 4)), S0=P - I0 - R0, I0=I0, R0=R0,
                 O=rng.uniform(100, 1000, (B, t_in, N, N)))
    return m, batch


@pytest.mark.parametrize("mode", ["adaptive", "dynamic"])
def test_model_gradients(mode, rng):
    m, b = _toy(mode, rng)
    w = rng.normal(size=(2, 3, 5))

    def loss():
        f = m.forward(b["X"], b["S0"], b["I0"], b["R0"], b["O"])
        return ad.mean(f.y * w)

    rep = ad.grad_check(loss, m.parameters())
    assert rep.max_error < 1e-4, rep.summary()


def test_model_output_contract(rng):
    m, b = _toy("dynamic", rng)
    f = m.forward(b["X"], b["S0"], b["I0"], b["R0"], b["O"])
    assert f.y.shape == (2, 3, 5) and f.H.shape == (2, 5, 3, 3)
    assert np.all(f.y.value >= 0)
    with pytest.raises(ContractError):
        m.forward(b["X"], b["S0"], b["I0"], b["R0"], None)
    with pytest.raises(ContractError):
        MepoGNN(NetworkConfig(), np.ones(2), "adaptive")


def test_coupling_scale_hand_value():
    H = np.array([[50.0, 20.0], [30.0, 40.0]])
    P = np.array([1000.0, 1000.0])
    # region 0: (50 + 30)/1000 + (50 + 20)/1000; region 1: (20 + 40)/1000 + (30 + 40)/1000
    assert coupling_scale(H, P) == pytest.approx((0.15 + 0.13) / 2)
