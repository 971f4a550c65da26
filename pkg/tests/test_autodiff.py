from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mepognn import autodiff as ad
from mepognn.autodiff import ContractError, NonDeterministicForward, NumericDomainError, Parameter, Tape
from mepognn.network import diffusion_gcn, gated_tcn

finite = st.floats(-50, 50, allow_nan=False)


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax_rows(np.zeros((2, 2))).value, 0.5)
    np.testing.assert_allclose(ad.softmax_rows(np.array([[0.0, np.log(3.0)]])).value, [[0.25, 0.75]], atol=1e-15)


@given(st.floats(-1e300, 1e300))
def test_softmax_shift_invariance(c):
    np.testing.assert_allclose(ad.softmax_rows(np.array([[c, c]])).value, [[0.5, 0.5]])


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(m):
    s = ad.softmax_rows(m).value
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericDomainError):
        ad.softmax_rows(np.array([[0.0, np.nan]]))
    with pytest.raises(ContractError):
        ad.softmax_rows(np.zeros(3))


def test_backward_identity_and_square():
    p = Parameter(np.array(3.0), name="p")
    with Tape() as tape:
        loss = p * 1.0
    tape.backward(loss, [p])
    assert p.grad == 1.0
    with Tape() as tape:
        loss = p * p
    tape.backward(loss, [p])
    assert p.grad == 6.0


def test_backward_requires_scalar():
    p = Parameter(np.ones(3))
    with Tape() as tape:
        y = p * 2.0
    with pytest.raises(ContractError):
        tape.backward(y, [p])


def test_grads_accumulate_through_reuse():
    p = Parameter(np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = ad.tsum(p * p + p)
    tape.backward(loss, [p])
    np.testing.assert_allclose(p.grad, [3.0, 5.0])


def test_grad_check_linear_map_exact(rng):
    w = Parameter(rng.normal(size=4), name="w")
    x = rng.normal(size=4)
    rep = ad.grad_check(lambda: ad.tsum(w * x), [w])
    assert rep.max_error < 1e-10


def test_grad_check_refuses_random_forward(rng):
    w = Parameter(np.ones(2))
    with pytest.raises(NonDeterministicForward):
        ad.grad_check(lambda: ad.tsum(w * rng.normal(size=2)), [w])


def test_grad_check_gated_tcn(rng):
    c = 3
    params = [Parameter(rng.normal(scale=0.5, size=s), name=n) for n, s in
              [("t1", (2, c, c)), ("b1", (c,)), ("t2", (2, c, c)), ("b2", (c,))]]
    Z = rng.normal(size=(2, 2, 6, c))
    rep = ad.grad_check(lambda: ad.tsum(ad.tanh(gated_tcn(Z, *params, dilation=2))), params)
    assert rep.ok, rep.summary()
    assert rep.max_error < 1e-4


def test_grad_check_diffusion_gcn(rng):
    c = 3
    A = rng.uniform(0, 1, size=(4, 4))
    Pf = A / A.sum(1, keepdims=True)
    Pb = A.T / A.T.sum(1, keepdims=True)
    Wf = [Parameter(rng.normal(size=(c, c)), name=f"f{k}") for k in range(3)]
    Wb = [Parameter(rng.normal(size=(c, c)), name=f"b{k}") for k in range(3)]
    Q = rng.normal(size=(2, 4, 5, c))
    rep = ad.grad_check(lambda: ad.tsum(ad.tanh(diffusion_gcn(Q, Pf, Pb, Wf, Wb))), Wf + Wb)
    assert rep.max_error < 1e-4, rep.summary()


OPS = {
    "sigmoid": lambda p, x: ad.sigmoid(p * x),
    "softplus": lambda p, x: ad.softplus(p * x),
    "exp": lambda p, x: ad.exp(p * 0.3),
    "tanh": lambda p, x: ad.tanh(p - x),
    "div": lambda p, x: x / (ad.exp(p) + 1.0),
    "softmax": lambda p, x: ad.softmax(p, axis=0) * x,
    "matmul": lambda p, x: ad.matmul(ad.reshape(p, (2, 3)), ad.reshape(x, (3, 2))),
    "einsum": lambda p, x: ad.einsum("ij,jk->ik", ad.reshape(p, (2, 3)), ad.reshape(x, (3, 2))),
    "concat": lambda p, x: ad.concat([p, p * x], axis=0) * 1.5,
    "stack": lambda p, x: ad.stack([p, x], axis=1) * ad.stack([x, p], axis=1),
    "getitem": lambda p, x: p[np.array([0, 0, 3, 5])] * 2.0,
    "transpose": lambda p, x: ad.transpose(ad.reshape(p, (2, 3))) * ad.reshape(x, (3, 2)),
    "mean": lambda p, x: ad.mean(ad.reshape(p * x, (2, 3)), axis=1),
    "broadcast": lambda p, x: ad.reshape(p, (2, 3)) * ad.reshape(ad.tsum(ad.reshape(p, (2, 3)), axis=0), (1, 3)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    p = Parameter(rng.normal(size=6), name=name)
    x = rng.normal(size=6)
    rep = ad.grad_check(lambda: ad.tsum(ad.tanh(OPS[name](p, x))), [p])
    assert rep.max_error < 1e-6, rep.summary()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(2, 3), st.integers(0, 10_000))
def test_conv1d_matches_direct_sum(dilation, k, seed):
    rng = np.random.default_rng(seed)
    T = (k - 1) * dilation + 3
    x = rng.normal(size=(2, T, 3))
    w = rng.normal(size=(k, 3, 4))
    out = ad.conv1d(x, w, dilation).value
    assert out.shape == (2, T - (k - 1) * dilation, 4)
    for t in range(out.shape[1]):
        ref = sum(x[:, t + j * dilation] @ w[j] for j in range(k))
        np.testing.assert_allclose(out[:, t], ref, atol=1e-12)


def test_minimum_and_relu_gradient_routing():
    a = Parameter(np.array([1.0, 5.0, -2.0]))
    with Tape() as tape:
        loss = ad.tsum(ad.minimum(a, np.array([3.0, 3.0, 3.0])) + ad.relu(a))
    tape.backward(loss, [a])
    np.testing.assert_allclose(a.grad, [2.0, 1.0, 1.0])


def test_no_tape_no_graph():
    p = Parameter(np.ones(2))
    y = p * 2.0
    assert y.parents == () or not y.requires_grad
