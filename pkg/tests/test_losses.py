import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distillgen.errors import ContractError
from distillgen.losses import LossSpec, loss_and_grad, loss_bc, loss_kl, loss_mse, loss_prob, softmax


def test_mse_examples():
    assert loss_mse([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert loss_mse([[0.0, 0.0]], [[3.0, 4.0]]) == 25.0
    r = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert loss_mse(3 * r, np.zeros_like(r)) == pytest.approx(9 * loss_mse(r, np.zeros_like(r)))
    with pytest.raises(ContractError):
        loss_mse(np.zeros((0, 2)), np.zeros((0, 2)))


def test_prob_examples():
    assert loss_prob([[0.2, 0.3, 0.5]], [[0.2, 0.3, 0.5]]) == 0.0
    assert loss_prob([[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]) == 2.0
    with pytest.raises(ContractError):
        loss_prob([[1.0, 0.0, 0.0]], [[0.5, 0.6, 0.0]])


def test_kl_examples():
    assert loss_kl([[0.3, 0.7]], [[0.3, 0.7]]) == pytest.approx(0.0, abs=1e-15)
    expected = 0.5 * np.log(2) + 0.5 * np.log(2 / 3)
    assert loss_kl([[0.5, 0.5]], [[0.25, 0.75]]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.14384, abs=1e-5)
    u = np.full((1, 3), 1 / 3)
    assert loss_kl(u, u, lam=0.7) == pytest.approx(0.7 * np.log(3), abs=1e-12)


def test_bc_examples():
    assert loss_bc([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], [0, 2]) == 0.0
    assert loss_bc([[0.5, 0.5, 0.0]], [0]) == pytest.approx(np.log(2), abs=1e-12)
    assert np.log(2) == pytest.approx(0.69315, abs=1e-5)
    # summed, not averaged, over the batch
    assert loss_bc([[0.5, 0.5, 0.0]] * 3, [1, 1, 1]) == pytest.approx(3 * np.log(2))
    assert loss_bc([[0.4, 0.6, 0.0]], [0]) > loss_bc([[0.5, 0.5, 0.0]], [0])
    assert loss_bc([[0.0, 1.0, 0.0]], [0]) == pytest.approx(-np.log(1e-8))
    with pytest.raises(ContractError):
        loss_bc([[0.5, 0.5, 0.0]], [3])


def test_loss_spec_validation():
    with pytest.raises(ContractError):
        LossSpec("hinge")
    with pytest.raises(ContractError):
        LossSpec("mse_vector", entropy_weight=0.1)
    with pytest.raises(ContractError):
        LossSpec("kl_entropy", entropy_weight=-1.0)
    assert LossSpec("bc_log").target_kind == "index"
    assert LossSpec("kl_entropy").target_kind == "prob"
    assert LossSpec("mse_scalar").target_kind == "vector"


def test_loss_and_grad_matches_public_losses(rng):
    raw = rng.normal(size=(5, 3))
    q = softmax(rng.normal(size=(5, 3)))
    idx = rng.integers(0, 3, 5)
    p = softmax(raw)
    assert loss_and_grad(LossSpec("mse_vector"), raw, q)[0] == pytest.approx(loss_mse(raw, q))
    assert loss_and_grad(LossSpec("prob_regression"), raw, q)[0] == pytest.approx(loss_prob(p, q))
    assert loss_and_grad(LossSpec("kl_entropy", 0.3), raw, q)[0] == pytest.approx(loss_kl(p, q, 0.3))
    assert loss_and_grad(LossSpec("bc_log"), raw, idx)[0] == pytest.approx(loss_bc(p, idx))


def test_stacked_losses_match_members(rng):
    raw = rng.normal(size=(4, 6, 3))
    q = softmax(rng.normal(size=(6, 3)))
    spec = LossSpec("kl_entropy", 0.1)
    loss, grad = loss_and_grad(spec, raw, q)
    for m in range(4):
        lm, gm = loss_and_grad(spec, raw[m], q)
        assert loss[m] == pytest.approx(lm)
        assert np.allclose(grad[m], gm)


prob_rows = arrays(np.float64, (4, 3), elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum(axis=1, keepdims=True))


@settings(max_examples=60, deadline=None)
@given(p=prob_rows, q=prob_rows)
def test_losses_nonnegative_and_bounded(p, q):
    assert loss_mse(p, q) >= 0
    assert 0 <= loss_prob(p, q) <= 2 + 1e-12
    assert loss_kl(p, q) >= -1e-12
    assert loss_bc(p, np.argmax(q, axis=1)) >= 0


@settings(max_examples=40, deadline=None)
@given(p=prob_rows)
def test_losses_zero_at_match(p):
    assert loss_prob(p, p) == 0.0
    assert loss_kl(p, p) == pytest.approx(0.0, abs=1e-12)
