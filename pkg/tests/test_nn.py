import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillgen import nn
from distillgen.errors import ConfigError, ContractError, NumericError
from distillgen.losses import LossSpec


def _params(arch, ws, bs, seed=0):
    return nn.Params(arch, seed, tuple(np.array(w, dtype=float) for w in ws),
                     tuple(np.array(b, dtype=float) for b in bs))


def _fd_grad(p, x, y, loss, h=1e-5):
    """Central finite differences of the mean batch loss over every parameter."""
    flat = p.flat()
    sizes = [(a.shape, a.size) for pair in zip(p.weights, p.biases) for a in pair]
    out = np.zeros_like(flat)

    def rebuild(v):
        arrays, i = [], 0
        for shape, n in sizes:
            arrays.append(v[i:i + n].reshape(shape))
            i += n
        return _params(p.arch, arrays[0::2], arrays[1::2])

    for i in range(len(flat)):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (nn.grad(rebuild(up), x, y, loss).loss - nn.grad(rebuild(dn), x, y, loss).loss) / (2 * h)
    return out


def test_init_deterministic_and_seed_dependent():
    arch = nn.Architecture(6, (64, 64, 32), 2)
    a, b, c = nn.init(arch, 3), nn.init(arch, 3), nn.init(arch, 4)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), c.flat())


def test_reacher_parameter_count():
    arch = nn.Architecture(6, (64, 64, 32), 2)
    # sum over layers of n_in * n_out + n_out
    assert arch.n_params == 6 * 64 + 64 + 64 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2 == 6754
    assert nn.init(arch, 0).flat().size == 6754


def test_init_statistics():
    p = nn.init(nn.Architecture(400, (300,), 1), 0)
    assert np.all(p.biases[0] == 0)
    assert abs(p.weights[0].var() - 1 / 400) < 1e-4


def test_zero_width_rejected():
    with pytest.raises(ConfigError):
        nn.Architecture(3, (0,), 1)


def test_forward_zero_and_identity():
    arch = nn.Architecture(3, (), 3)
    x = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(nn.forward(_params(arch, [np.zeros((3, 3))], [np.zeros(3)]), x), np.zeros(3))
    assert np.array_equal(nn.forward(_params(arch, [np.eye(3)], [np.zeros(3)]), x), x)


def test_forward_hand_computed():
    # one hidden unit: h = relu(2x - 0.5), out = 3h + 1; at x = 1: h = 1.5, out = 5.5
    arch = nn.Architecture(1, (1,), 1)
    p = _params(arch, [[[2.0]], [[3.0]]], [[-0.5], [1.0]])
    assert nn.forward(p, np.array([1.0]))[0] == pytest.approx(5.5, abs=1e-15)
    # negative pre-activation: h = 0, out = bias
    assert nn.forward(p, np.array([-1.0]))[0] == pytest.approx(1.0, abs=1e-15)


def test_forward_dimension_mismatch():
    with pytest.raises(ContractError):
        nn.forward(nn.init(nn.Architecture(3, (4,), 1), 0), np.zeros(2))


@pytest.mark.parametrize("kind", ["mse_vector", "prob_regression", "kl_entropy", "bc_log"])
def test_gradient_matches_finite_differences(kind, rng):
    arch = nn.Architecture(4, (5, 3), 3)
    p = nn.init(arch, 7)
    x = rng.standard_normal((6, 4))
    if kind == "mse_vector":
        y = rng.standard_normal((6, 3))
    elif kind == "bc_log":
        y = rng.integers(0, 3, 6)
    else:
        y = rng.dirichlet(np.ones(3), 6)
    spec = LossSpec(kind, 0.3 if kind == "kl_entropy" else 0.0)
    g = nn.grad(p, x, y, spec)
    fd = _fd_grad(p, x, y, spec)
    assert np.max(np.abs(g.flat() - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_gradient_zero_at_minimum(rng):
    p = nn.init(nn.Architecture(3, (4,), 2), 0)
    x = rng.standard_normal((5, 3))
    g = nn.grad(p, x, nn.forward(p, x), LossSpec("mse_vector"))
    assert np.linalg.norm(g.flat()) == 0.0


def test_duplicated_batch_same_gradient(rng):
    p = nn.init(nn.Architecture(3, (4,), 2), 0)
    x, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    g1 = nn.grad(p, x, y, LossSpec("mse_vector")).flat()
    g2 = nn.grad(p, np.vstack([x, x]), np.vstack([y, y]), LossSpec("mse_vector")).flat()
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_nan_input_reports_sample():
    p = nn.init(nn.Architecture(2, (3,), 1), 0)
    x = np.array([[0.0, 1.0], [np.nan, 0.0]])
    with pytest.raises(NumericError, match="sample 1"):
        nn.grad(p, x, np.zeros((2, 1)), LossSpec("mse_vector"))


def test_sgd_step():
    arch = nn.Architecture(1, (), 1)
    p = _params(arch, [[[1.0]]], [[0.0]])
    g = nn.GradientBundle((np.array([[2.0]]),), (np.array([0.0]),), 0.0)
    new, _ = nn.step(p, g, "sgd", lr=0.1)
    assert new.weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)
    zero = nn.GradientBundle((np.zeros((1, 1)),), (np.zeros(1),), 0.0)
    assert np.array_equal(nn.step(p, zero, "sgd", lr=0.1)[0].flat(), p.flat())


def test_adam_first_step_moves_by_lr():
    arch = nn.Architecture(3, (), 2)
    p = nn.init(arch, 1)
    g = nn.GradientBundle((np.full((3, 2), 0.7),), (np.array([-3.0, 1e-3]),), 0.0)
    new, state = nn.step(p, g, "adam", lr=0.01)
    assert np.allclose(np.abs(new.flat() - p.flat()), 0.01, rtol=1e-4)
    assert state["t"] == 1


def test_adam_inplace_matches_functional(rng):
    params = [rng.standard_normal((4, 3)), rng.standard_normal(3)]
    ref = [a.copy() for a in params]
    state_a = state_b = None
    for _ in range(5):
        grads = [rng.standard_normal((4, 3)), rng.standard_normal(3)]
        ref, state_a = nn.adam_update(ref, grads, state_a, 1e-2)
        state_b = nn.adam_update_inplace(params, [g.copy() for g in grads], state_b, 1e-2)
    for a, b in zip(ref, params):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_step_shape_mismatch():
    p = nn.init(nn.Architecture(2, (), 1), 0)
    g = nn.GradientBundle((np.zeros((3, 1)),), (np.zeros(1),), 0.0)
    with pytest.raises(ContractError):
        nn.step(p, g, "sgd", 0.1)


def test_per_layer_grads_linear_net():
    arch = nn.Architecture(3, (), 1)
    p = _params(arch, [[[0.2], [-1.0], [0.5]]], [[0.1]])
    x = np.array([1.0, 2.0, -3.0])
    (layer,) = nn.per_layer_grads(p, x)
    assert np.array_equal(layer[:3], x)
    assert layer[3] == 1.0


def test_per_layer_grads_finite_differences(rng):
    p = nn.init(nn.Architecture(3, (4, 4), 1), 5)
    x = rng.standard_normal(3)
    full = np.concatenate(nn.per_layer_grads(p, x))
    flat, h = p.flat(), 1e-5
    shapes = [a.shape for pair in zip(p.weights, p.biases) for a in pair]
    fd = np.zeros_like(flat)
    for i in range(len(flat)):
        vals = []
        for sgn in (1, -1):
            v = flat.copy()
            v[i] += sgn * h
            arrays, j = [], 0
            for s in shapes:
                n = int(np.prod(s))
                arrays.append(v[j:j + n].reshape(s))
                j += n
            vals.append(nn.forward(_params(p.arch, arrays[0::2], arrays[1::2]), x)[0])
        fd[i] = (vals[0] - vals[1]) / (2 * h)
    assert np.max(np.abs(full - fd)) < 1e-4


def test_per_layer_grads_needs_scalar_output():
    with pytest.raises(ContractError):
        nn.per_layer_grads(nn.init(nn.Architecture(2, (3,), 2), 0), np.zeros(2))


def test_per_layer_grads_zero_input_bias_free():
    arch = nn.Architecture(2, (3,), 1)
    p0 = nn.init(arch, 0)
    p = _params(arch, p0.weights, [np.zeros(3), np.zeros(1)])
    grads = nn.per_layer_grads(p, np.zeros(2))
    # weight gradients vanish; relu'(0) = 0 also kills the first-layer bias gradient
    assert np.all(grads[0] == 0)
    assert np.all(grads[1][:3] == 0)


def test_params_json_roundtrip():
    p = nn.init(nn.Architecture(3, (4,), 2), 11)
    q = nn.Params.from_json(p.to_json())
    assert q.seed == 11 and q.arch == p.arch
    assert np.array_equal(p.flat(), q.flat())
    obj = json.loads(p.to_json())
    assert set(obj) == {"arch", "seed", "layers"}


def test_stack_matches_members(rng):
    arch = nn.Architecture(3, (5,), 2)
    stack = nn.ParamStack.init(arch, [1, 2, 3])
    x = rng.standard_normal((4, 3))
    out = stack.forward(x)
    for i, m in enumerate(stack.members()):
        assert np.allclose(out[i], nn.forward(m, x), rtol=0, atol=1e-14)
    assert stack.subset(2).seeds == (1, 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), x=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_ntk_diagonal_nonnegative(seed, x):
    p = nn.init(nn.Architecture(3, (6, 4), 1), seed)
    assert sum(float(g @ g) for g in nn.per_layer_grads(p, np.array(x))) >= 0.0
