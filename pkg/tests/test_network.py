"""Network construction, hard constraint, directional operators, checkpoints."""

import math
import os

import numpy as np
import pytest

from pidesol.autodiff import JetArray
from pidesol.layout import param_blocks
from pidesol.network import (
    DgmConfig,
    DgmNetwork,
    FuncField,
    HardConstraint,
    HpinnField,
    dgm_forward,
    hjb_local_operator_batch,
    hpinn_eval,
    init_params,
    load_checkpoint,
    local_operator,
    local_operator_batch,
    param_count,
    save_checkpoint,
)


def quad_constraint(T):
    return HardConstraint(A=lambda t, x: (x * x).sum(axis=-1),
                          B=lambda t, x: (T - t) * (1.0 / T))


def test_param_count_frozen_example():
    assert param_count(DgmConfig(d=100, L=3, n_hid=50)) == 96351


def test_config_validation():
    with pytest.raises(ValueError):
        DgmConfig(d=0, L=1, n_hid=4)
    with pytest.raises(ValueError):
        DgmConfig(d=2, L=1, n_hid=4, activation="relu")


def test_zero_params_zero_output():
    cfg = DgmConfig(d=3, L=2, n_hid=6)
    net = DgmNetwork(cfg, np.zeros(param_count(cfg)))
    assert dgm_forward(net, (0.3, np.array([0.1, -0.2, 0.5]))) == 0.0


def test_theta_length_checked():
    cfg = DgmConfig(d=3, L=2, n_hid=6)
    with pytest.raises(ValueError, match="theta length"):
        DgmNetwork(cfg, np.zeros(7))


def test_init_deterministic_and_bounded():
    cfg = DgmConfig(d=4, L=2, n_hid=10)
    a = init_params(cfg, 123)
    b = init_params(cfg, 123)
    c = init_params(cfg, 124)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # every weight obeys its own Glorot bound; biases are exactly zero
    for name, shape, start, stop in param_blocks(cfg.d, cfg.L, cfg.n_hid):
        block = a[start:stop]
        if name.startswith("b"):
            assert np.all(block == 0.0)
        else:
            fan_in = shape[1] if len(shape) == 2 else shape[0]
            fan_out = shape[0] if len(shape) == 2 else 1
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(block) <= bound)


def test_terminal_condition_exact():
    cfg = DgmConfig(d=5, L=2, n_hid=8)
    net = DgmNetwork(cfg, init_params(cfg, 0) + 0.3)
    hc = quad_constraint(T=0.7)
    x = np.array([0.4, -1.0, 0.2, 0.9, -0.3])
    assert hpinn_eval(net, hc, (0.7, x)) == (x * x).sum()
    # strictly inside the horizon the network contributes
    inner = hpinn_eval(net, hc, (0.3, x))
    assert inner != (x * x).sum()


def test_hpinn_affine_in_net_value():
    cfg = DgmConfig(d=2, L=1, n_hid=4)
    theta = init_params(cfg, 7) + 0.2
    hc = quad_constraint(T=1.0)
    field = HpinnField(cfg, theta, hc)
    t = np.array([0.25])
    x = np.array([[0.3, -0.8]])
    raw = dgm_forward(DgmNetwork(cfg, theta), (0.25, x[0]))
    expect = (x * x).sum() + (1.0 - 0.25) * raw
    np.testing.assert_allclose(field.values(t, x)[0], expect, rtol=1e-14)


def test_constraint_example_value():
    # A=1 everywhere with B=(T-t)/T and a zeroed net gives exactly 1
    cfg = DgmConfig(d=3, L=1, n_hid=2)
    net = DgmNetwork(cfg, np.zeros(param_count(cfg)))
    hc = HardConstraint(A=lambda t, x: np.ones(np.shape(t)),
                        B=lambda t, x: (2.0 - t) / 2.0)
    assert hpinn_eval(net, hc, (1.0, np.zeros(3))) == 1.0


def _field(cfg_seed=11, d=3, L=1, n_hid=6, T=1.0):
    cfg = DgmConfig(d=d, L=L, n_hid=n_hid)
    theta = init_params(cfg, cfg_seed) + 0.1
    return HpinnField(cfg, theta, quad_constraint(T))


def test_local_operator_linear_field_in_t():
    # u = t: dt_u = 1, gradient and Hessian vanish
    field = FuncField(lambda t, x: t + 0.0 * x[:, 0])
    t = np.linspace(0.1, 0.9, 7)
    x = np.random.default_rng(0).uniform(-1, 1, (7, 3))
    drift = np.random.default_rng(1).uniform(-1, 1, (7, 3))
    sigma = np.random.default_rng(2).uniform(0.2, 1.0, (7, 3, 2))
    _, op = local_operator_batch(field, t, x, drift, sigma)
    np.testing.assert_allclose(op, np.ones(7), rtol=1e-9, atol=1e-9)


def test_local_operator_linear_field_in_x():
    # u = x_j: operator reduces to the drift component b_j
    j = 1
    field = FuncField(lambda t, x: x[:, j] + 0.0 * t)
    t = np.full(5, 0.4)
    x = np.random.default_rng(3).uniform(-1, 1, (5, 3))
    drift = np.random.default_rng(4).uniform(-2, 2, (5, 3))
    sigma = np.random.default_rng(5).uniform(0.2, 1.0, (5, 3, 3))
    _, op = local_operator_batch(field, t, x, drift, sigma)
    np.testing.assert_allclose(op, drift[:, j], rtol=1e-8, atol=1e-9)


def test_local_operator_quadratic_field():
    # u = x_j^2: operator is 2 b_j x_j + (sigma sigma^T)_jj
    j = 2
    field = FuncField(lambda t, x: x[:, j] ** 2 + 0.0 * t)
    t = np.full(6, 0.2)
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (6, 4))
    drift = rng.uniform(-2, 2, (6, 4))
    sigma = rng.uniform(-1.0, 1.0, (6, 4, 3))
    ssT = np.einsum("mdq,meq->mde", sigma, sigma)
    _, op = local_operator_batch(field, t, x, drift, sigma)
    np.testing.assert_allclose(op, 2 * drift[:, j] * x[:, j] + ssT[:, j, j],
                               rtol=1e-8, atol=1e-9)


def test_local_operator_batch_returns_values():
    field = _field()
    t = np.array([0.1, 0.5])
    x = np.array([[0.2, 0.1, -0.4], [0.0, 0.3, 0.9]])
    drift = np.zeros((2, 3))
    sigma = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
    val, _ = local_operator_batch(field, t, x, drift, sigma)
    np.testing.assert_allclose(val, field.values(t, x), rtol=1e-14)


def test_local_operator_single_point_wrapper():
    field = _field(d=2, cfg_seed=5)
    net = field.network()
    point = (0.3, np.array([0.5, -0.2]))
    b = lambda t, x: np.array([0.1, -0.7])
    sg = lambda t, x: 0.6 * np.eye(2)
    got = local_operator(net, field.hc, point, b, sg)
    t = np.array([0.3])
    x = np.array([[0.5, -0.2]])
    _, op = local_operator_batch(field, t, x, np.array([[0.1, -0.7]]),
                                 (0.6 * np.eye(2))[None])
    np.testing.assert_allclose(got, op[0], rtol=1e-13)


def test_hjb_operator_on_linear_time_field():
    # u = t: dt_u = 1 regardless of eta
    field = FuncField(lambda t, x: t + 0.0 * x[:, 0])
    t = np.linspace(0.1, 0.9, 5)
    x = np.random.default_rng(8).uniform(-1, 1, (5, 3))
    _, op = hjb_local_operator_batch(field, t, x, eta=0.8)
    np.testing.assert_allclose(op, np.ones(5), rtol=1e-9, atol=1e-9)


def test_hjb_operator_on_affine_field():
    # u = c . x has zero Laplacian, so the operator is -eta |c|^2
    c = np.array([0.4, -0.9, 0.3])
    field = FuncField(lambda t, x: (x * c).sum(axis=-1) + 0.0 * t)
    t = np.full(4, 0.5)
    x = np.random.default_rng(9).uniform(-1, 1, (4, 3))
    eta = 1.3
    _, op = hjb_local_operator_batch(field, t, x, eta)
    np.testing.assert_allclose(op, -eta * (c * c).sum() * np.ones(4),
                               rtol=1e-8, atol=1e-9)


def test_hjb_operator_quadratic_at_origin():
    # u = x_j^2 at x = 0: Laplacian 2, gradient 0
    field = FuncField(lambda t, x: x[:, 0] ** 2 + 0.0 * t)
    t = np.array([0.2])
    x = np.zeros((1, 3))
    _, op = hjb_local_operator_batch(field, t, x, eta=0.5)
    np.testing.assert_allclose(op, [2.0], rtol=1e-8, atol=1e-9)


def test_hjb_log_transform_identity():
    # compare against the direct evaluation dt_u + Lap u - eta |grad u|^2
    # computed with the plain directional operator plus an exact gradient
    field = _field(d=3, cfg_seed=21, T=1.0)
    rng = np.random.default_rng(10)
    t = rng.uniform(0.0, 0.9, 6)
    x = rng.uniform(-1, 1, (6, 3))
    eta = 0.7

    drift = np.zeros((6, 3))
    sigma = np.broadcast_to(np.sqrt(2.0) * np.eye(3), (6, 3, 3)).copy()
    _, lap_part = local_operator_batch(field, t, x, drift, sigma)

    grad_sq = np.zeros(6)
    for j in range(3):
        x1 = np.zeros((6, 3))
        x1[:, j] = 1.0
        _, d1, _ = field.jet_values((t, np.zeros(6), np.zeros(6)),
                                    (x, x1, np.zeros((6, 3))))
        grad_sq += d1 * d1

    _, op = hjb_local_operator_batch(field, t, x, eta)
    np.testing.assert_allclose(op, lap_part - eta * grad_sq, rtol=1e-6, atol=1e-8)


def test_hjb_operator_overflow_guard():
    field = FuncField(lambda t, x: 1e4 + 0.0 * t)
    with pytest.raises(Exception, match="overflow|rescale"):
        hjb_local_operator_batch(field, np.array([0.1]), np.zeros((1, 2)), eta=1.0)


def test_funcfield_jet_values_match_jetarray():
    fn = lambda t, x: (x * x).sum(axis=-1) * t
    field = FuncField(fn)
    t0 = np.array([0.3, 0.6])
    x0 = np.array([[0.2, -0.5], [1.0, 0.4]])
    t1, t2 = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    x1 = np.array([[0.5, 0.1], [-0.2, 0.3]])
    x2 = np.zeros((2, 2))
    v0, v1, v2 = field.jet_values((t0, t1, t2), (x0, x1, x2))
    ref = fn(JetArray(t0, t1, t2), JetArray(x0, x1, x2))
    np.testing.assert_allclose(v0, ref.val, rtol=1e-14)
    np.testing.assert_allclose(v1, ref.d1, rtol=1e-14)
    np.testing.assert_allclose(v2, ref.d2, rtol=1e-14)


def test_checkpoint_roundtrip(tmp_path):
    cfg = DgmConfig(d=4, L=2, n_hid=7)
    net = DgmNetwork(cfg, init_params(cfg, 42) * 1.7 + 1e-9)
    path = os.path.join(tmp_path, "ck.bin")
    save_checkpoint(path, net)
    back = load_checkpoint(path)
    assert back.config == cfg
    np.testing.assert_array_equal(back.theta, net.theta)


def test_checkpoint_rejects_bad_payload(tmp_path):
    cfg = DgmConfig(d=2, L=1, n_hid=3)
    net = DgmNetwork(cfg, init_params(cfg, 0))
    path = os.path.join(tmp_path, "ck.bin")
    save_checkpoint(path, net)
    with open(path, "rb") as fh:
        data = fh.read()
    with open(path, "wb") as fh:
        fh.write(data[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_checkpoint(path)


def test_checkpoint_rejects_unknown_layout(tmp_path):
    path = os.path.join(tmp_path, "ck.bin")
    with open(path, "wb") as fh:
        fh.write(b'{"d": 2, "L": 1, "n_hid": 3, "layout_version": 99}\n')
    with pytest.raises(ValueError, match="layout_version"):
        load_checkpoint(path)
