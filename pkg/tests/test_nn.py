import math

import numpy as np
import pytest

from precondlab.nn import (
    FrankeTask,
    Mlp,
    fd_hvp,
    franke,
    ggn_vector_product,
    hessian_vector_product,
    jvp,
    make_franke_dataset,
    mlp_loss_grad,
    predict,
    vjp,
)
from precondlab.rng import stream


def _franke_reference(x, y):
    # independent scalar transcription of the four-term surface
    t1 = 0.75 * math.exp(-(((9 * x - 2) ** 2) / 4 + ((9 * y - 2) ** 2) / 4))
    t2 = 0.75 * math.exp(-(((9 * x + 1) ** 2) / 49) - ((9 * y + 1) / 10))
    t3 = 0.5 * math.exp(-(((9 * x - 7) ** 2) / 4) - ((9 * y - 3) ** 2) / 4)
    t4 = -0.2 * math.exp(-((9 * x - 4) ** 2) - ((9 * y - 7) ** 2))
    return t1 + t2 + t3 + t4


def test_franke_matches_independent_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.random(2)
        assert franke(x, y) == pytest.approx(_franke_reference(x, y), rel=1e-14)


def test_franke_fourth_term_contribution():
    x, y = 4.0 / 9.0, 7.0 / 9.0
    first_three = (
        0.75 * math.exp(-(((9 * x - 2) ** 2) + ((9 * y - 2) ** 2)) / 4)
        + 0.75 * math.exp(-(((9 * x + 1) ** 2) / 49) - (9 * y + 1) / 10)
        + 0.5 * math.exp(-(((9 * x - 7) ** 2) + ((9 * y - 3) ** 2)) / 4)
    )
    assert franke(x, y) - first_three == pytest.approx(-0.2, abs=1e-15)


def test_franke_grid_lipschitz():
    # finite-difference Lipschitz estimate bounds sampled increments
    grid = np.linspace(0.0, 1.0, 41)
    xx, yy = np.meshgrid(grid, grid)
    vals = franke(xx, yy)
    h = grid[1] - grid[0]
    gx = np.abs(np.diff(vals, axis=1)) / h
    gy = np.abs(np.diff(vals, axis=0)) / h
    l_num = 1.5 * max(gx.max(), gy.max())
    rng = np.random.default_rng(1)
    for _ in range(200):
        p, q = rng.random(2), rng.random(2)
        assert abs(franke(*p) - franke(*q)) <= l_num * np.linalg.norm(p - q) + 1e-9


def test_dataset_noiseless_and_deterministic():
    ds = make_franke_dataset(64, 0.0, seed=3)
    assert np.array_equal(ds.targets, franke(ds.inputs[:, 0], ds.inputs[:, 1]))
    ds2 = make_franke_dataset(64, 0.0, seed=3)
    assert np.array_equal(ds.inputs, ds2.inputs)
    assert np.all((ds.inputs >= 0) & (ds.inputs <= 1))


def test_dataset_noise_variance_in_chi_square_band():
    ds = make_franke_dataset(256, 1e-4, seed=4)
    clean = franke(ds.inputs[:, 0], ds.inputs[:, 1])
    sample_var = np.var(ds.targets - clean, ddof=1)
    assert 0.5e-4 <= sample_var <= 1.5e-4


def test_pack_unpack_roundtrip_bitwise():
    net = Mlp((2, 5, 3, 1), activation="relu")
    theta = net.init_params(stream(0, "init"))
    assert np.array_equal(net.pack(net.unpack(theta)), theta)
    assert theta.shape == (net.n_params,)


def test_mlp_validation():
    with pytest.raises(ValueError):
        Mlp((2,), activation="relu")
    with pytest.raises(ValueError):
        Mlp((2, 3, 1), activation="sigmoid")


def test_zero_parameters_loss_and_bias_gradient():
    net = Mlp((2, 4, 1), activation="relu")
    theta = np.zeros(net.n_params)
    ds = make_franke_dataset(32, 0.0, seed=5)
    loss, grad = mlp_loss_grad(net, theta, ds)
    assert loss == pytest.approx(np.mean(ds.targets**2))
    # final bias is the last packed entry; prediction is identically 0
    assert grad[-1] == pytest.approx(-2.0 * np.mean(ds.targets))


def test_target_sign_flip_flips_bias_gradient():
    net = Mlp((2, 4, 1), activation="tanh")
    theta = net.init_params(stream(1, "init"))
    ds = make_franke_dataset(32, 0.0, seed=6)
    flipped = type(ds)(inputs=ds.inputs, targets=-ds.targets)
    g1 = mlp_loss_grad(net, np.zeros_like(theta), ds)[1]
    g2 = mlp_loss_grad(net, np.zeros_like(theta), flipped)[1]
    assert g1[-1] == pytest.approx(-g2[-1])


def _fd_gradient_coord(net, theta, ds, i, h):
    tp = theta.copy()
    tp[i] += h
    tm = theta.copy()
    tm[i] -= h
    return (mlp_loss_grad(net, tp, ds)[0] - mlp_loss_grad(net, tm, ds)[0]) / (2 * h)


def test_gradient_matches_finite_differences():
    ds = make_franke_dataset(24, 1e-4, seed=7)
    for activation in ("tanh", "relu"):
        net = Mlp((2, 6, 6, 1), activation=activation)
        rng = np.random.default_rng(8)
        for trial in range(5):
            point_rng = stream(trial, f"init-{activation}")
            # generic point: keep ReLU pre-activations off their kinks
            theta = net.init_params(point_rng) + 0.05 * point_rng.standard_normal(net.n_params)
            _, g = mlp_loss_grad(net, theta, ds)
            for i in rng.integers(0, net.n_params, size=20):
                fd = _fd_gradient_coord(net, theta, ds, int(i), 1e-6 * (1 + abs(theta[i])))
                denom = abs(fd) + abs(g[i]) + 1e-8
                assert abs(fd - g[i]) / denom <= 1e-5


def test_jvp_zero_direction():
    net = Mlp((2, 4, 1), activation="tanh")
    theta = net.init_params(stream(2, "init"))
    ds = make_franke_dataset(16, 0.0, seed=9)
    assert np.array_equal(jvp(net, theta, ds.inputs, np.zeros(net.n_params)), np.zeros(16))


def test_jvp_linear_model_independent_of_theta():
    net = Mlp((2, 1))  # no hidden layer: predictions linear in parameters
    ds = make_franke_dataset(16, 0.0, seed=10)
    v = stream(3, "v").standard_normal(net.n_params)
    out1 = jvp(net, np.zeros(net.n_params), ds.inputs, v)
    out2 = jvp(net, stream(4, "t").standard_normal(net.n_params), ds.inputs, v)
    assert np.allclose(out1, out2)


def test_jvp_matches_finite_differences():
    net = Mlp((2, 5, 1), activation="tanh")
    theta = net.init_params(stream(5, "init"))
    ds = make_franke_dataset(16, 0.0, seed=11)
    v = stream(6, "v").standard_normal(net.n_params)
    h = 1e-5 * (1 + np.linalg.norm(theta)) / np.linalg.norm(v)
    fd = (predict(net, theta + h * v, ds.inputs) - predict(net, theta - h * v, ds.inputs)) / (2 * h)
    out = jvp(net, theta, ds.inputs, v)
    assert np.linalg.norm(out - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


def test_adjoint_identity():
    net = Mlp((2, 7, 5, 1), activation="tanh")
    theta = net.init_params(stream(7, "init"))
    ds = make_franke_dataset(20, 0.0, seed=12)
    rng = np.random.default_rng(13)
    for _ in range(10):
        v = rng.standard_normal(net.n_params)
        u = rng.standard_normal(20)
        lhs = jvp(net, theta, ds.inputs, v) @ u
        rhs = v @ vjp(net, theta, ds.inputs, u)
        assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), 1.0)


def _dense_ggn(net, theta, ds):
    p = net.n_params
    jac = np.stack([jvp(net, theta, ds.inputs, col) for col in np.eye(p).T], axis=1)
    return (2.0 / len(ds.targets)) * jac.T @ jac


def test_ggn_is_psd():
    net = Mlp((2, 5, 1), activation="relu")
    theta = net.init_params(stream(8, "init"))
    ds = make_franke_dataset(16, 0.0, seed=14)
    rng = np.random.default_rng(15)
    for _ in range(100):
        v = rng.standard_normal(net.n_params)
        assert v @ ggn_vector_product(net, theta, ds, v) >= -1e-12


def test_ggn_matches_dense_oracle():
    net = Mlp((2, 3, 1), activation="tanh")
    theta = net.init_params(stream(9, "init"))
    ds = make_franke_dataset(12, 0.0, seed=16)
    dense = _dense_ggn(net, theta, ds)
    rng = np.random.default_rng(17)
    for _ in range(10):
        v = rng.standard_normal(net.n_params)
        gv = ggn_vector_product(net, theta, ds, v)
        assert np.linalg.norm(gv - dense @ v) <= 1e-8 * max(np.linalg.norm(gv), 1e-12)


def test_linear_model_ggn_equals_hvp():
    net = Mlp((2, 1))
    theta = stream(10, "t").standard_normal(net.n_params)
    ds = make_franke_dataset(16, 0.0, seed=18)
    v = stream(11, "v").standard_normal(net.n_params)
    gv = ggn_vector_product(net, theta, ds, v)
    hv = hessian_vector_product(net, theta, ds, v)
    assert np.linalg.norm(gv - hv) <= 1e-6 * np.linalg.norm(gv)


def test_fd_hvp_exact_on_quadratic_hook():
    a = np.diag([1.0, 4.0, 9.0])
    theta = np.array([1.0, -1.0, 0.5])
    v = np.array([0.2, 0.3, -0.1])
    out = fd_hvp(lambda t: a @ t, theta, v)
    assert np.linalg.norm(out - a @ v) <= 1e-6 * np.linalg.norm(a @ v)
    assert np.array_equal(fd_hvp(lambda t: a @ t, theta, np.zeros(3)), np.zeros(3))


def test_hvp_symmetry():
    net = Mlp((2, 6, 1), activation="tanh")
    theta = net.init_params(stream(12, "init"))
    ds = make_franke_dataset(16, 0.0, seed=19)
    rng = np.random.default_rng(20)
    for _ in range(5):
        u = rng.standard_normal(net.n_params)
        v = rng.standard_normal(net.n_params)
        hu = hessian_vector_product(net, theta, ds, u)
        hv = hessian_vector_product(net, theta, ds, v)
        denom = max(abs(u @ hv), abs(v @ hu), 1e-10)
        assert abs(u @ hv - v @ hu) / denom <= 1e-5


def test_franke_task_epoch_resampling_is_stream_driven():
    task = FrankeTask(net=Mlp((2, 4, 1)), n_points=32, noise_var=1e-4)
    rng1 = stream(42, "phase1-data")
    rng2 = stream(42, "phase1-data")
    a = task.epoch_data(rng1)
    b = task.epoch_data(rng2)
    assert np.array_equal(a.inputs, b.inputs)
    c = task.epoch_data(rng1)  # second epoch differs from the first
    assert not np.array_equal(a.inputs, c.inputs)
