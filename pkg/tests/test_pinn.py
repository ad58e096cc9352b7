import json

import numpy as np
import pytest

from dtpinn.geometry import DomainShape, generate_nodes
from dtpinn.network import MlpParams, architecture, forward, init_weights, n_params
from dtpinn.optimizer import LbfgsConfig
from dtpinn.pinn import (HeatProblem, Objective, PoissonProblem, TrainRecord, build_matrices,
                         dt_heat_loss, dt_poisson_loss, manufactured_heat, manufactured_poisson,
                         relative_l2, space_time, train, vanilla_heat_loss,
                         vanilla_poisson_loss)
from dtpinn.sparse import from_dense


def constant_net(sizes, c):
    theta = np.zeros(n_params(sizes))
    theta[-1] = c
    return MlpParams(sizes, theta)


def fd_gradient_error(fn, theta, h=1e-6):
    _, g = fn(theta)
    fd = np.empty_like(g)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        fd[k] = (fn(theta + e)[0] - fn(theta - e)[0]) / (2 * h)
    return np.max(np.abs(fd - g)) / np.max(np.abs(fd))


def test_manufactured_poisson_examples(rng):
    u, lap = manufactured_poisson(np.array([[0.0, 0.0], [0.5, 0.0]]))
    np.testing.assert_allclose(u, [1.0, 2.0])
    np.testing.assert_allclose(lap, [0.0, -2 * np.pi**2])
    x = rng.uniform(-1, 1, (20, 2))
    h = 1e-4
    f = lambda y: manufactured_poisson(y)[0]
    fd = (f(x + [h, 0]) + f(x - [h, 0]) + f(x + [0, h]) + f(x - [0, h]) - 4 * f(x)) / h**2
    np.testing.assert_allclose(manufactured_poisson(x)[1], fd, atol=1e-6)


def test_manufactured_heat_examples(rng):
    x = rng.uniform(-1, 1, (15, 2))
    np.testing.assert_array_equal(manufactured_heat(x, 0.0)[0], 1.0)
    assert manufactured_heat(np.array([[0.5, 0.0]]), 0.5)[0][0] == pytest.approx(2.0)
    t, h = 0.3, 1e-5
    u, ut, lap = manufactured_heat(x, t)
    fd_t = (manufactured_heat(x, t + h)[0] - manufactured_heat(x, t - h)[0]) / (2 * h)
    np.testing.assert_allclose(ut, fd_t, atol=1e-8)
    hx = 1e-4
    f = lambda y: manufactured_heat(y, t)[0]
    fd = (f(x + [hx, 0]) + f(x - [hx, 0]) + f(x + [0, hx]) + f(x - [0, hx]) - 4 * f(x)) / hx**2
    np.testing.assert_allclose(lap, fd, atol=1e-6)


def test_relative_l2():
    assert relative_l2([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_l2([0.0, 0.0], [3.0, 4.0]) == 1.0
    with pytest.raises(ZeroDivisionError):
        relative_l2([1.0], [0.0])
    with pytest.raises(ValueError):
        relative_l2([1.0, 2.0], [1.0])


def test_problem_data_consistent(small_cloud):
    c = small_cloud
    pr = PoissonProblem.manufactured(c, "nonlinear")
    u, lap = manufactured_poisson(c.points)
    np.testing.assert_allclose(pr.f, lap - np.exp(u))
    heat = HeatProblem.manufactured(c, n_t=4)
    assert heat.f.shape == (5, c.n) and heat.g.shape == (5, c.n_boundary)
    np.testing.assert_allclose(heat.times, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(heat.u0, 1.0)
    with pytest.raises(ValueError):
        PoissonProblem(c, "cubic", pr.f, pr.g)


def test_heat_spacetime_count():
    cloud = generate_nodes(DomainShape.unit_disk(), 828, seed=0)
    heat = HeatProblem.manufactured(cloud, 24)
    assert heat.n_spacetime == 25 * cloud.n
    assert space_time(cloud.points, heat.times).shape == (25 * cloud.n, 3)


def test_dt_poisson_zero_residual_fixture():
    sizes = architecture(2, 1, 3)
    net = constant_net(sizes, 2.0)
    X = np.random.default_rng(0).random((6, 2))
    # fixture operators: L picks the first four values, B the last two
    L = from_dense(np.eye(4, 6))
    B = from_dense(np.eye(6)[4:])
    loss, grad = dt_poisson_loss(net, X, L, B, np.full(4, 2.0), np.full(2, 2.0))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)
    loss, _ = dt_poisson_loss(net, X, L, B, np.full(4, 2.0 - np.exp(2.0)), np.full(2, 2.0),
                              "nonlinear")
    assert loss == pytest.approx(0.0, abs=1e-24)
    zero = constant_net(sizes, 0.0)
    assert dt_poisson_loss(zero, X, L, B, np.zeros(4), np.zeros(2))[0] == 0.0
    with pytest.raises(ValueError):
        dt_poisson_loss(zero, X, L, B, np.zeros(3), np.zeros(2))


def test_vanilla_poisson_fixtures():
    sizes = architecture(2, 2, 4)
    c = 0.3
    net = constant_net(sizes, c)
    Xi = np.random.default_rng(1).uniform(-0.5, 0.5, (5, 2))
    Xb = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _ = vanilla_poisson_loss(net, Xi, Xb, Xb, np.full(5, -np.exp(c)), np.full(2, c),
                                   "nonlinear")
    assert loss == pytest.approx(0.0, abs=1e-30)
    zero = constant_net(sizes, 0.0)
    assert vanilla_poisson_loss(zero, Xi, Xb, Xb, np.zeros(5), np.zeros(2))[0] == 0.0


def test_heat_zero_residual_fixture(small_cloud):
    c = small_cloud
    sizes = architecture(3, 1, 3)
    net = constant_net(sizes, 1.0)
    heat = HeatProblem.manufactured(c, 2)
    heat.f[:] = 0.0
    heat.g[:] = 1.0  # alpha * 0 + beta * 1
    L, B, _ = build_matrices(c, 2)
    assert dt_heat_loss(net, c.extended, L, B, heat)[0] == pytest.approx(0.0, abs=1e-20)
    assert vanilla_heat_loss(net, c.points, c.normals, heat)[0] == 0.0
    bad = HeatProblem(c, 3, heat.f, heat.g, heat.u0)
    with pytest.raises(ValueError):
        dt_heat_loss(net, c.extended, L, B, bad)


@pytest.mark.parametrize("pde", ["linear", "nonlinear", "heat"])
@pytest.mark.parametrize("mode", ["dt", "vanilla"])
def test_loss_gradients_match_finite_differences(small_cloud, pde, mode):
    c = small_cloud
    assert c.n <= 60
    problem = HeatProblem.manufactured(c, 2) if pde == "heat" else PoissonProblem.manufactured(c, pde)
    d = 3 if pde == "heat" else 2
    params = init_weights(architecture(d, 2, 8), 3)
    L, B, _ = build_matrices(c, 2)
    obj = Objective(problem, mode, params, L, B)
    assert fd_gradient_error(obj, params.theta) <= 1e-5


def test_heat_losses_agree_as_h_shrinks():
    gaps = []
    params = init_weights(architecture(3, 2, 10), 0)
    params = params.with_theta(0.5 * params.theta)
    for n in (300, 1200):
        c = generate_nodes(DomainShape.unit_disk(), n, seed=0)
        heat = HeatProblem.manufactured(c, 3)
        L, B, _ = build_matrices(c, 4)
        ld, _ = dt_heat_loss(params, c.extended, L, B, heat)
        lv, _ = vanilla_heat_loss(params, c.points, c.normals, heat)
        gaps.append(abs(ld - lv) / lv)
    assert gaps[1] < gaps[0] < 1e-2


def test_train_zero_epochs_is_untrained_error(small_cloud):
    pr = PoissonProblem.manufactured(small_cloud)
    rec = train(pr, "dt", 2, depth=2, width=8, seed=5, epochs=0)
    params = init_weights(architecture(2, 2, 8), 5)
    u = forward(params, small_cloud.points)[0]
    assert rec.epochs == [0]
    assert rec.rel_error[0] == relative_l2(u, PoissonProblem.exact(small_cloud.points))


@pytest.mark.parametrize("mode", ["dt", "vanilla"])
def test_train_is_deterministic(small_cloud, mode):
    pr = PoissonProblem.manufactured(small_cloud, "nonlinear")
    kw = dict(depth=2, width=8, seed=1, epochs=15)
    a, b = train(pr, mode, 3, **kw), train(pr, mode, 3, **kw)
    assert a.loss == b.loss and a.rel_error == b.rel_error and a.epochs == b.epochs
    np.testing.assert_array_equal(a.params.theta, b.params.theta)
    assert np.all(np.diff(a.epochs) > 0)
    assert np.all(np.diff(a.cum_seconds) >= 0)
    assert a.loss[-1] < a.loss[0]


def test_train_fp32_stays_fp32(small_cloud):
    pr = PoissonProblem.manufactured(small_cloud)
    rec = train(pr, "dt", 2, depth=2, width=8, epochs=5, precision="fp32")
    assert rec.params.dtype == np.float32
    assert rec.config["precision"] == "float32"


def test_train_heat_and_eval_every(small_cloud):
    pr = HeatProblem.manufactured(small_cloud, 2)
    rec = train(pr, "dt", 2, depth=1, width=6, epochs=7, eval_every=3)
    assert rec.epochs == [0, 3, 6, 7]


def test_train_bad_mode(small_cloud):
    with pytest.raises(ValueError):
        train(PoissonProblem.manufactured(small_cloud), "hybrid")


def test_record_files(tmp_path, small_cloud):
    pr = PoissonProblem.manufactured(small_cloud)
    rec = train(pr, "dt", 2, depth=1, width=6, epochs=4,
                lbfgs=LbfgsConfig(history=3, lr=0.5))
    rec.write(tmp_path)
    back = TrainRecord.read_csv(tmp_path / "record.csv")
    assert back.epochs == rec.epochs and back.loss == rec.loss and back.rel_error == rec.rel_error
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["best_error"] == min(rec.rel_error)
    assert summary["best_epoch"] == rec.best_epoch
    assert summary["config"]["lbfgs"]["history"] == 3
    for key in ("assembly_seconds", "total_seconds", "train_seconds"):
        assert summary[key] >= 0
