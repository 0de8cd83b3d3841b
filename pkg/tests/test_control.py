import numpy as np
import pytest

from romctl import control as ct
from romctl import deeprom as dr
from romctl import linear_rom as lr
from romctl import pde


@pytest.fixture(scope="module")
def tiny_dataset():
    return pde.generate_dataset(count=4, seed=2, n_steps=10)


@pytest.fixture(scope="module")
def rom(tiny_dataset):
    model, _ = dr.train_deeprom(tiny_dataset, dr.TrainConfig(epochs=2, seed=0), r_x=2)
    return model


@pytest.fixture(scope="module")
def controller(rom, tiny_dataset):
    ctl, _ = ct.train_controller(rom, tiny_dataset,
                                 ct.ControllerConfig(epochs=2, seed=0))
    return ctl


def test_lyapunov_quadratic_form(controller):
    z = np.array([1.0, -2.0])
    v, grad = controller.lyapunov(z)
    assert np.isclose(v, 0.5 * (1 + 4) * 1.0)  # z' (0.5 I) z
    assert np.allclose(grad, z)


def test_target_rhs_zero_at_origin(controller):
    out = controller.target_rhs(np.zeros(2))
    assert np.array_equal(out, np.zeros(2))


def test_certificate_on_random_probes(controller):
    rng = np.random.default_rng(0)
    alpha = controller.alpha
    for _ in range(200):
        z = rng.uniform(-3, 3, size=2)
        v, grad = controller.lyapunov(z)
        fs = controller.target_rhs(z)
        assert float(grad @ fs) + alpha * v <= 1e-9


def test_certificate_with_random_p_networks():
    rng = np.random.default_rng(5)
    for seed in range(5):
        model = ct.ControllerModel(r_x=3, d_u=1, seed=seed)
        for _ in range(50):
            z = rng.uniform(-5, 5, size=3)
            v, grad = model.lyapunov(z)
            fs = model.target_rhs(z)
            assert float(grad @ fs) + model.alpha * v <= 1e-9


def test_policy_and_act_shapes(controller, rom):
    u = controller.policy(np.zeros(2))
    assert u.shape == (1,)
    x = np.zeros(256)
    assert ct.act(controller, rom, x).shape == (1,)


def test_act_uses_shifted_latent(controller, rom):
    zero_field = np.zeros(256)
    # at the desired state the shifted latent is exactly zero, so the
    # actuation equals the policy at the origin
    expected = controller.policy(np.zeros(controller.r_x))
    assert np.allclose(ct.act(controller, rom, zero_field), expected)


def test_controller_training_deterministic(rom, tiny_dataset):
    cfg = ct.ControllerConfig(epochs=2, seed=4)
    c1, _ = ct.train_controller(rom, tiny_dataset, cfg)
    c2, _ = ct.train_controller(rom, tiny_dataset, cfg)
    for name, arr in c1.state_dict().items():
        assert np.array_equal(arr, c2.state_dict()[name]), name


def test_controller_roundtrip(tmp_path, controller):
    ct.save_controller(controller, tmp_path / "ctl")
    loaded = ct.load_controller(tmp_path / "ctl")
    z = np.array([0.7, -0.1])
    assert np.array_equal(controller.policy(z), loaded.policy(z))
    assert np.array_equal(controller.target_rhs(z), loaded.target_rhs(z))


def test_lqr_gain_stabilizes_reduced_model(tiny_dataset):
    snap = lr.assemble_snapshots(tiny_dataset)
    rom = lr.fit_dmdc(snap, 2, 3)
    ctl = ct.lqr_fit(rom)
    radius = np.max(np.abs(np.linalg.eigvals(rom.a_r - rom.b_r @ ctl.gain)))
    assert radius < 1.0


def test_closed_loop_zero_policy_at_equilibrium():
    res = ct.closed_loop_sim(lambda x: np.zeros(1), np.zeros(256), 0.1)
    assert np.allclose(res.mse_trace, 0.0)
    assert res.actuation_cumulative == 0.0


def test_closed_loop_metric_consistency():
    sim = pde.Simulator()
    x0 = 0.5 * np.cos(np.pi * sim.grid.zeta)
    res = ct.closed_loop_sim(lambda x: np.array([0.3]), x0, 0.2, sim)
    dt = sim.params.dt
    assert np.isclose(res.actuation_cumulative,
                      np.sum(np.abs(res.actuations)) * dt, rtol=0, atol=0)
    assert res.states.shape[0] == len(res.mse_trace)
    assert np.allclose(res.mse_trace, np.mean(res.states ** 2, axis=1))


def test_closed_loop_csv_export(tmp_path):
    res = ct.closed_loop_sim(lambda x: np.zeros(1), np.zeros(256), 0.05)
    out = tmp_path / "trace.csv"
    ct.export_closed_loop_csv(res, 0.01, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,mse,u,cumulative_actuation"
    assert len(lines) == len(res.mse_trace) + 1
