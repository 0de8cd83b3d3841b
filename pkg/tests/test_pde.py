import numpy as np
import pytest

from romctl import pde


def test_equilibria_preserved():
    sim = pde.Simulator()
    for level in (-1.0, 0.0, 1.0):
        q = np.full(256, level)
        for _ in range(1000):
            q = sim.step(q, 0.0)
        assert np.max(np.abs(q - level)) <= 1e-12


def test_laplacian_second_order_convergence():
    # smooth Neumann-compatible field: cos(pi * zeta) on (-1, 1)
    errors = []
    for nodes in (64, 128, 256, 512):
        grid = pde.Grid(nodes=nodes)
        sim = pde.Simulator(grid)
        lap = sim._laplacian_matrix()
        q = np.cos(np.pi * grid.zeta)
        exact = -np.pi ** 2 * q
        errors.append(np.max(np.abs(lap @ q - exact)))
    orders = [np.log2(errors[i] / errors[i + 1]) for i in range(3)]
    assert all(abs(o - 2.0) <= 0.2 for o in orders)


def test_dt_refinement_self_consistency():
    grid = pde.Grid()
    q0 = pde.chebyshev_field(0.8, [0.3, -0.2, 0.5, 0.1, -0.4], grid)
    coarse = pde.Simulator(grid, pde.SimParams(dt=0.01, substeps=10)).simulate(
        q0, np.zeros(50))
    fine = pde.Simulator(grid, pde.SimParams(dt=0.005, substeps=20)).simulate(
        q0, np.zeros(100))
    assert np.max(np.abs(coarse[-1] - fine[-1])) <= 1e-6


def test_pure_diffusion_decay_rate():
    grid = pde.Grid()
    sim = pde.Simulator(grid, reaction=False)
    q = np.cos(np.pi * grid.zeta)
    amp0 = np.max(np.abs(q))
    for _ in range(100):
        q = sim.step(q, 0.0)
    rate = -np.log(np.max(np.abs(q)) / amp0) / 1.0
    assert abs(rate - 0.2 * np.pi ** 2) <= 1e-2


def test_chebyshev_field_matches_cosine_form():
    grid = pde.Grid()
    b = [0.2, -0.5, 0.3, 0.1, 0.7]
    field = pde.chebyshev_field(1.3, b, grid)
    theta = np.arccos(np.clip(grid.zeta, -1, 1))
    expected = abs(1.3) * sum(bk * np.cos(k * theta) for k, bk in enumerate(b))
    assert np.allclose(field, expected, atol=1e-12)


def test_dataset_shapes_and_actuation_rule():
    ds = pde.generate_dataset(count=3, seed=5, n_steps=20)
    assert ds.states.shape == (3, 21, 256)
    assert ds.actuations.shape == (3, 20)
    # actuation magnitude is bounded by 10 * max|q| at the step it acts on
    for s in range(3):
        for i in range(20):
            bound = 10.0 * np.max(np.abs(ds.states[s, i]))
            assert abs(ds.actuations[s, i]) <= bound + 1e-12


def test_dataset_deterministic():
    a = pde.generate_dataset(count=2, seed=11)
    b = pde.generate_dataset(count=2, seed=11)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.actuations, b.actuations)
    c = pde.generate_dataset(count=2, seed=12)
    assert not np.array_equal(a.states, c.states)


def test_dataset_roundtrip(tmp_path):
    ds = pde.generate_dataset(count=2, seed=3, n_steps=10)
    pde.save_dataset(ds, tmp_path / "ds")
    loaded = pde.load_dataset(tmp_path / "ds")
    assert np.array_equal(ds.states, loaded.states)
    assert np.array_equal(ds.actuations, loaded.actuations)
    assert loaded.seed == 3


def test_simulator_rejects_nonfinite_state():
    sim = pde.Simulator()
    q = np.full(256, np.nan)
    with pytest.raises(pde.SimulationError):
        sim.step(q, 0.0)


def test_trajectory_csv_export(tmp_path):
    ds = pde.generate_dataset(count=1, seed=0, n_steps=5)
    out = tmp_path / "traj.csv"
    pde.export_trajectory_csv(ds.states[0], 0.01, out)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 7  # header + 6 states
