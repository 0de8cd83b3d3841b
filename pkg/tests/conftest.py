import numpy as np
import pytest

from romctl import pde


@pytest.fixture(scope="session")
def small_dataset():
    """Ten short training sequences, shared across tests that only need
    plausible field data rather than a converged model."""
    return pde.generate_dataset(count=10, seed=0)


@pytest.fixture(scope="session")
def snapshots(small_dataset):
    from romctl import linear_rom

    return linear_rom.assemble_snapshots(small_dataset)


def linear_system_snapshots(d_x=8, d_u=2, n=60, seed=0, decay=0.9):
    """Trajectory snapshots of a random stable linear system.

    Gives structured data with spectral decay, used by the truncation
    sweep and the closed-form equivalence tests.
    """
    from romctl import linear_rom

    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d_x, d_x))
    a *= decay / np.max(np.abs(np.linalg.eigvals(a)))
    b = rng.standard_normal((d_x, d_u))
    x = np.empty((d_x, n + 1))
    x[:, 0] = rng.standard_normal(d_x)
    u = rng.standard_normal((d_u, n))
    for i in range(n):
        x[:, i + 1] = a @ x[:, i] + b @ u[:, i]
    snap = linear_rom.SnapshotMatrices(y=x[:, 1:], omega=np.vstack([x[:, :-1], u]),
                                       d_x=d_x, d_u=d_u)
    return snap, a, b


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS):
        verdict, detail = RESULTS[name]
        terminalreporter.write_line(f"{name}: {verdict} — {detail}")
