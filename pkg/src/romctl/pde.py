"""Newell-Whitehead-Segel reaction-diffusion solver and dataset generation.

The PDE q_t = sigma * q_zz + q (1 - q^2) + 1_W(zeta) * w is discretized by
second-order central finite differences on a uniform grid with ghost-node
Neumann (zero-flux) boundaries, and advanced in time by a semi-implicit
scheme: Crank-Nicolson for diffusion, explicit reaction and actuation.
Each outer step of length dt is split into several inner substeps.

Dataset generation follows the Chebyshev random initial conditions and the
state-scaled random actuation schedule used for training, with one PCG64
substream per sequence (spawned from a single SeedSequence) so datasets
are reproducible bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .persist import load_arrays, save_arrays


@dataclass(frozen=True)
class Grid:
    """Uniform 1D grid with a localized actuation window."""

    left: float = -1.0
    right: float = 1.0
    nodes: int = 256
    window: tuple = (-0.2, 0.2)

    def __post_init__(self):
        if self.nodes < 3:
            raise ValueError("grid needs at least 3 nodes")
        if not (self.left < self.window[0] < self.window[1] < self.right):
            raise ValueError("actuation window must lie strictly inside the domain")

    @property
    def zeta(self):
        return np.linspace(self.left, self.right, self.nodes)

    @property
    def dz(self):
        return (self.right - self.left) / (self.nodes - 1)

    @property
    def window_mask(self):
        z = self.zeta
        return (z > self.window[0]) & (z < self.window[1])


@dataclass(frozen=True)
class SimParams:
    sigma: float = 0.2
    dt: float = 0.01
    substeps: int = 10

    def __post_init__(self):
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("dt must be positive and substeps >= 1")


class SimulationError(RuntimeError):
    """Raised when the time stepper produces non-finite values."""


class Simulator:
    """Semi-implicit NWS integrator bound to a grid and parameter set.

    ``reaction=False`` disables the nonlinear term (pure-diffusion test hook).
    """

    def __init__(self, grid: Grid | None = None, params: SimParams | None = None,
                 reaction: bool = True):
        self.grid = grid if grid is not None else Grid()
        self.params = params if params is not None else SimParams()
        self.reaction = reaction
        self._prepare_stepper()

    def _laplacian_matrix(self):
        n = self.grid.nodes
        inv_dz2 = 1.0 / self.grid.dz ** 2
        lap = np.zeros((n, n))
        idx = np.arange(1, n - 1)
        lap[idx, idx - 1] = inv_dz2
        lap[idx, idx] = -2.0 * inv_dz2
        lap[idx, idx + 1] = inv_dz2
        # ghost-node closure of the zero-flux boundary condition
        lap[0, 0] = -2.0 * inv_dz2
        lap[0, 1] = 2.0 * inv_dz2
        lap[-1, -1] = -2.0 * inv_dz2
        lap[-1, -2] = 2.0 * inv_dz2
        return lap

    def _prepare_stepper(self):
        lap = self._laplacian_matrix()
        h = self.params.dt / self.params.substeps
        n = self.grid.nodes
        # Strang substep: Crank-Nicolson diffusion over h/2 on either side
        # of one explicit midpoint step of the reaction/actuation terms.
        m_impl = np.eye(n) - 0.25 * self.params.sigma * h * lap
        m_expl = np.eye(n) + 0.25 * self.params.sigma * h * lap
        try:
            m_inv = np.linalg.inv(m_impl)
        except np.linalg.LinAlgError as exc:
            raise SimulationError(f"diffusion solve matrix is singular: {exc}") from exc
        self._lap = lap
        self._h = h
        self._half_propagator = m_inv @ m_expl
        self._window = self.grid.window_mask.astype(float)

    def laplacian(self, q):
        return self._lap @ q

    def rhs(self, q, w: float):
        """Continuous-time right-hand side at state q with actuation w."""
        out = self.params.sigma * (self._lap @ q)
        if self.reaction:
            out = out + q * (1.0 - q * q)
        return out + w * self._window

    def _source(self, q, w: float):
        source = w * self._window
        if self.reaction:
            source = source + q * (1.0 - q * q)
        return source

    def step(self, q, w: float):
        """Advance one outer step dt (zero-order hold on w)."""
        h = self._h
        for _ in range(self.params.substeps):
            q = self._half_propagator @ q
            mid = q + 0.5 * h * self._source(q, w)
            q = q + h * self._source(mid, w)
            q = self._half_propagator @ q
        if not np.all(np.isfinite(q)):
            raise SimulationError("time step produced non-finite values")
        return q

    def simulate(self, q0, actuations):
        """Roll the solver forward; returns all states including the initial."""
        q0 = np.asarray(q0, dtype=np.float64)
        if q0.shape != (self.grid.nodes,):
            raise ValueError(f"initial state has shape {q0.shape}, "
                             f"expected ({self.grid.nodes},)")
        states = np.empty((len(actuations) + 1, self.grid.nodes))
        states[0] = q0
        for i, w in enumerate(actuations):
            states[i + 1] = self.step(states[i], float(w))
        return states


def chebyshev_field(a: float, b, grid: Grid | None = None):
    """Evaluate |a| * sum_k b_k T_k(zeta) on the grid via the Chebyshev
    recurrence T_0 = 1, T_1 = zeta, T_{k+1} = 2 zeta T_k - T_{k-1}."""
    grid = grid if grid is not None else Grid()
    z = grid.zeta
    b = np.asarray(b, dtype=np.float64)
    t_prev = np.ones_like(z)
    t_cur = z.copy()
    out = b[0] * t_prev
    if len(b) > 1:
        out = out + b[1] * t_cur
    for k in range(2, len(b)):
        t_prev, t_cur = t_cur, 2.0 * z * t_cur - t_prev
        out = out + b[k] * t_cur
    return abs(a) * out


def chebyshev_ic(rng: np.random.Generator, grid: Grid | None = None):
    """Random initial condition: a ~ N(0,1), b_k ~ U(-1,1), k = 0..4."""
    a = rng.standard_normal()
    b = rng.uniform(-1.0, 1.0, size=5)
    return chebyshev_field(a, b, grid)


@dataclass
class TrajectoryDataset:
    """Sequences of (states, actuations) sharing one grid and parameter set.

    ``states`` has shape (count, n + 1, nodes) and ``actuations`` shape
    (count, n): one actuation per transition.
    """

    states: np.ndarray
    actuations: np.ndarray
    seed: int
    grid: Grid = field(default_factory=Grid)
    params: SimParams = field(default_factory=SimParams)

    def __post_init__(self):
        if self.states.shape[:2] != (self.actuations.shape[0],
                                     self.actuations.shape[1] + 1):
            raise ValueError("actuation count must equal state count - 1 per sequence")

    @property
    def count(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.actuations.shape[1]


def generate_dataset(count: int = 100, seed: int = 0, n_steps: int = 50,
                     grid: Grid | None = None, params: SimParams | None = None,
                     actuation_scale: float = 10.0) -> TrajectoryDataset:
    """Generate ``count`` forced trajectories of ``n_steps`` transitions.

    Each sequence draws a Chebyshev initial condition and, at every step i,
    an actuation w_i = actuation_scale * g_i * max_zeta |q(zeta, t_i)| with
    g_i ~ U(-1,1). The formula is also applied at i = 0, giving one
    actuation per transition. Sequence k uses the k-th spawned PCG64
    substream of the seed, so generation is deterministic and sequences
    are independent of each other.
    """
    grid = grid if grid is not None else Grid()
    params = params if params is not None else SimParams()
    sim = Simulator(grid, params)
    streams = np.random.SeedSequence(seed).spawn(count)

    states = np.empty((count, n_steps + 1, grid.nodes))
    actuations = np.empty((count, n_steps))
    for k in range(count):
        rng = np.random.Generator(np.random.PCG64(streams[k]))
        q = chebyshev_ic(rng, grid)
        states[k, 0] = q
        for i in range(n_steps):
            g = rng.uniform(-1.0, 1.0)
            w = actuation_scale * g * np.max(np.abs(q))
            actuations[k, i] = w
            q = sim.step(q, w)
            states[k, i + 1] = q
    return TrajectoryDataset(states, actuations, seed, grid, params)


def save_dataset(ds: TrajectoryDataset, path) -> None:
    meta = {
        "kind": "trajectory-dataset",
        "seed": ds.seed,
        "count": int(ds.count),
        "n_steps": int(ds.n_steps),
        "grid": {"left": ds.grid.left, "right": ds.grid.right,
                 "nodes": ds.grid.nodes, "window": list(ds.grid.window)},
        "params": {"sigma": ds.params.sigma, "dt": ds.params.dt,
                   "substeps": ds.params.substeps},
        "rng": "numpy PCG64, SeedSequence(seed).spawn(count), one stream per sequence",
    }
    save_arrays(path, {"states": ds.states, "actuations": ds.actuations}, meta)


def load_dataset(path) -> TrajectoryDataset:
    arrays, meta = load_arrays(path)
    grid = Grid(left=meta["grid"]["left"], right=meta["grid"]["right"],
                nodes=meta["grid"]["nodes"], window=tuple(meta["grid"]["window"]))
    params = SimParams(**meta["params"])
    return TrajectoryDataset(arrays["states"], arrays["actuations"],
                             seed=meta["seed"], grid=grid, params=params)


def export_trajectory_csv(states, dt: float, path) -> None:
    """Write one trajectory as CSV with columns t, zeta_0 .. zeta_{nodes-1}."""
    states = np.asarray(states)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"zeta_{j}" for j in range(states.shape[1])])
        for i, row in enumerate(states):
            writer.writerow([f"{i * dt:.6f}"] + [repr(v) for v in row])
