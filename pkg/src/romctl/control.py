"""Stability-constrained learned controller and the DMDc+LQR baseline.

The learned controller hypothesizes a latent target dynamics that is
exponentially stable by construction: an arbitrary network output is
projected, through a quadratic Lyapunov function, onto the half-space
where the Lyapunov decrease condition holds. A policy network is trained
jointly so the frozen reduced-order model matches that target in closed
loop. Evaluation runs the full-order PDE with zero-order-hold actuation.

The desired full state is the zero field. Its encoding is generally not
the zero latent, so the controller works in shifted latent coordinates
z = E(x) - E(0): the policy's fixed point at z = 0 supplies the
feedforward actuation that holds the system at the desired state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg
from .deeprom import DeepROMModel
from .linear_rom import LinearROM
from .pde import Simulator
from .persist import load_arrays, save_arrays

GRAD_NORM_GUARD = 1e-12


@dataclass
class ControllerConfig:
    alpha: float = 0.2
    beta3: float = 0.2
    k_scale: float = 0.5
    epochs: int = 100
    batch: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.99
    val_fraction: float = 0.1
    seed: int = 0


class ControllerModel:
    """Target-dynamics net, Lyapunov matrix, and policy net."""

    def __init__(self, r_x: int, d_u: int = 1, alpha: float = 0.2,
                 k_scale: float = 0.5, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
        self.r_x = r_x
        self.d_u = d_u
        self.alpha = float(alpha)
        self.k = k_scale * np.eye(r_x)
        self.seed = seed
        self.p_net = ad.MLP([r_x, 100, 100, r_x], rng=rng)
        self.pi_net = ad.MLP([r_x, 100, 100, d_u], rng=rng)
        self.latent_offset = np.zeros(r_x)  # E(zero field), set at training time

    def named_params(self):
        out = {}
        for prefix, net in (("p_net", self.p_net), ("pi_net", self.pi_net)):
            for i, p in enumerate(net.params()):
                out[f"{prefix}.{i}"] = p
        return out

    def params(self):
        return list(self.named_params().values())

    def lyapunov(self, z):
        """Quadratic Lyapunov value and gradient at latent z."""
        z = np.asarray(z, dtype=np.float64)
        return float(z @ self.k @ z), 2.0 * self.k @ z

    def target_rhs_t(self, z: ad.Tensor) -> ad.Tensor:
        """Differentiable stable target dynamics on a (N, r_x) batch.

        Rows whose Lyapunov gradient is numerically zero (the origin)
        return the zero vector: the desired state must be an equilibrium.
        """
        k_t = ad.Tensor(self.k)
        p = self.p_net(z)
        kz = ad.matmul(z, k_t)
        grad_v = ad.mul(kz, 2.0)  # K symmetric
        v = ad.sum_axis(ad.mul(z, kz), axis=1)
        gp = ad.sum_axis(ad.mul(grad_v, p), axis=1)
        overshoot = ad.relu(ad.add(gp, ad.mul(v, self.alpha)))
        norm_sq = ad.sum_axis(ad.mul(grad_v, grad_v), axis=1)
        guard = (norm_sq.data >= GRAD_NORM_GUARD).astype(float)
        safe_norm = ad.add(norm_sq, ad.Tensor(1.0 - guard))  # avoid 0/0 off-graph
        scale = ad.div(overshoot, safe_norm)
        # the whole row is zeroed at the origin so it stays an equilibrium
        return ad.mul(ad.sub(p, ad.mul(scale, grad_v)), ad.Tensor(guard))

    def target_rhs(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        with ad.no_grad():
            out = self.target_rhs_t(ad.Tensor(np.atleast_2d(z))).data
        return out[0] if single else out

    def policy(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        with ad.no_grad():
            out = self.pi_net(ad.Tensor(np.atleast_2d(z))).data
        return out[0] if single else out

    def state_dict(self):
        out = {name: p.data.copy() for name, p in self.named_params().items()}
        out["k"] = self.k.copy()
        out["latent_offset"] = self.latent_offset.copy()
        return out

    def load_state_dict(self, arrays):
        self.k = arrays["k"].copy()
        self.latent_offset = arrays["latent_offset"].copy()
        for name, p in self.named_params().items():
            p.data = arrays[name].copy()


def act(controller: ControllerModel, rom: DeepROMModel, x) -> np.ndarray:
    """Full-state feedback u = Pi(E(x) - E(0))."""
    z = rom.encode(np.asarray(x, dtype=np.float64)) - controller.latent_offset
    return controller.policy(z)


def train_controller(rom: DeepROMModel, dataset,
                     config: ControllerConfig | None = None
                     ) -> tuple[ControllerModel, list]:
    """Jointly train the target-dynamics and policy networks against the
    frozen reduced-order model.

    Loss per state sample: || F(E(x), Pi(z)) - F_s(z) ||^2 + beta3 ||Pi(z)||^2
    with z = E(x) - E(0). Encoder and F stay frozen; their parameters
    receive no gradients. Returns best-validation parameters and a log.
    """
    config = config if config is not None else ControllerConfig()
    controller = ControllerModel(r_x=rom.r_x, d_u=rom.d_u, alpha=config.alpha,
                                 k_scale=config.k_scale, seed=config.seed)

    states = dataset.states[:, 1:].reshape(-1, dataset.states.shape[2])
    z_raw = rom.encode(states)  # frozen encoder, computed off-graph
    controller.latent_offset = rom.encode(np.zeros(rom.nodes))
    z_shift = z_raw - controller.latent_offset[None, :]

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC7]))
    n_total = z_raw.shape[0]
    perm = rng.permutation(n_total)
    n_val = max(1, int(round(config.val_fraction * n_total)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    rom.set_requires_grad(False)
    opt = ad.Adam(controller.params(), lr=config.lr, lr_decay=config.lr_decay)
    log = []
    best = (np.inf, controller.state_dict())

    def batch_loss(idx):
        zb = ad.Tensor(z_shift[idx])
        z_raw_b = ad.Tensor(z_raw[idx])
        u = controller.pi_net(zb)
        f_closed = rom.latent_rhs_t(z_raw_b, u)
        f_target = controller.target_rhs_t(zb)
        b = len(idx)
        l_ctrl = ad.tsum(ad.square(ad.sub(f_closed, f_target))) * (1.0 / b)
        l_reg = ad.tsum(ad.square(u)) * (config.beta3 / b)
        return ad.add(l_ctrl, l_reg)

    try:
        for epoch in range(config.epochs):
            order = rng.permutation(train_idx)
            train_loss, n_batches = 0.0, 0
            for start in range(0, len(order), config.batch):
                loss = batch_loss(order[start : start + config.batch])
                if not np.isfinite(loss.data):
                    raise RuntimeError(
                        f"controller training diverged at epoch {epoch}; "
                        f"log so far: {log[-3:]}"
                    )
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
                train_loss += float(loss.data)
                n_batches += 1
            with ad.no_grad():
                val_loss = float(batch_loss(val_idx).data)
            log.append({"epoch": epoch, "train_loss": train_loss / max(1, n_batches),
                        "val_loss": val_loss, "lr": opt.lr})
            if val_loss < best[0]:
                best = (val_loss, controller.state_dict())
            opt.end_epoch()
    finally:
        rom.set_requires_grad(True)

    controller.load_state_dict(best[1])
    return controller, log


# -- LQR baseline --------------------------------------------------------


@dataclass
class LqrController:
    gain: np.ndarray  # (d_u, r_x)
    rom: LinearROM
    q_weight: float
    r_weight: float


def lqr_fit(rom: LinearROM, q_weight: float = 1.0, r_weight: float = 1.0) -> LqrController:
    """LQR on a DMDc reduced model with Q = q I and R = r I."""
    r_x = rom.r_x
    d_u = rom.b_r.shape[1]
    q = q_weight * np.eye(r_x)
    r = r_weight * np.eye(d_u)
    gain = linalg.dare_gain(rom.a_r, rom.b_r, q, r)
    radius = np.max(np.abs(np.linalg.eigvals(rom.a_r - rom.b_r @ gain)))
    if radius >= 1.0:
        raise linalg.LinalgError(
            f"LQR closed loop is not stable (spectral radius {radius:.6f})"
        )
    return LqrController(gain=gain, rom=rom, q_weight=q_weight, r_weight=r_weight)


def lqr_act(ctl: LqrController, x) -> np.ndarray:
    return -ctl.gain @ (ctl.rom.e @ np.asarray(x, dtype=np.float64))


# -- closed-loop evaluation ----------------------------------------------


@dataclass
class ClosedLoopResult:
    states: np.ndarray       # (steps + 1, nodes)
    actuations: np.ndarray   # (steps,)
    mse_trace: np.ndarray    # (steps + 1,) mean squared deviation from zero
    actuation_cumulative: float


def closed_loop_sim(policy, x0, horizon: float, sim: Simulator | None = None) -> ClosedLoopResult:
    """Run the full-order PDE under a feedback policy.

    ``policy`` maps a full state to a scalar (or length-1) actuation,
    applied with zero-order hold over each outer step. Records the mean
    squared deviation from the zero target and the left-Riemann cumulative
    actuation integral of |u|.
    """
    sim = sim if sim is not None else Simulator()
    dt = sim.params.dt
    steps = int(round(horizon / dt))
    x = np.asarray(x0, dtype=np.float64).copy()
    states = np.empty((steps + 1, sim.grid.nodes))
    actuations = np.empty(steps)
    mse = np.empty(steps + 1)
    states[0] = x
    mse[0] = float(np.mean(x * x))
    for i in range(steps):
        u = float(np.atleast_1d(policy(x))[0])
        actuations[i] = u
        x = sim.step(x, u)
        states[i + 1] = x
        mse[i + 1] = float(np.mean(x * x))
    return ClosedLoopResult(states=states, actuations=actuations, mse_trace=mse,
                            actuation_cumulative=float(np.sum(np.abs(actuations)) * dt))


def export_closed_loop_csv(result: ClosedLoopResult, dt: float, path) -> None:
    """CSV columns: t, mse, u, cumulative_actuation (u blank at final time)."""
    import csv

    cum = np.concatenate([[0.0], np.cumsum(np.abs(result.actuations)) * dt])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mse", "u", "cumulative_actuation"])
        for i in range(len(result.mse_trace)):
            u = repr(float(result.actuations[i])) if i < len(result.actuations) else ""
            writer.writerow([f"{i * dt:.6f}", repr(float(result.mse_trace[i])),
                             u, repr(float(cum[i]))])


def save_controller(controller: ControllerModel, path, meta: dict | None = None) -> None:
    info = {"kind": "deeproc", "r_x": controller.r_x, "d_u": controller.d_u,
            "alpha": controller.alpha, "seed": controller.seed}
    info.update(meta or {})
    save_arrays(path, controller.state_dict(), info)


def load_controller(path) -> ControllerModel:
    arrays, meta = load_arrays(path)
    model = ControllerModel(r_x=int(meta["r_x"]), d_u=int(meta["d_u"]),
                            alpha=float(meta["alpha"]), seed=int(meta["seed"]))
    model.load_state_dict(arrays)
    return model
