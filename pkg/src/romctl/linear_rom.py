"""Linear reduced-order models: DMDc and the gradient-trained linear
autoencoding ROM, plus the closed-form least-squares solutions used to
cross-check both, and dynamic-mode extraction/matching.

Snapshot conventions: Y stacks successor states x(t_1)..x(t_n) as columns;
Omega stacks [x(t_i); u(t_i)] for i = 0..n-1. Transition pairs never cross
sequence boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg
from .persist import load_arrays, save_arrays

log = logging.getLogger(__name__)


@dataclass
class SnapshotMatrices:
    y: np.ndarray      # (d_x, n) successor states
    omega: np.ndarray  # (d_x + d_u, n) stacked state/actuation columns
    d_x: int
    d_u: int

    @property
    def n(self):
        return self.y.shape[1]

    @property
    def x(self):
        return self.omega[: self.d_x]

    @property
    def u(self):
        return self.omega[self.d_x :]


@dataclass
class LinearROM:
    """Projection e, reconstruction d, and reduced dynamics (a_r, b_r)."""

    e: np.ndarray    # (r_x, d_x)
    d: np.ndarray    # (d_x, r_x)
    a_r: np.ndarray  # (r_x, r_x)
    b_r: np.ndarray  # (r_x, d_u)

    @property
    def r_x(self):
        return self.e.shape[0]


@dataclass
class DynamicModeSet:
    modes: np.ndarray        # (d_x, r_x) complex, unit columns
    eigenvalues: np.ndarray  # (r_x,) complex, descending magnitude


def assemble_snapshots(dataset) -> SnapshotMatrices:
    """Build (Y, Omega) from a trajectory dataset, sequence by sequence."""
    if dataset.count == 0:
        raise ValueError("dataset is empty")
    d_x = dataset.states.shape[2]
    ys, omegas = [], []
    for k in range(dataset.count):
        states = dataset.states[k]
        u = dataset.actuations[k].reshape(-1, dataset.n_steps)
        ys.append(states[1:].T)
        omegas.append(np.vstack([states[:-1].T, u]))
    y = np.hstack(ys)
    omega = np.hstack(omegas)
    return SnapshotMatrices(y=y, omega=omega, d_x=d_x, d_u=omega.shape[0] - d_x)


def fit_dmdc(snap: SnapshotMatrices, r_x: int, r_xu: int) -> LinearROM:
    """DMDc via truncated SVDs of Y and Omega."""
    if not r_x < r_xu < min(snap.d_x + snap.d_u, snap.n):
        raise ValueError(
            f"require r_x < r_xu < min(d_x + d_u, n); got r_x={r_x}, r_xu={r_xu}, "
            f"d_x+d_u={snap.d_x + snap.d_u}, n={snap.n}"
        )
    omega_svd = linalg.svd(snap.omega)
    rank = int(np.sum(omega_svd.s > 1e-12 * omega_svd.s[0]))
    if rank < r_xu:
        raise ValueError(
            f"Omega has numerical rank {rank} < r_xu={r_xu}; use a smaller truncation"
        )
    u_y = linalg.truncated_svd(snap.y, r_x).u
    u_om = omega_svd.u[:, :r_xu]
    s_om = omega_svd.s[:r_xu]
    v_om = omega_svd.vt[:r_xu, :].T
    u_om1 = u_om[: snap.d_x]
    u_om2 = u_om[snap.d_x :]

    core = u_y.T @ snap.y @ v_om / s_om  # (r_x, r_xu), right-scaled by 1/sigma
    a_r = core @ u_om1.T @ u_y
    b_r = core @ u_om2.T
    if np.all(np.abs(b_r) <= 1e-8):
        log.warning("fitted input matrix is numerically zero; "
                    "data may contain no actuation influence")
    return LinearROM(e=u_y.T, d=u_y, a_r=a_r, b_r=b_r)


def rom_predict(rom: LinearROM, x, u):
    """One-step full-state prediction d @ (a_r @ e @ x + b_r @ u)."""
    x_r = rom.e @ np.asarray(x, dtype=np.float64)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    return rom.d @ (rom.a_r @ x_r + rom.b_r @ u)


def rom_rollout(rom: LinearROM, x0, actuations):
    """Recursive prediction in the reduced space, decoded at every step."""
    x_r = rom.e @ np.asarray(x0, dtype=np.float64)
    out = [rom.d @ x_r]
    for u in np.atleast_2d(np.asarray(actuations, dtype=np.float64).reshape(-1, rom.b_r.shape[1])):
        x_r = rom.a_r @ x_r + rom.b_r @ u
        out.append(rom.d @ x_r)
    return np.array(out)


def _e_xu(e: np.ndarray, d_u: int) -> np.ndarray:
    r_x, d_x = e.shape
    out = np.zeros((r_x + d_u, d_x + d_u))
    out[:r_x, :d_x] = e
    out[r_x:, d_x:] = np.eye(d_u)
    return out


def closed_form_G(snap: SnapshotMatrices, e: np.ndarray,
                  ridge: float | None = None) -> np.ndarray:
    """Unique least-squares minimizer of the reduced prediction objective
    for a fixed full-row-rank encoder ``e``.

    Solves G (E_xu Omega Omega^T E_xu^T) = E Y Omega^T E_xu^T. When the
    projected Gram matrix is singular, a trace-scaled ridge is added if
    ``ridge`` is given, otherwise the call fails.
    """
    e = np.asarray(e, dtype=np.float64)
    exu = _e_xu(e, snap.d_u)
    proj_omega = exu @ snap.omega
    gram = proj_omega @ proj_omega.T
    rhs = e @ snap.y @ proj_omega.T
    cond_limit = 1.0 / np.finfo(float).eps
    if np.linalg.cond(gram) > cond_limit:
        if ridge is None:
            raise linalg.LinalgError(
                "projected Gram matrix is singular; pass a ridge coefficient "
                "(l2 regularization) or provide more snapshots"
            )
        gram = gram + ridge * (np.trace(gram) / gram.shape[0]) * np.eye(gram.shape[0])
    return rhs @ np.linalg.inv(gram)


def corollary_G(snap: SnapshotMatrices, r_x: int) -> np.ndarray:
    """Pseudoinverse form of the fixed-encoder minimizer at E = U_Y^T.

    Uses the full SVD of Omega: G = E Y V_Omega (E_xu U_Omega Sigma_Omega)^+.
    Agrees with ``closed_form_G(snap, U_Y.T)`` whenever Omega Omega^T is
    nonsingular.
    """
    d = snap.d_x + snap.d_u
    if snap.n < d:
        raise linalg.LinalgError(
            "corollary form requires Omega Omega^T nonsingular (n >= d_x + d_u)"
        )
    u_y = linalg.truncated_svd(snap.y, r_x).u
    om_svd = linalg.svd(snap.omega)  # thin: u is (d, d), vt is (d, n)
    exu = _e_xu(u_y.T, snap.d_u)
    # columns of the rectangular Sigma beyond index d are zero, so the full
    # V contributes only its first d columns, i.e. vt.T of the thin SVD
    return u_y.T @ snap.y @ om_svd.vt.T @ linalg.pinv(exu @ om_svd.u @ np.diag(om_svd.s))


def truncated_G(snap: SnapshotMatrices, r_x: int, r_xu: int) -> np.ndarray:
    """Truncated-SVD approximation of the corollary form.

    Same structure as the DMDc parameters except the inverse of the
    truncated Sigma is replaced by the pseudoinverse-limit factor.
    """
    u_y = linalg.truncated_svd(snap.y, r_x).u
    om = linalg.truncated_svd(snap.omega, r_xu)
    exu = _e_xu(u_y.T, snap.d_u)
    return u_y.T @ snap.y @ om.vt.T @ linalg.pinv(exu @ om.u @ np.diag(om.s))


def dmdc_G(snap: SnapshotMatrices, r_x: int, r_xu: int) -> np.ndarray:
    """The DMDc reduced parameters as one block matrix [a_r b_r]."""
    rom = fit_dmdc(snap, r_x, r_xu)
    return np.hstack([rom.a_r, rom.b_r])


@dataclass
class LaromTrainConfig:
    beta1: float = 1.0
    beta4: float = 1.0
    lr: float = 1e-3
    max_iter: int = 2000
    grad_tol: float = 1e-6
    seed: int = 0


def fit_larom(snap: SnapshotMatrices, r_x: int,
              config: LaromTrainConfig | None = None,
              freeze_encoder: np.ndarray | None = None,
              beta1: float | None = None) -> tuple[LinearROM, dict]:
    """Train the linear autoencoding ROM by full-batch Adam.

    Minimizes the reduced one-step prediction error plus beta1 times the
    reconstruction error, with the decoder tied to the encoder transpose
    and a beta4-weighted squared-Frobenius semi-orthogonality penalty on
    E E^T - I. With ``freeze_encoder`` set, only the reduced dynamics G is
    trained (used to compare against the closed-form solution).

    Returns the fitted model and a log dict with the loss trace.
    """
    config = config if config is not None else LaromTrainConfig()
    if beta1 is not None:
        config.beta1 = beta1
    rng = np.random.default_rng(config.seed)
    n = snap.n

    y_t = ad.Tensor(snap.y)
    x_t = ad.Tensor(snap.x)
    u_t = ad.Tensor(snap.u)
    eye = ad.Tensor(np.eye(r_x))

    if freeze_encoder is not None:
        e = ad.Tensor(np.asarray(freeze_encoder, dtype=np.float64))
    else:
        e = ad.Tensor(rng.uniform(-1, 1, size=(r_x, snap.d_x)) / np.sqrt(snap.d_x),
                      requires_grad=True)
    a = ad.Tensor(rng.uniform(-0.1, 0.1, size=(r_x, r_x)), requires_grad=True)
    b = ad.Tensor(rng.uniform(-0.1, 0.1, size=(r_x, snap.d_u)), requires_grad=True)
    params = [a, b] if freeze_encoder is not None else [e, a, b]
    opt = ad.Adam(params, lr=config.lr)

    losses = []
    for it in range(config.max_iter):
        target = e @ y_t
        pred = a @ (e @ x_t) + b @ u_t
        loss = ad.tsum(ad.square(pred - target)) * (1.0 / n)
        if freeze_encoder is None:
            recon = e.T @ (e @ x_t)
            loss = loss + config.beta1 * (ad.tsum(ad.square(x_t - recon)) * (1.0 / n))
            defect = e @ e.T - eye
            loss = loss + config.beta4 * ad.tsum(ad.square(defect))
        if not np.isfinite(loss.data):
            raise RuntimeError(
                f"LAROM training diverged at iteration {it}; loss trace: {losses[-5:]}"
            )
        opt.zero_grad()
        ad.backward(loss)
        losses.append(float(loss.data))
        gnorm = np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params))
        if gnorm <= config.grad_tol * (1.0 + abs(losses[-1])):
            break
        opt.step()

    rom = LinearROM(e=e.data.copy(), d=e.data.T.copy(),
                    a_r=a.data.copy(), b_r=b.data.copy())
    return rom, {"loss": losses, "iterations": len(losses), "grad_norm": gnorm}


def dynamic_modes(rom: LinearROM) -> DynamicModeSet:
    """Modes d @ z for each eigenvector z of a_r, unit-normalized with the
    largest-magnitude entry rotated to the positive real axis."""
    res = linalg.eig(rom.a_r)
    modes = rom.d @ res.vectors
    modes = modes / np.linalg.norm(modes, axis=0, keepdims=True)
    for j in range(modes.shape[1]):
        pivot = modes[np.argmax(np.abs(modes[:, j])), j]
        if np.abs(pivot) > 0:
            modes[:, j] = modes[:, j] * (np.abs(pivot) / pivot)
    return DynamicModeSet(modes=modes, eigenvalues=res.values)


def match_modes(a: DynamicModeSet, b: DynamicModeSet) -> dict:
    """Pair modes across two sets by nearest eigenvalue.

    Pairs are chosen greedily over the globally sorted eigenvalue
    distances, which makes the pairing symmetric in its arguments. The
    alignment score per pair is |<phi_a, phi_b>| so sign and phase flips
    do not matter.
    """
    if a.eigenvalues.shape != b.eigenvalues.shape:
        raise ValueError("mode sets must have equal counts")
    k = len(a.eigenvalues)
    dist = np.abs(a.eigenvalues[:, None] - b.eigenvalues[None, :])
    order = np.argsort(dist, axis=None, kind="stable")
    used_a, used_b, pairs = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), k)
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
        if len(pairs) == k:
            break
    pairs.sort()
    scores = [float(np.abs(np.vdot(a.modes[:, i], b.modes[:, j]))) for i, j in pairs]
    return {
        "pairs": pairs,
        "scores": scores,
        "eigenvalue_gaps": [float(dist[i, j]) for i, j in pairs],
        "mean_score": float(np.mean(scores)),
    }


def save_linear_rom(rom: LinearROM, path, meta: dict | None = None) -> None:
    info = {"kind": "linear-rom", "r_x": int(rom.r_x)}
    info.update(meta or {})
    save_arrays(path, {"e": rom.e, "d": rom.d, "a_r": rom.a_r, "b_r": rom.b_r}, info)


def load_linear_rom(path) -> LinearROM:
    arrays, _ = load_arrays(path)
    return LinearROM(e=arrays["e"], d=arrays["d"], a_r=arrays["a_r"], b_r=arrays["b_r"])


def export_modes_csv(mode_set: DynamicModeSet, zeta, path) -> None:
    """CSV columns: node coordinate, then Re/Im of each mode."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["zeta"]
        for j in range(mode_set.modes.shape[1]):
            header += [f"re_mode_{j}", f"im_mode_{j}"]
        writer.writerow(header)
        for i, z in enumerate(zeta):
            row = [repr(float(z))]
            for j in range(mode_set.modes.shape[1]):
                row += [repr(float(mode_set.modes[i, j].real)),
                        repr(float(mode_set.modes[i, j].imag))]
            writer.writerow(row)
