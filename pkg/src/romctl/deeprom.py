"""Nonlinear autoencoding reduced-order model.

Convolutional encoder/decoder pair around a low-dimensional latent state,
with a split latent vector field F(z, u) = F_auto(z) + F_forced(z, u) -
F_forced(z, 0) integrated by one differentiable RK4 step per sampling
interval. Training minimizes latent one-step prediction error plus a
weighted full-state reconstruction error; the reconstruction set also
includes the zero field (the state the controller later stabilizes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .persist import load_arrays, save_arrays


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.99
    beta2: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")


class DeepROMModel:
    """Encoder, decoder, and split latent vector field.

    The encoder maps a field of ``nodes`` values through two stride-2
    convolutions (32 filters, kernel 3, padding 1), a 64-unit FC layer,
    and a bias-free FC output of width ``r_x``. The decoder mirrors the
    stack with transposed convolutions. ``nodes`` must be divisible by 4
    so the stride chain closes exactly.
    """

    def __init__(self, nodes: int = 256, r_x: int = 5, d_u: int = 1,
                 dt: float = 0.01, seed: int = 0):
        if nodes % 4 != 0:
            raise ValueError("nodes must be divisible by 4 for the conv stack")
        rng = np.random.default_rng(seed)
        self.nodes = nodes
        self.r_x = r_x
        self.d_u = d_u
        self.dt = dt
        self.seed = seed
        flat = 32 * (nodes // 4)

        self.enc_conv1 = ad.Conv1d(1, 32, 3, stride=2, padding=1, rng=rng)
        self.enc_conv2 = ad.Conv1d(32, 32, 3, stride=2, padding=1, rng=rng)
        self.enc_fc1 = ad.Linear(flat, 64, rng=rng)
        self.enc_fc2 = ad.Linear(64, r_x, bias=False, rng=rng)

        self.dec_fc1 = ad.Linear(r_x, 64, rng=rng)
        self.dec_fc2 = ad.Linear(64, flat, rng=rng)
        self.dec_conv1 = ad.ConvTranspose1d(32, 32, 3, stride=2, padding=1,
                                            output_padding=1, rng=rng)
        self.dec_conv2 = ad.ConvTranspose1d(32, 1, 3, stride=2, padding=1,
                                            output_padding=1, rng=rng)

        self.f_auto = ad.MLP([r_x, 100, 100, r_x], rng=rng)
        self.f_forced = ad.MLP([r_x + d_u, 100, 100, r_x], rng=rng)

    # -- parameter bookkeeping ------------------------------------------
    def _modules(self):
        return [
            ("enc_conv1", self.enc_conv1), ("enc_conv2", self.enc_conv2),
            ("enc_fc1", self.enc_fc1), ("enc_fc2", self.enc_fc2),
            ("dec_fc1", self.dec_fc1), ("dec_fc2", self.dec_fc2),
            ("dec_conv1", self.dec_conv1), ("dec_conv2", self.dec_conv2),
            ("f_auto", self.f_auto), ("f_forced", self.f_forced),
        ]

    def named_params(self):
        out = {}
        for name, module in self._modules():
            for i, p in enumerate(module.params()):
                out[f"{name}.{i}"] = p
        return out

    def params(self):
        return list(self.named_params().values())

    def set_requires_grad(self, flag: bool):
        for p in self.params():
            p.requires_grad = flag

    # -- forward paths ---------------------------------------------------
    def encode_t(self, x: ad.Tensor) -> ad.Tensor:
        """Encoder on a (N, nodes) tensor; returns (N, r_x)."""
        n = x.shape[0]
        h = ad.reshape(x, (n, 1, self.nodes))
        h = ad.relu(self.enc_conv1(h))
        h = self.enc_conv2(h)
        h = ad.reshape(h, (n, 32 * (self.nodes // 4)))
        h = ad.relu(self.enc_fc1(h))
        return self.enc_fc2(h)

    def decode_t(self, z: ad.Tensor) -> ad.Tensor:
        n = z.shape[0]
        h = ad.relu(self.dec_fc1(z))
        h = ad.relu(self.dec_fc2(h))
        h = ad.reshape(h, (n, 32, self.nodes // 4))
        h = ad.relu(self.dec_conv1(h))
        h = self.dec_conv2(h)
        return ad.reshape(h, (n, self.nodes))

    def latent_rhs_t(self, z: ad.Tensor, u: ad.Tensor) -> ad.Tensor:
        """F(z, u) = F_auto(z) + F_forced(z, u) - F_forced(z, 0)."""
        zero_u = ad.Tensor(np.zeros_like(u.data))
        forced = self.f_forced(ad.concat([z, u], axis=1))
        forced0 = self.f_forced(ad.concat([z, zero_u], axis=1))
        return ad.add(self.f_auto(z), ad.sub(forced, forced0))

    def predict_next_latent_t(self, z: ad.Tensor, u: ad.Tensor) -> ad.Tensor:
        return ad.rk4_step(lambda s, uu: self.latent_rhs_t(s, uu), z, u, self.dt)

    # -- numpy conveniences ----------------------------------------------
    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        with ad.no_grad():
            z = self.encode_t(ad.Tensor(np.atleast_2d(x))).data
        return z[0] if single else z

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        with ad.no_grad():
            x = self.decode_t(ad.Tensor(np.atleast_2d(z))).data
        return x[0] if single else x

    def latent_rhs(self, z, u) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        single = z.ndim == 1
        with ad.no_grad():
            out = self.latent_rhs_t(ad.Tensor(np.atleast_2d(z)),
                                    ad.Tensor(np.atleast_2d(u).reshape(-1, self.d_u))).data
        return out[0] if single else out

    def predict_next_latent(self, z, u) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        single = z.ndim == 1
        with ad.no_grad():
            out = self.predict_next_latent_t(
                ad.Tensor(np.atleast_2d(z)),
                ad.Tensor(np.atleast_2d(u).reshape(-1, self.d_u))).data
        return out[0] if single else out

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state_dict(self, arrays):
        for name, p in self.named_params().items():
            if name not in arrays:
                raise KeyError(f"missing parameter '{name}' in checkpoint")
            if arrays[name].shape != p.data.shape:
                raise ValueError(f"parameter '{name}' has shape {arrays[name].shape}, "
                                 f"expected {p.data.shape}")
            p.data = arrays[name].copy()


def _transition_table(dataset):
    """Flatten a dataset into (x_now, u, x_next) rows across all sequences."""
    count, n_plus_1, nodes = dataset.states.shape
    n = n_plus_1 - 1
    x_now = dataset.states[:, :-1].reshape(count * n, nodes)
    x_next = dataset.states[:, 1:].reshape(count * n, nodes)
    u = dataset.actuations.reshape(count * n, -1)
    return x_now, u, x_next


def train_deeprom(dataset, config: TrainConfig | None = None, r_x: int = 5,
                  seed: int | None = None) -> tuple[DeepROMModel, list]:
    """Train a DeepROM on a trajectory dataset.

    Returns the model with the best-validation-loss parameters restored,
    and a per-epoch log of train loss, validation loss, and learning rate.
    """
    config = config if config is not None else TrainConfig()
    if seed is not None:
        config.seed = seed
    x_now, u_all, x_next = _transition_table(dataset)
    n_total = x_now.shape[0]
    nodes = x_now.shape[1]
    d_u = u_all.shape[1]

    model = DeepROMModel(nodes=nodes, r_x=r_x, d_u=d_u,
                         dt=dataset.params.dt, seed=config.seed)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD33]))
    perm = rng.permutation(n_total)
    n_val = max(1, int(round(config.val_fraction * n_total)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    opt = ad.Adam(model.params(), lr=config.lr, lr_decay=config.lr_decay)
    zero_field = np.zeros((1, nodes))
    log = []
    best = (np.inf, model.state_dict())

    def batch_loss(xb, ub, xnb):
        # one encoder pass over [x_i, x_{i+1}, 0-field]; the successor block
        # plus the zero field is also the reconstruction set
        b = xb.shape[0]
        stacked = np.vstack([xb, xnb, zero_field])
        z_all = model.encode_t(ad.Tensor(stacked))
        z_now = ad.rows(z_all, 0, b)
        z_next = ad.rows(z_all, b, 2 * b)
        z_pred = model.predict_next_latent_t(z_now, ad.Tensor(ub))
        l_pred = ad.tsum(ad.square(ad.sub(z_next, z_pred))) * (1.0 / b)
        recon_in = stacked[b:]
        recon = model.decode_t(ad.rows(z_all, b, 2 * b + 1))
        l_recon = ad.tsum(ad.square(ad.sub(ad.Tensor(recon_in), recon))) * (1.0 / (b + 1))
        return ad.add(l_pred, ad.mul(l_recon, config.beta2))

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        train_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch):
            idx = order[start : start + config.batch]
            loss = batch_loss(x_now[idx], u_all[idx], x_next[idx])
            if not np.isfinite(loss.data):
                raise RuntimeError(f"DeepROM training diverged at epoch {epoch}; "
                                   f"log so far: {log[-3:]}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            train_loss += float(loss.data)
            n_batches += 1
        with ad.no_grad():
            val_loss = float(batch_loss(x_now[val_idx], u_all[val_idx],
                                        x_next[val_idx]).data)
        log.append({"epoch": epoch, "train_loss": train_loss / max(1, n_batches),
                    "val_loss": val_loss, "lr": opt.lr})
        if val_loss < best[0]:
            best = (val_loss, model.state_dict())
        opt.end_epoch()

    model.load_state_dict(best[1])
    return model, log


def rollout(model: DeepROMModel, x0, actuations):
    """Encode once, integrate the latent state recursively, decode every
    step. A non-finite latent truncates the rollout and sets the flag."""
    x0 = np.asarray(x0, dtype=np.float64)
    actuations = np.asarray(actuations, dtype=np.float64).reshape(-1, model.d_u)
    z = model.encode(x0)
    fields = [model.decode(z)]
    truncated = False
    for u in actuations:
        try:
            z = model.predict_next_latent(z, u)
        except FloatingPointError:
            truncated = True
            break
        if not np.all(np.isfinite(z)):
            truncated = True
            break
        fields.append(model.decode(z))
    return np.array(fields), truncated


def save_deeprom(model: DeepROMModel, path, meta: dict | None = None,
                 log: list | None = None) -> None:
    info = {
        "kind": "deeprom",
        "nodes": model.nodes, "r_x": model.r_x, "d_u": model.d_u,
        "dt": model.dt, "seed": model.seed,
    }
    info.update(meta or {})
    if log is not None:
        info["epochs_logged"] = len(log)
    save_arrays(path, model.state_dict(), info)


def load_deeprom(path) -> DeepROMModel:
    arrays, meta = load_arrays(path)
    model = DeepROMModel(nodes=int(meta["nodes"]), r_x=int(meta["r_x"]),
                         d_u=int(meta["d_u"]), dt=float(meta["dt"]),
                         seed=int(meta["seed"]))
    model.load_state_dict(arrays)
    return model


def export_training_log_csv(log: list, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in log:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             repr(row["val_loss"]), repr(row["lr"])])
