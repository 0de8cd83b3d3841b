"""Config-driven command line entry point.

Subcommands cover the full pipeline: dataset generation, model fitting,
controller training, prediction and control evaluation, and mode export.
Every run validates its configuration, writes a resolved copy of it next
to the outputs, and emits CSV/JSON artifacts plus rendered figures.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import control as ct
from . import deeprom as dr
from . import linear_rom as lr
from . import pde
from . import report


class ConfigError(ValueError):
    pass


SCHEMA_VERSION = 1

# Per-command defaults. Unknown keys in a config file are rejected so a
# typo cannot silently fall back to a default.
DEFAULTS = {
    "gen-data": {
        "seed": 0,
        "train_count": 100,
        "test_count": 100,
        "n_steps": 50,
        "actuation_scale": 10.0,
    },
    "train": {
        "model": "dmdc",
        "data": "",
        "seed": 0,
        "r_x": 5,
        "r_xu": None,
        "epochs": 100,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "lr_decay": 0.99,
        "beta1": 1.0,
        "beta2": 1.0,
        "beta4": 1.0,
        "max_iter": 4000,
    },
    "train-ctrl": {
        "method": "deeproc",
        "data": "",
        "rom": "",
        "seed": 0,
        "alpha": 0.2,
        "beta3": 0.2,
        "epochs": 100,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "lr_decay": 0.99,
        "q_weight": 1.0,
        "r_weight": 1.0,
    },
    "eval-pred": {
        "data": "",
        "checkpoints": {},
        "horizon_steps": 50,
    },
    "eval-ctrl": {
        "controllers": {},
        "horizon": 5.0,
        "include_uncontrolled": True,
    },
    "modes": {
        "checkpoint_a": "",
        "checkpoint_b": "",
    },
}


def _load_config(command, path, overrides):
    resolved = dict(DEFAULTS[command])
    if path:
        if path.lstrip().startswith("{"):
            user = json.loads(path)
        else:
            with open(path) as fh:
                user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = set(user) - set(resolved) - {"schema_version"}
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        version = user.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        resolved.update(user)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    resolved["schema_version"] = SCHEMA_VERSION
    return resolved


def _write_resolved(config, out_dir, name="config.json"):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _x0_default():
    zeta = pde.Grid().zeta
    return 2.0 + np.cos(2 * np.pi * zeta) * np.cos(np.pi * zeta)


# -- subcommands ----------------------------------------------------------


def cmd_gen_data(config, out_dir):
    _write_resolved(config, out_dir)
    for split, count, seed in (
        ("train", config["train_count"], config["seed"]),
        ("test", config["test_count"], config["seed"] + 100000),
    ):
        ds = pde.generate_dataset(count=count, seed=seed, n_steps=config["n_steps"],
                                  actuation_scale=config["actuation_scale"])
        pde.save_dataset(ds, os.path.join(out_dir, split))
        report.render_state_history(ds.states[0], ds.params.dt,
                                    os.path.join(out_dir, f"{split}_sequence0.png"),
                                    title=f"{split} sequence 0")
    return 0


def cmd_train(config, out_dir):
    if not config["data"]:
        raise ConfigError("train requires a 'data' path")
    _write_resolved(config, out_dir)
    ds = pde.load_dataset(config["data"])
    model_kind = config["model"]
    ckpt = os.path.join(out_dir, "checkpoint")
    if model_kind == "dmdc":
        snap = lr.assemble_snapshots(ds)
        r_xu = config["r_xu"] if config["r_xu"] is not None else config["r_x"] + 1
        rom = lr.fit_dmdc(snap, config["r_x"], r_xu)
        defect = float(np.linalg.norm(rom.e @ rom.e.T - np.eye(rom.r_x)))
        if defect > 1e-8:
            raise lr.LinalgError(f"encoder orthogonality defect {defect:.2e}")
        sv_y = np.linalg.svd(snap.y, compute_uv=False)
        sv_o = np.linalg.svd(snap.omega, compute_uv=False)
        lr.save_linear_rom(rom, ckpt, meta={"model": "dmdc", "r_xu": r_xu})
        with open(os.path.join(out_dir, "train_log.json"), "w") as fh:
            json.dump({"model": "dmdc", "r_x": config["r_x"], "r_xu": r_xu,
                       "singular_values_states": sv_y.tolist(),
                       "singular_values_snapshots": sv_o.tolist()}, fh, indent=2)
    elif model_kind == "larom":
        snap = lr.assemble_snapshots(ds)
        train_cfg = lr.LaromTrainConfig(beta1=config["beta1"], beta4=config["beta4"],
                                        lr=config["learning_rate"],
                                        max_iter=config["max_iter"],
                                        seed=config["seed"])
        rom, log = lr.fit_larom(snap, config["r_x"], train_cfg)
        lr.save_linear_rom(rom, ckpt, meta={"model": "larom", "seed": config["seed"]})
        with open(os.path.join(out_dir, "train_log.json"), "w") as fh:
            json.dump({"model": "larom", "iterations": log["iterations"],
                       "final_loss": log["loss"][-1]}, fh, indent=2)
        modes = lr.dynamic_modes(rom)
        lr.export_modes_csv(modes, ds.grid.zeta, os.path.join(out_dir, "modes.csv"))
        report.render_modes(ds.grid.zeta, {"larom": modes.modes},
                            os.path.join(out_dir, "modes.png"))
    elif model_kind == "deeprom":
        train_cfg = dr.TrainConfig(epochs=config["epochs"], batch=config["batch_size"],
                                   lr=config["learning_rate"], lr_decay=config["lr_decay"],
                                   beta2=config["beta2"], seed=config["seed"])
        model, log = dr.train_deeprom(ds, train_cfg, r_x=config["r_x"])
        dr.save_deeprom(model, ckpt, meta={"model": "deeprom"}, log=log)
        dr.export_training_log_csv(log, os.path.join(out_dir, "train_log.csv"))
        report.render_training_log(log, os.path.join(out_dir, "train_log.png"))
    else:
        raise ConfigError(f"unknown model kind: {model_kind!r}")
    return 0


def cmd_train_ctrl(config, out_dir):
    if not config["rom"]:
        raise ConfigError("train-ctrl requires a 'rom' checkpoint path")
    _write_resolved(config, out_dir)
    ckpt = os.path.join(out_dir, "checkpoint")
    if config["method"] == "deeproc":
        if not config["data"]:
            raise ConfigError("deeproc training requires a 'data' path")
        rom = dr.load_deeprom(config["rom"])
        ds = pde.load_dataset(config["data"])
        ctl_cfg = ct.ControllerConfig(alpha=config["alpha"], beta3=config["beta3"],
                                      epochs=config["epochs"],
                                      batch=config["batch_size"],
                                      lr=config["learning_rate"],
                                      lr_decay=config["lr_decay"],
                                      seed=config["seed"])
        controller, log = ct.train_controller(rom, ds, ctl_cfg)
        ct.save_controller(controller, ckpt, meta={"rom": config["rom"]})
        dr.export_training_log_csv(log, os.path.join(out_dir, "train_log.csv"))
        report.render_training_log(log, os.path.join(out_dir, "train_log.png"))
    elif config["method"] == "lqr":
        rom = lr.load_linear_rom(config["rom"])
        gain_ctl = ct.lqr_fit(rom, q_weight=config["q_weight"],
                              r_weight=config["r_weight"])
        from .persist import save_arrays
        save_arrays(ckpt, {"gain": gain_ctl.gain},
                    {"kind": "lqr", "rom": config["rom"],
                     "q_weight": config["q_weight"],
                     "r_weight": config["r_weight"]})
    else:
        raise ConfigError(f"unknown controller method: {config['method']!r}")
    return 0


def _nmse_curves(predict, dataset, horizon):
    """Recursive prediction NMSE per step over every test sequence.

    NMSE(t) = sum over sequences of the squared prediction error at step t
    divided by the summed true-state energy at the same step.
    """
    err = np.zeros(horizon + 1)
    energy = np.zeros(horizon + 1)
    for s in range(dataset.count):
        true = dataset.states[s, : horizon + 1]
        pred = predict(dataset.states[s, 0], dataset.actuations[s, :horizon])
        steps = min(len(pred), horizon + 1)
        err[:steps] += np.sum((pred[:steps] - true[:steps]) ** 2, axis=1)
        err[steps:] += np.sum(true[steps:] ** 2, axis=1)
        energy += np.sum(true ** 2, axis=1)
    return err / energy


def cmd_eval_pred(config, out_dir):
    if not config["data"] or not config["checkpoints"]:
        raise ConfigError("eval-pred requires 'data' and 'checkpoints'")
    _write_resolved(config, out_dir)
    ds = pde.load_dataset(config["data"])
    horizon = config["horizon_steps"]
    curves = {}
    for label, path in sorted(config["checkpoints"].items()):
        from .persist import load_arrays
        _, meta = load_arrays(path)
        if meta.get("kind") == "deeprom":
            model = dr.load_deeprom(path)
            predict = lambda x0, u, m=model: dr.rollout(m, x0, u)[0]
        else:
            rom = lr.load_linear_rom(path)
            predict = lambda x0, u, m=rom: lr.rom_rollout(m, x0, u)
        curves[label] = _nmse_curves(predict, ds, horizon)
    rows = []
    for label, nmse in curves.items():
        for t, value in enumerate(nmse):
            rows.append((label, t, value))
    with open(os.path.join(out_dir, "nmse.csv"), "w") as fh:
        fh.write("method,step,nmse\n")
        for label, t, value in rows:
            fh.write(f"{label},{t},{value!r}\n")
    with open(os.path.join(out_dir, "nmse.json"), "w") as fh:
        json.dump({label: curve.tolist() for label, curve in curves.items()},
                  fh, indent=2)
    report.render_nmse(curves, os.path.join(out_dir, "nmse.png"))
    return 0


def cmd_eval_ctrl(config, out_dir):
    if not config["controllers"] and not config["include_uncontrolled"]:
        raise ConfigError("eval-ctrl requires controllers or the uncontrolled run")
    _write_resolved(config, out_dir)
    sim = pde.Simulator()
    x0 = _x0_default()
    results = {}
    if config["include_uncontrolled"]:
        results["uncontrolled"] = ct.closed_loop_sim(
            lambda x: np.zeros(1), x0, config["horizon"], sim)
    from .persist import load_arrays, save_arrays
    for label, spec_entry in sorted(config["controllers"].items()):
        _, meta = load_arrays(spec_entry["checkpoint"])
        if meta.get("kind") == "deeproc":
            controller = ct.load_controller(spec_entry["checkpoint"])
            rom = dr.load_deeprom(spec_entry["rom"])
            policy = lambda x, c=controller, m=rom: ct.act(c, m, x)
        elif meta.get("kind") == "lqr":
            arrays, _ = load_arrays(spec_entry["checkpoint"])
            rom = lr.load_linear_rom(spec_entry["rom"])
            gain_ctl = ct.LqrController(gain=arrays["gain"], rom=rom,
                                        q_weight=float(meta["q_weight"]),
                                        r_weight=float(meta["r_weight"]))
            policy = lambda x, c=gain_ctl: ct.lqr_act(c, x)
        else:
            raise ConfigError(f"unrecognized controller checkpoint for {label!r}")
        results[label] = ct.closed_loop_sim(policy, x0, config["horizon"], sim)
    summary = {}
    for label, res in results.items():
        ct.export_closed_loop_csv(res, sim.params.dt,
                                  os.path.join(out_dir, f"trace_{label}.csv"))
        save_arrays(os.path.join(out_dir, f"states_{label}"),
                    {"states": res.states}, {"kind": "state-history", "label": label})
        report.render_state_history(res.states, sim.params.dt,
                                    os.path.join(out_dir, f"states_{label}.png"),
                                    title=label)
        summary[label] = {"final_mse": float(res.mse_trace[-1]),
                          "cumulative_actuation": res.actuation_cumulative}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    report.render_closed_loop(results, sim.params.dt,
                              os.path.join(out_dir, "closed_loop.png"))
    return 0


def cmd_modes(config, out_dir):
    if not config["checkpoint_a"] or not config["checkpoint_b"]:
        raise ConfigError("modes requires 'checkpoint_a' and 'checkpoint_b'")
    _write_resolved(config, out_dir)
    rom_a = lr.load_linear_rom(config["checkpoint_a"])
    rom_b = lr.load_linear_rom(config["checkpoint_b"])
    if rom_a.r_x != rom_b.r_x:
        raise ConfigError(f"mode count mismatch: {rom_a.r_x} vs {rom_b.r_x}")
    zeta = pde.Grid(nodes=rom_a.d.shape[0]).zeta
    set_a = lr.dynamic_modes(rom_a)
    set_b = lr.dynamic_modes(rom_b)
    lr.export_modes_csv(set_a, zeta, os.path.join(out_dir, "modes_a.csv"))
    lr.export_modes_csv(set_b, zeta, os.path.join(out_dir, "modes_b.csv"))
    match = lr.match_modes(set_a, set_b)
    with open(os.path.join(out_dir, "matching.json"), "w") as fh:
        json.dump(match, fh, indent=2)
    report.render_modes(zeta, {"a": set_a.modes, "b": set_b.modes},
                        os.path.join(out_dir, "modes.png"))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "train-ctrl": cmd_train_ctrl,
    "eval-pred": cmd_eval_pred,
    "eval-ctrl": cmd_eval_ctrl,
    "modes": cmd_modes,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="romctl",
        description="Reduced-order modeling and control pipeline")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override seed")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    out_dir = args.out or os.environ.get("ROMCTL_OUT", "runs/" + args.command)
    overrides = {"seed": args.seed} if "seed" in DEFAULTS[args.command] else {}
    try:
        config = _load_config(args.command, args.config, overrides)
        return COMMANDS[args.command](config, out_dir)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
