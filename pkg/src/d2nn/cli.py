"""Command-line entry point.

Subcommands: train, eval, sweep-depth, lego, perturb. A JSON config file
drives each run; every field is optional with documented defaults, unknown
keys are rejected, and the effective config is echoed to the output directory
so a run is reproducible from its artifacts alone. Exit codes: 0 ok,
1 runtime error, 2 config error, 3 data error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import metrics, network, training
from .errors import ConfigError, D2NNError, DataConsistencyError, FormatError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

_NETWORK_DEFAULTS = {
    "grid_n": 64,
    "num_layers": 5,
    "pitch": 0.5,
    "layer_spacing": 40.0,
    "input_to_first": None,
    "last_to_output": None,
    "layer_gaps": None,
    "encoding": "amplitude",
    "nonlinearity": {
        "kind": "linear",
        "kerr_gamma": 0.0,
        "sa_t_min": 0.1,
        "sa_t_max": 0.9,
        "sa_i_sat": 1.0,
    },
}

_TRAIN_DEFAULTS = {
    "epochs": 10,
    "batch_size": 32,
    "learning_rate": 1e-2,
    "optimizer": "adam",
    "seed": 0,
    "loss": "mse",
}

_DATA_DEFAULTS = {
    "source": "synthetic_two_blob",  # or "idx"
    "train_images": None,
    "train_labels": None,
    "test_images": None,
    "test_labels": None,
    "synthetic_samples": 200,
    "train_limit": None,
    "test_limit": None,
    "val_fraction": 0.0,
    "name": "dataset",
}

_EXPERIMENT_DEFAULTS = {
    "depths": [1, 3, 5],
    "epsilons": [0.0, 1.0, 4.0],
    "lego_new_layers": 1,
    "lego_insert": "append",
    "network": None,
}

_DEFAULTS = {
    "network": _NETWORK_DEFAULTS,
    "train": _TRAIN_DEFAULTS,
    "data": _DATA_DEFAULTS,
    "experiment": _EXPERIMENT_DEFAULTS,
    "threads": 1,
}


def _merge(defaults, user, prefix=""):
    out = {}
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = value
        elif isinstance(defaults[key], dict):
            raise ConfigError(f"config key {prefix + key!r} must be an object")
        else:
            out[key] = value
    merged = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            merged[key] = _merge(default, out.get(key, {}), prefix=f"{prefix}{key}.")
        else:
            merged[key] = out.get(key, default)
    return merged


def load_config(path, seed_override=None, threads_override=None):
    try:
        with open(path) as f:
            user = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _merge(_DEFAULTS, user)
    if seed_override is not None:
        cfg["train"]["seed"] = seed_override
    if threads_override is not None:
        cfg["threads"] = threads_override
    return cfg


def network_config_from(cfg):
    net = cfg["network"]
    try:
        return network.NetworkConfig(
            grid_n=net["grid_n"],
            num_layers=net["num_layers"],
            pitch=net["pitch"],
            layer_spacing=net["layer_spacing"],
            input_to_first=net["input_to_first"],
            last_to_output=net["last_to_output"],
            layer_gaps=net["layer_gaps"],
            encoding=net["encoding"],
            nonlinearity=network.nonlinearity_from_dict(net["nonlinearity"]),
        )
    except (D2NNError, ValueError) as e:
        raise ConfigError(f"invalid network config: {e}") from e


def train_config_from(cfg):
    t = cfg["train"]
    try:
        return training.TrainConfig(
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            learning_rate=t["learning_rate"],
            optimizer=t["optimizer"],
            seed=t["seed"],
            loss=t["loss"],
        )
    except D2NNError as e:
        raise ConfigError(f"invalid train config: {e}") from e


def _data_path(path):
    if path is None:
        raise DataConsistencyError("dataset path missing from config")
    if not os.path.isabs(path) and not os.path.exists(path):
        prefix = os.environ.get("D2NN_DATA_DIR")
        if prefix:
            candidate = os.path.join(prefix, path)
            if os.path.exists(candidate):
                return candidate
    if not os.path.exists(path):
        raise DataConsistencyError(f"dataset file not found: {path}")
    return path


def load_datasets(cfg, grid_n):
    """Returns (train_set, test_set) resampled to the optical grid."""
    d = cfg["data"]
    if d["source"] == "synthetic_two_blob":
        full = data_mod.synthetic_two_blob(d["synthetic_samples"], grid_n, cfg["train"]["seed"])
        streams = data_mod.split_and_batch(full, (0.8, 0.0, 0.2), 1, cfg["train"]["seed"])
        train_set, test_set = streams.train, streams.test
    elif d["source"] == "idx":
        train_set = data_mod.load_idx(_data_path(d["train_images"]), _data_path(d["train_labels"]))
        test_set = data_mod.load_idx(_data_path(d["test_images"]), _data_path(d["test_labels"]))
        train_set = data_mod.resample_dataset(train_set, grid_n)
        test_set = data_mod.resample_dataset(test_set, grid_n)
    else:
        raise ConfigError(f"unknown data.source {d['source']!r}")
    if d["train_limit"]:
        train_set = train_set.subset(slice(0, d["train_limit"]))
    if d["test_limit"]:
        test_set = test_set.subset(slice(0, d["test_limit"]))
    train_set.name = test_set.name = d["name"]
    return train_set, test_set


def _load_network(path):
    # a broken network file is a configuration problem (exit 2), not a data one
    try:
        return network.load_network(path)
    except FormatError as e:
        raise ConfigError(str(e)) from e
    except OSError as e:
        raise ConfigError(f"cannot read network {path}: {e}") from e


def echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.echo"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_history(history, out_dir):
    with open(os.path.join(out_dir, "history.csv"), "w") as f:
        f.write(training.history_to_csv(history))


def cmd_train(cfg, out_dir):
    config = network_config_from(cfg)
    tc = train_config_from(cfg)
    train_set, test_set = load_datasets(cfg, config.grid_n)
    rng = np.random.default_rng(tc.seed)
    layers = [network.DiffractiveLayer.phase_only(config.grid_n, rng) for _ in range(config.num_layers)]
    layers, history = training.train(config, layers, train_set, tc, val_set=test_set)
    echo_config(cfg, out_dir)
    network.save_network(os.path.join(out_dir, "network.bin"), config, layers)
    _write_history(history, out_dir)
    return EXIT_OK


def cmd_eval(cfg, out_dir, network_path):
    config, layers = _load_network(network_path)
    _, test_set = load_datasets(cfg, config.grid_n)
    row = metrics.evaluate(
        config, layers, test_set, seed=cfg["train"]["seed"], threads=cfg["threads"]
    )
    echo_config(cfg, out_dir)
    report = metrics.RunReport([row])
    report.write_csv(os.path.join(out_dir, "report.csv"))
    return EXIT_OK


def cmd_sweep_depth(cfg, out_dir):
    config = network_config_from(cfg)
    tc = train_config_from(cfg)
    train_set, test_set = load_datasets(cfg, config.grid_n)
    report, trained = metrics.depth_sweep(
        config,
        cfg["experiment"]["depths"],
        {train_set.name: (train_set, test_set)},
        tc,
        threads=cfg["threads"],
    )
    echo_config(cfg, out_dir)
    report.write_csv(os.path.join(out_dir, "report.csv"))
    report.write_plot_data(os.path.join(out_dir, "plots"))
    for (name, depth), (dconf, layers) in trained.items():
        network.save_network(os.path.join(out_dir, f"network_{name}_{depth}.bin"), dconf, layers)
    return EXIT_OK


def cmd_lego(cfg, out_dir, network_path):
    config, layers = _load_network(network_path)
    tc = train_config_from(cfg)
    train_set, test_set = load_datasets(cfg, config.grid_n)
    patched_config, stack, history = training.lego_patch(
        layers,
        cfg["experiment"]["lego_new_layers"],
        cfg["experiment"]["lego_insert"],
        config,
        train_set,
        tc,
        val_set=test_set,
    )
    baseline = metrics.evaluate(config, layers[: config.num_layers], test_set,
                                variant="lego_baseline", seed=tc.seed, threads=cfg["threads"])
    patched = metrics.evaluate(patched_config, stack, test_set,
                               variant="lego_patched", seed=tc.seed, threads=cfg["threads"])
    echo_config(cfg, out_dir)
    network.save_network(os.path.join(out_dir, "network.bin"), patched_config, stack)
    _write_history(history, out_dir)
    report = metrics.RunReport([baseline, patched])
    report.write_csv(os.path.join(out_dir, "report.csv"))
    report.write_plot_data(os.path.join(out_dir, "plots"))
    return EXIT_OK


def cmd_perturb(cfg, out_dir, network_path):
    config, layers = _load_network(network_path)
    _, test_set = load_datasets(cfg, config.grid_n)
    report, achieved = metrics.perturbation_sweep(
        config, layers, test_set, cfg["experiment"]["epsilons"],
        seed=cfg["train"]["seed"], threads=cfg["threads"],
    )
    echo_config(cfg, out_dir)
    report.write_csv(os.path.join(out_dir, "report.csv"))
    report.write_plot_data(os.path.join(out_dir, "plots"))
    with open(os.path.join(out_dir, "plots", "achieved_distance.dat"), "w") as f:
        for eps, mean_d in zip(cfg["experiment"]["epsilons"], achieved):
            f.write(f"{eps:.17g}\t{mean_d:.17g}\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="d2nn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "sweep-depth", "lego", "perturb"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker cap")
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        if name in ("eval", "lego", "perturb"):
            p.add_argument("--network", required=True, help="trained network file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, threads_override=args.threads)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.out, args.network)
        if args.command == "sweep-depth":
            return cmd_sweep_depth(cfg, args.out)
        if args.command == "lego":
            return cmd_lego(cfg, args.out, args.network)
        if args.command == "perturb":
            return cmd_perturb(cfg, args.out, args.network)
        return EXIT_RUNTIME
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataConsistencyError, FormatError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except D2NNError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
