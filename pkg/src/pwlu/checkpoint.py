"""Self-describing binary checkpoint for models and training state.

File layout (documented so third-party tools can parse it):

    bytes 0..7    magic b"PWLUCKP1"
    bytes 8..11   header length H, little-endian uint32
    bytes 12..12+H-1   header, UTF-8 JSON
    remainder     raw little-endian float64 arrays, concatenated

The JSON header carries a version tag, the trainer scalars (iteration,
epoch-loss accumulators, batch size, schedule fields, generator states,
recorded metric rows) and a layer manifest.  Each manifest entry lists its
arrays as (name, shape) pairs; the binary tail stores those arrays in
manifest order, row-major.  Saving, loading, and saving again yields a
byte-identical file.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .kernel import PwluParams
from .layers import Conv2d, Dense, Model, PwluActivation, Relu, Swish
from .optim import TrainSchedule
from .stats import RunningStats
from .trainer import Trainer

MAGIC = b"PWLUCKP1"
VERSION = 1


def _layer_manifest(layer):
    if isinstance(layer, Dense):
        meta = {"type": "dense", "name": layer.name,
                "in_dim": layer.weight.shape[0], "out_dim": layer.weight.shape[1]}
        arrays = [("weight", layer.weight), ("bias", layer.bias),
                  ("v_weight", layer.v_weight), ("v_bias", layer.v_bias)]
    elif isinstance(layer, Conv2d):
        meta = {"type": "conv", "name": layer.name,
                "out_ch": layer.weight.shape[0], "in_ch": layer.weight.shape[1],
                "ksize": layer.ksize, "padding": layer.padding}
        arrays = [("weight", layer.weight), ("bias", layer.bias),
                  ("v_weight", layer.v_weight), ("v_bias", layer.v_bias)]
    elif isinstance(layer, Relu):
        meta, arrays = {"type": "relu", "name": layer.name}, []
    elif isinstance(layer, Swish):
        meta, arrays = {"type": "swish", "name": layer.name}, []
    elif isinstance(layer, PwluActivation):
        meta = {
            "type": "pwlu", "name": layer.name, "granularity": layer.granularity,
            "n_channels": layer.n_channels,
            "n_intervals": layer.units[0].n_intervals,
            "frozen": layer.frozen, "collecting": layer.collecting,
            "stats": [{"mean": s.mean, "std": s.std, "count": s.update_count}
                      for s in layer.stats],
            "reservoir_seen": [r.seen for r in layer.reservoirs],
            "reservoir_capacity": layer.reservoirs[0].capacity,
            "reservoir_rng": [r.rng.bit_generator.state for r in layer.reservoirs],
        }
        arrays = []
        for u, params in enumerate(layer.units):
            edge = np.array([params.left_boundary, params.right_boundary,
                             params.left_slope, params.right_slope])
            v = layer._velocity[u]
            v_edge = np.array([v["b_l"], v["b_r"], v["k_l"], v["k_r"]])
            arrays += [
                (f"unit{u}_edges", edge),
                (f"unit{u}_y", params.y_points),
                (f"unit{u}_v_edges", v_edge),
                (f"unit{u}_v_y", v["y"]),
                (f"unit{u}_reservoir", layer.reservoirs[u].buffer),
            ]
    else:
        raise TypeError(f"cannot checkpoint layer type {type(layer).__name__}")
    meta["arrays"] = [[name, list(arr.shape)] for name, arr in arrays]
    return meta, arrays


def _rebuild_layer(meta, arrays):
    dummy_rng = np.random.default_rng(0)
    kind = meta["type"]
    if kind == "dense":
        layer = Dense(meta["in_dim"], meta["out_dim"], dummy_rng, name=meta["name"])
        layer.weight, layer.bias, layer.v_weight, layer.v_bias = arrays
    elif kind == "conv":
        layer = Conv2d(meta["in_ch"], meta["out_ch"], meta["ksize"], dummy_rng,
                       padding=meta["padding"], name=meta["name"])
        layer.weight, layer.bias, layer.v_weight, layer.v_bias = arrays
    elif kind == "relu":
        layer = Relu(name=meta["name"])
    elif kind == "swish":
        layer = Swish(name=meta["name"])
    elif kind == "pwlu":
        n = meta["n_intervals"]
        layer = PwluActivation(
            n_channels=meta["n_channels"], n_intervals=n,
            granularity=meta["granularity"], frozen=meta["frozen"],
            collecting=meta["collecting"], name=meta["name"],
        )
        per_unit = 5
        for u in range(layer.n_units):
            edge, y, v_edge, v_y, buf = arrays[u * per_unit:(u + 1) * per_unit]
            layer.units[u] = PwluParams(
                n_intervals=n, left_boundary=edge[0], right_boundary=edge[1],
                y_points=y, left_slope=edge[2], right_slope=edge[3],
            )
            layer._velocity[u] = {"b_l": float(v_edge[0]), "b_r": float(v_edge[1]),
                                  "k_l": float(v_edge[2]), "k_r": float(v_edge[3]),
                                  "y": v_y}
            s = meta["stats"][u]
            layer.stats[u] = RunningStats(mean=s["mean"], std=s["std"],
                                          update_count=s["count"])
            res = layer.reservoirs[u]
            res.buffer = buf
            res.seen = meta["reservoir_seen"][u]
            res.rng.bit_generator.state = meta["reservoir_rng"][u]
    else:
        raise ValueError(f"unknown layer type {kind!r} in checkpoint")
    return layer


def save_checkpoint(path, trainer: Trainer) -> None:
    sched = trainer.schedule
    manifest = []
    all_arrays = []
    for layer in trainer.model.layers:
        meta, arrays = _layer_manifest(layer)
        manifest.append(meta)
        all_arrays.extend(arr for _, arr in arrays)

    header = {
        "version": VERSION,
        "t": trainer.t,
        "batch_size": trainer.batch_size,
        "epoch_loss_sum": trainer.epoch_loss_sum,
        "epoch_loss_count": trainer.epoch_loss_count,
        "schedule": {
            "total_iterations": sched.total_iterations,
            "realign_iteration": sched.realign_iteration,
            "base_lr": sched.base_lr,
            "momentum": sched.momentum,
            "weight_decay": sched.weight_decay,
            "warmup_frac": sched.warmup_frac,
            "seed": sched.seed,
        },
        "rng_state": trainer.rng.bit_generator.state,
        "metrics": trainer.metrics,
        "layers": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in all_arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_checkpoint(path):
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header['version']}")
        layers = []
        for meta in header["layers"]:
            arrays = []
            for _, shape in meta["arrays"]:
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).copy()
                arrays.append(arr)
            layers.append(_rebuild_layer(meta, arrays))
    return header, layers


def load_model(path) -> Model:
    """Rebuild just the model, without any training state."""
    _, layers = _read_checkpoint(path)
    return Model(layers)


def load_checkpoint(path, train_features, train_labels,
                    test_features=None, test_labels=None) -> Trainer:
    """Rebuild a trainer mid-run.  Datasets are supplied by the caller."""
    header, layers = _read_checkpoint(path)
    sched = TrainSchedule(**header["schedule"])
    trainer = Trainer(Model(layers), sched, train_features, train_labels,
                      batch_size=header["batch_size"],
                      test_features=test_features, test_labels=test_labels)
    trainer.t = header["t"]
    trainer.epoch_loss_sum = header["epoch_loss_sum"]
    trainer.epoch_loss_count = header["epoch_loss_count"]
    trainer.metrics = header["metrics"]
    trainer.rng.bit_generator.state = header["rng_state"]
    return trainer
