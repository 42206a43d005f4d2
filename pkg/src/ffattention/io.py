"""On-disk formats: epochs CSV, JSON checkpoints and summaries.

JSON floats are written with ``repr`` precision, so a checkpoint round-trips
every parameter bit-for-bit.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import PARAM_NAMES, ModelParams, PoolingMode
from .optim import AdamState

EPOCH_COLUMNS = ("epoch", "task", "pooling", "length_spec", "lr", "seed",
                 "train_loss", "test_accuracy", "wall_seconds")
TIMING_COLUMNS = ("wall_seconds",)
CHECKPOINT_FORMAT = "ffattention-checkpoint/1"


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def epoch_rows(result) -> list:
    cfg = result.config
    return [
        {
            "epoch": r.epoch,
            "task": cfg.task.value,
            "pooling": cfg.pooling.value,
            "length_spec": str(cfg.lengths),
            "lr": repr(cfg.lr),
            "seed": cfg.seed,
            "train_loss": repr(r.train_loss),
            "test_accuracy": repr(r.test_accuracy),
            "wall_seconds": f"{r.wall_seconds:.3f}",
        }
        for r in result.reports
    ]


def render_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_epochs_csv(path, results) -> Path:
    rows = [row for res in results for row in epoch_rows(res)]
    return atomic_write(path, render_csv(rows, EPOCH_COLUMNS))


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def params_to_dict(params: ModelParams) -> dict:
    d = {"D": params.D, "pooling": params.pooling.value}
    d.update({name: getattr(params, name).tolist() for name in PARAM_NAMES})
    return d


def params_from_dict(d: dict) -> ModelParams:
    params = ModelParams(**{name: np.array(d[name], dtype=np.float64) for name in PARAM_NAMES},
                         pooling=PoolingMode(d["pooling"]))
    if params.D != d["D"]:
        raise ValueError(f"checkpoint declares D={d['D']} but tensors have D={params.D}")
    return params


def optimizer_to_dict(state: AdamState) -> dict:
    return {
        "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
        "epsilon": state.epsilon, "t": state.t,
        "m": {k: v.tolist() for k, v in state.m.items()},
        "v": {k: v.tolist() for k, v in state.v.items()},
    }


def optimizer_from_dict(d: dict) -> AdamState:
    return AdamState(
        lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], epsilon=d["epsilon"], t=d["t"],
        m={k: np.array(v, dtype=np.float64) for k, v in d["m"].items()},
        v={k: np.array(v, dtype=np.float64) for k, v in d["v"].items()},
    )


def checkpoint_dict(result) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": result.config.to_dict(),
        "epochs_done": len(result.reports),
        "params": params_to_dict(result.final_params),
        "optimizer": optimizer_to_dict(result.optimizer),
    }


def save_checkpoint(path, result) -> Path:
    return write_json(path, checkpoint_dict(result))


def load_checkpoint(path):
    """Return ``(config_dict, params, optimizer_state, epochs_done)``."""
    d = read_json(path)
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint ({d.get('format')!r})")
    return (d["config"], params_from_dict(d["params"]),
            optimizer_from_dict(d["optimizer"]), d["epochs_done"])


def result_dict(result, extra=None) -> dict:
    out = result.summary()
    out["reports"] = [
        {"epoch": r.epoch, "train_loss": r.train_loss, "test_accuracy": r.test_accuracy,
         "wall_seconds": r.wall_seconds}
        for r in result.reports
    ]
    if extra:
        out.update(extra)
    return out
