"""Checkpoints: every parameter plus the model config and seed in one ``.npz``."""

import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError
from .model import ModelConfig, build_model

_META = "__meta__"


def save_checkpoint(path, net, seed, extra=None):
    """Write parameters as float64 arrays; config and seed go in a JSON entry."""
    meta = {"model": net.cfg.to_dict(), "seed": int(seed), "extra": extra or {}}
    arrays = {name: p.data for name, p in net.named_parameters()}
    if _META in arrays:
        raise ConfigError(f"parameter name {_META!r} is reserved")
    arrays[_META] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Rebuild the network; returns ``(net, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise LoadError(f"{path}: unreadable checkpoint ({exc})") from None
    if _META not in arrays:
        raise LoadError(f"{path}: no config entry")
    meta = json.loads(str(arrays.pop(_META)))
    try:
        cfg = ModelConfig.from_dict(meta["model"])
    except (TypeError, KeyError, ConfigError) as exc:
        raise LoadError(f"{path}: bad model config ({exc})") from None
    net = build_model(cfg, meta.get("seed", 0))
    net.load_state_dict(arrays)
    return net, meta
