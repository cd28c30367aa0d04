"""The joint network and its single-file checkpoint archive.

Checkpoints are ``.npz`` archives: one array per weight, named with its module
prefix (``alpha_net.``, ``refine.``, ``trimap_prop.``), plus a ``__header__``
entry holding UTF-8 JSON with the format version and model config.
"""
from __future__ import annotations

import dataclasses
import json

import numpy as np
import torch
import torch.nn as nn

from .alpha_net import AlphaNet
from .config import ModelConfig, model_config_from_dict
from .refine import Refiner
from .trimap_prop import TrimapPropagation

FORMAT_VERSION = 1
MODULE_NAMES = ("alpha_net", "refine", "trimap_prop")


class OTVM(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.alpha_net = AlphaNet(self.cfg)
        self.refine = Refiner(self.cfg)
        self.trimap_prop = TrimapPropagation(self.cfg, hidden_channels=self.cfg.refine_hidden)
        self.completed_stages = []

    def module_parameters(self, name):
        return dict(getattr(self, name).named_parameters())


def build_model(cfg=None, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return OTVM(cfg).to(dtype)


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, extra=None):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    header = {
        "format_version": FORMAT_VERSION,
        "preset": model.cfg.preset,
        "model": dataclasses.asdict(model.cfg),
        "channels": {"key": model.cfg.key_dim, "value": model.cfg.value_dim},
        "memory_inputs": sorted(model.trimap_prop.memory_inputs),
        "completed_stages": list(model.completed_stages),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
    }
    if extra:
        header.update(extra)
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def read_checkpoint(path):
    try:
        with np.load(path) as data:
            header = json.loads(bytes(data["__header__"]).decode("utf-8"))
            arrays = {k: data[k] for k in data.files if k != "__header__"}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')}")
    return header, arrays


def load_checkpoint(path, expected_preset=None):
    header, arrays = read_checkpoint(path)
    if expected_preset is not None and header["preset"] != expected_preset:
        raise CheckpointError(
            f"checkpoint preset {header['preset']!r} does not match config preset {expected_preset!r}"
        )
    cfg = model_config_from_dict(header["model"])
    dtype = getattr(torch, header.get("dtype", "float32"))
    model = OTVM(cfg).to(dtype)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.completed_stages = list(header.get("completed_stages", []))
    return model, header
