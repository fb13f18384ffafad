"""JSON run configuration: ``{"model": {...}, "train": {...}}``."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


def default_config_dict() -> dict:
    text = resources.files("llama_affinity").joinpath("configs/default.json").read_text()
    return json.loads(text)


def load_config(path=None, model_overrides=None, train_overrides=None) -> tuple[ModelConfig, TrainConfig]:
    """Packaged defaults, updated by the file at ``path``, then by explicit overrides."""
    cfg = default_config_dict()
    if path is not None:
        user = json.loads(Path(path).read_text())
        unknown = set(user) - {"model", "train"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg["model"].update(user.get("model", {}))
        cfg["train"].update(user.get("train", {}))
    cfg["model"].update({k: v for k, v in (model_overrides or {}).items() if v is not None})
    cfg["train"].update({k: v for k, v in (train_overrides or {}).items() if v is not None})
    return ModelConfig.from_dict(cfg["model"]), TrainConfig.from_dict(cfg["train"])
