"""JSON experiment configs: one document, strict keys, a version field.

Unknown keys anywhere in the document are errors, so a typo in an
experiment file fails loudly instead of silently training the wrong
thing. The ``network`` section may name a ``preset`` and then override
individual fields.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .network import NetworkConfig, preset
from .train import DataConfig, TrainConfig

CONFIG_VERSION = 1

_TOP_KEYS = {"version", "seed", "network", "train", "data"}
_NETWORK_KEYS = set(NetworkConfig.__dataclass_fields__) | {"preset"}
_TRAIN_KEYS = {
    "epochs", "batch_size", "base_lr", "momentum", "weight_decay",
    "label_smoothing", "mixup_alpha", "decay_bn_and_bias", "precision",
    "augment_pad", "flip_prob", "normalize_mean", "normalize_std",
}
_DATA_KEYS = set(DataConfig.__dataclass_fields__)


def load_document(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")


def _check_version(doc: dict) -> None:
    _check_keys(doc, _TOP_KEYS, "top-level")
    if "version" not in doc:
        raise ConfigError("config needs a 'version' field")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {doc['version']!r}")


def parse_network(doc: dict) -> NetworkConfig:
    """Network config from a full document's ``network`` section."""
    _check_version(doc)
    section = doc.get("network")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'network' object")
    _check_keys(section, _NETWORK_KEYS, "network")
    section = dict(section)
    preset_name = section.pop("preset", None)
    if preset_name is not None:
        cfg = preset(preset_name)
        for key, value in section.items():
            setattr(cfg, key, value)
        cfg.__post_init__()
    else:
        required = {"block_type", "stage_blocks", "base_w"}
        missing = sorted(required - set(section))
        if missing:
            raise ConfigError(f"network config missing keys: {missing}")
        cfg = NetworkConfig(**section)
    cfg.validate()
    return cfg


def parse_train(doc: dict) -> TrainConfig:
    """Full training config: network + train + data sections."""
    network = parse_network(doc)
    train_section = doc.get("train", {})
    data_section = doc.get("data", {})
    if not isinstance(train_section, dict) or not isinstance(data_section, dict):
        raise ConfigError("'train' and 'data' must be objects")
    _check_keys(train_section, _TRAIN_KEYS, "train")
    _check_keys(data_section, _DATA_KEYS, "data")

    train_section = dict(train_section)
    for key in ("normalize_mean", "normalize_std"):
        if key in train_section:
            train_section[key] = tuple(train_section[key])

    cfg = TrainConfig(
        network=network,
        data=DataConfig(**data_section),
        seed=int(doc.get("seed", 0)),
        **train_section,
    )
    cfg.validate()
    return cfg
