"""Run configuration: a sectioned ``key = value`` text file with total validation."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Optional

from .augment import MODES, AugmentConfig
from .data import GRAY, RGB, STROKES, Dataset, SamplePipeline, load_cifar_binary, load_idx_images, load_strokes, \
    load_unipen, split_first_per_class
from .encoding import EncodingConfig
from .network import FAMILIES, ConfigError, NetworkSpec, build_network
from .training import TrainConfig

FORMATS = ("strokes", "unipen", "idx", "cifar")


@dataclass
class NetworkConfig:
    family: str = "deepcnet"
    levels: int = 4
    k: int = 20
    features: int = 1
    classes: int = 10
    dropout: tuple = ()


@dataclass
class DataConfig:
    format: str = "strokes"
    train: Optional[str] = None
    test: Optional[str] = None
    train_labels: Optional[str] = None
    test_labels: Optional[str] = None
    label_bytes: int = 1
    split: Optional[int] = None  # first N samples per class train, rest test
    character_scale: Optional[int] = None
    limit_train: Optional[int] = None


@dataclass
class OutputConfig:
    checkpoint_dir: Optional[str] = None
    metrics: Optional[str] = None


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def build_spec(self) -> NetworkSpec:
        n = self.network
        return build_network(n.family, n.levels, n.k, n.features, n.classes, n.dropout)

    @property
    def kind(self) -> str:
        return {"strokes": STROKES, "unipen": STROKES, "idx": GRAY, "cifar": RGB}[self.data.format]

    def encoding(self) -> EncodingConfig:
        n = self.network
        size = 3 * 2 ** n.levels
        if self.kind == STROKES:
            return EncodingConfig(size, self.data.character_scale or 2 ** n.levels, n.features == 9)
        return EncodingConfig(size, min(size, self.data.character_scale or size))

    def pipeline(self, augment: bool = True) -> SamplePipeline:
        return SamplePipeline(self.kind, self.encoding(), self.augment if augment else None)

    def load_data(self) -> tuple[Dataset, Optional[Dataset]]:
        d, c = self.data, self.network.classes
        if d.format in ("strokes", "unipen"):
            load = load_strokes if d.format == "strokes" else (lambda p, r: load_unipen(p, c, r))
            train = load(d.train, "train")
            test = load(d.test, "test") if d.test else None
            if d.split:
                train, test = split_first_per_class(train, d.split)
        elif d.format == "idx":
            train = load_idx_images(d.train, d.train_labels, c, "train")
            test = load_idx_images(d.test, d.test_labels, c, "test") if d.test else None
        else:
            train = load_cifar_binary(d.train, d.label_bytes, c, "train")
            test = load_cifar_binary(d.test, d.label_bytes, c, "test") if d.test else None
        if d.limit_train:
            train = train.subset(range(min(d.limit_train, len(train))))
        for ds in (train, test):
            if ds is not None and ds.num_classes != c:
                raise ConfigError(f"network.classes: {c} but data declares {ds.num_classes} classes")
        return train, test


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}") from None
    errors: list[str] = []

    def get(section, key, conv, default):
        if not cp.has_option(section, key) or cp.get(section, key).strip() == "":
            return default
        raw = cp.get(section, key).strip()
        try:
            return conv(raw)
        except ValueError as e:
            errors.append(f"{section}.{key}: cannot parse {raw!r} ({e})")
            return default

    def path(section, key):
        v = get(section, key, str, None)
        return v if v is None or os.path.isabs(v) else os.path.normpath(os.path.join(base_dir, v))

    known = {"network", "data", "augment", "train", "output"}
    for s in cp.sections():
        if s not in known:
            errors.append(f"{s}: unknown section")

    net = NetworkConfig(
        family=get("network", "family", str, "deepcnet"),
        levels=get("network", "levels", int, 4),
        k=get("network", "k", int, 20),
        features=get("network", "features", int, 1),
        classes=get("network", "classes", int, 10),
        dropout=get("network", "dropout", _floats, ()),
    )
    if net.family not in FAMILIES:
        errors.append(f"network.family: expected one of {FAMILIES}, got {net.family!r}")
    for key in ("levels", "k", "features", "classes"):
        if getattr(net, key) < 1:
            errors.append(f"network.{key}: must be >= 1")
    if net.dropout and len(net.dropout) != net.levels + 2:
        errors.append(f"network.dropout: expected {net.levels + 2} values (levels+2), got {len(net.dropout)}")
    if any(not 0 <= p < 1 for p in net.dropout):
        errors.append("network.dropout: every value must lie in [0, 1)")

    data = DataConfig(
        format=get("data", "format", str, "strokes"),
        train=path("data", "train"), test=path("data", "test"),
        train_labels=path("data", "train_labels"), test_labels=path("data", "test_labels"),
        label_bytes=get("data", "label_bytes", int, 1),
        split=get("data", "split", int, None),
        character_scale=get("data", "character_scale", int, None),
        limit_train=get("data", "limit_train", int, None),
    )
    if data.format not in FORMATS:
        errors.append(f"data.format: expected one of {FORMATS}, got {data.format!r}")
    elif data.format in ("strokes", "unipen") and net.features not in (1, 9):
        errors.append(f"network.features: stroke data encodes M=1 or M=9, got {net.features}")
    elif data.format == "idx" and net.features != 1:
        errors.append(f"network.features: IDX images have 1 feature, got {net.features}")
    elif data.format == "cifar" and net.features != 3:
        errors.append(f"network.features: CIFAR images have 3 features, got {net.features}")
    if data.format == "idx" and data.train and not data.train_labels:
        errors.append("data.train_labels: required for format idx")
    if data.format == "idx" and data.test and not data.test_labels:
        errors.append("data.test_labels: required for format idx")
    if data.label_bytes not in (1, 2):
        errors.append("data.label_bytes: must be 1 (CIFAR-10) or 2 (CIFAR-100)")
    if data.character_scale is not None and not 1 <= data.character_scale <= 3 * 2 ** net.levels:
        errors.append(f"data.character_scale: must lie in [1, {3 * 2 ** net.levels}]")

    mode = get("augment", "mode", str, "none")
    if mode not in MODES:
        errors.append(f"augment.mode: expected one of {MODES}, got {mode!r}")
        mode = "none"
    default_shift = 2 ** max(net.levels - 2, 0) if data.format in ("strokes", "unipen") else 2
    scale = get("augment", "scale", _floats, (0.8, 1.2))
    if len(scale) != 2 or not 0 < scale[0] <= scale[1]:
        errors.append("augment.scale: expected 'lo, hi' with 0 < lo <= hi")
        scale = (0.8, 1.2)
    shift = get("augment", "max_shift", int, default_shift)
    if shift < 0:
        errors.append("augment.max_shift: must be >= 0")
        shift = 0
    aug = AugmentConfig(mode, shift, get("augment", "rotation", float, 0.2), tuple(scale),
                        get("augment", "shear", float, 0.2))

    tkw = dict(
        epochs=get("train", "epochs", int, 10), batch_size=get("train", "batch_size", int, 32),
        learning_rate=get("train", "learning_rate", float, 0.01), lr_decay=get("train", "lr_decay", float, 0.98),
        momentum=get("train", "momentum", float, 0.9), seed=get("train", "seed", int, 0),
        checkpoint_interval=get("train", "checkpoint_interval", int, 0),
        exact_ground=get("train", "exact_ground", _bool, True),
    )
    if tkw["learning_rate"] <= 0:
        errors.append("train.learning_rate: must be > 0")
    if not 0 <= tkw["momentum"] < 1:
        errors.append("train.momentum: must lie in [0, 1)")
    if tkw["batch_size"] < 1:
        errors.append("train.batch_size: must be >= 1")
    if tkw["epochs"] < 0:
        errors.append("train.epochs: must be >= 0")
    out = OutputConfig(path("output", "checkpoint_dir"), path("output", "metrics"))

    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(net, data, aug, TrainConfig(**tkw), out)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
