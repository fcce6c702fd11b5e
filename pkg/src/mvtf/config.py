"""One human-readable configuration format for the whole pipeline:
``section.key = value`` lines with ``#`` comments.

The same file feeds data generation and training; each stage validates the
keys it needs. All defaults live here.
"""

from __future__ import annotations

import os

from .data import DatasetConfig
from .errors import ConfigError
from .training import TrainConfig
from .visual import SynthConfig

REQUIRED_TRAIN_KEYS = (
    "data.manifest",
    "model.F", "model.H", "model.blocks", "model.D",
    "fusion.strategy",
    "train.lr", "train.batch", "train.max_epochs", "train.seed",
    "train.view_strategy",
)


def _parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``a.b.c = value`` lines into a nested dict."""
    root: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        parts = [p.strip() for p in key.strip().split(".")]
        if not all(parts):
            raise ConfigError(f"line {lineno}: malformed key {key.strip()!r}")
        node = root
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key.strip()!r} collides "
                                  "with a scalar key")
        node[parts[-1]] = _parse_value(value)
    return root


def read_config(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _get(tree: dict, dotted: str, default=None, required: bool = False):
    node = tree
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing required config key {dotted!r}")
            return default
        node = node[part]
    return node


def synth_config(tree: dict) -> SynthConfig:
    return SynthConfig(
        dim=_get(tree, "synth.dim", 64),
        fps=_get(tree, "synth.fps", 25),
        noise=float(_get(tree, "synth.noise", 1.0)),
        distortion=bool(_get(tree, "synth.distortion", True)),
        content_seed=_get(tree, "synth.content_seed", 2077),
    )


def dataset_config(tree: dict) -> DatasetConfig:
    return DatasetConfig(
        n_train=_get(tree, "data.train", 200),
        n_val=_get(tree, "data.val", 50),
        n_test=_get(tree, "data.test", 50),
        speaker_pool=_get(tree, "data.speakers", 16),
        duration_s=float(_get(tree, "data.duration", 1.0)),
        synth=synth_config(tree),
    )


def train_config(tree: dict) -> tuple[TrainConfig, str, str | None]:
    """Build a TrainConfig from a parsed tree. Returns the config, the
    manifest path, and an optional precision override ('f32'/'f64')."""
    for key in REQUIRED_TRAIN_KEYS:
        _get(tree, key, required=True)
    n_fft = _get(tree, "stft.n_fft", 256)
    hop = _get(tree, "stft.hop", 128)
    f = _get(tree, "model.F")
    if f != n_fft // 2 + 1:
        raise ConfigError(f"model.F = {f} does not match the STFT "
                          f"(n_fft {n_fft} gives {n_fft // 2 + 1} bins)")
    precision = _get(tree, "train.precision", None)
    if precision is not None and precision not in ("f32", "f64"):
        raise ConfigError("train.precision must be f32 or f64")
    cfg = TrainConfig(
        n_fft=n_fft,
        hop=hop,
        hidden=_get(tree, "model.H"),
        n_blocks=_get(tree, "model.blocks"),
        embed_dim=_get(tree, "model.D"),
        kernel=_get(tree, "model.kernel", 3),
        strategy=_get(tree, "fusion.strategy"),
        lr=float(_get(tree, "train.lr")),
        batch=_get(tree, "train.batch"),
        max_epochs=_get(tree, "train.max_epochs"),
        seed=_get(tree, "train.seed"),
        view_strategy=_get(tree, "train.view_strategy"),
        val_view_strategy=_get(tree, "train.val_view_strategy", "front3"),
        clip_norm=float(_get(tree, "train.clip_norm", 1.0)),
    )
    return cfg, _get(tree, "data.manifest"), precision


DEFAULT_CONFIG = """\
# Data generation
data.manifest = data/manifest.jsonl
data.train = 200
data.val = 50
data.test = 50
data.speakers = 16
data.duration = 1.0
synth.dim = 64
synth.fps = 25
synth.noise = 1.0
synth.distortion = true

# Model
stft.n_fft = 256
stft.hop = 128
model.F = 129
model.H = 32
model.blocks = 2
model.D = 64
model.kernel = 3
fusion.strategy = mvtf

# Training. The protocol default learning rate is 1e-3; 3e-3 is the
# calibrated desk-scale value for this corpus size and batch count.
train.lr = 3e-3
train.batch = 8
train.max_epochs = 15
train.seed = 0
train.view_strategy = random3
train.val_view_strategy = front3
train.clip_norm = 1.0
train.precision = f32
"""
