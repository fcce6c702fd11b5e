"""Configuration parsing and validation."""

import pytest

from mvtf.config import (DEFAULT_CONFIG, dataset_config, parse_config_text,
                         read_config, train_config)
from mvtf.errors import ConfigError


class TestParser:
    def test_nested_keys(self):
        tree = parse_config_text("a.b.c = 3\na.b.d = x\n")
        assert tree == {"a": {"b": {"c": 3, "d": "x"}}}

    def test_types(self):
        tree = parse_config_text(
            "i = 3\nf = 2.5\ns = hello\nb = true\ne = 1e-3\n")
        assert tree["i"] == 3 and isinstance(tree["i"], int)
        assert tree["f"] == 2.5
        assert tree["s"] == "hello"
        assert tree["b"] is True
        assert tree["e"] == 1e-3

    def test_comments_and_blanks(self):
        tree = parse_config_text("# header\n\nx = 1  # trailing\n")
        assert tree == {"x": 1}

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("just some words\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_config(tmp_path / "nope.cfg")


class TestTrainConfig:
    def test_default_config_is_valid(self):
        cfg, manifest, precision = train_config(parse_config_text(DEFAULT_CONFIG))
        assert manifest == "data/manifest.jsonl"
        assert cfg.hidden == 32
        assert cfg.n_blocks == 2
        assert cfg.embed_dim == 64
        assert cfg.strategy == "mvtf"
        assert precision == "f32"

    def test_missing_required_key_rejected(self):
        text = "\n".join(line for line in DEFAULT_CONFIG.splitlines()
                         if not line.startswith("train.seed"))
        with pytest.raises(ConfigError, match="train.seed"):
            train_config(parse_config_text(text))

    def test_bins_must_match_stft(self):
        text = DEFAULT_CONFIG.replace("model.F = 129", "model.F = 128")
        with pytest.raises(ConfigError, match="model.F"):
            train_config(parse_config_text(text))

    def test_bad_precision_rejected(self):
        text = DEFAULT_CONFIG.replace("train.precision = f32",
                                      "train.precision = f16")
        with pytest.raises(ConfigError):
            train_config(parse_config_text(text))


class TestDatasetConfig:
    def test_defaults(self):
        cfg = dataset_config(parse_config_text(DEFAULT_CONFIG))
        assert (cfg.n_train, cfg.n_val, cfg.n_test) == (200, 50, 50)
        assert cfg.speaker_pool == 16
        assert cfg.synth.dim == 64

    def test_overrides(self):
        cfg = dataset_config(parse_config_text(
            "data.train = 4\nsynth.dim = 8\nsynth.noise = 0.5\n"))
        assert cfg.n_train == 4
        assert cfg.synth.dim == 8
        assert cfg.synth.noise == 0.5
