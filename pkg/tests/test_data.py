"""Data harness: speaker synthesis, SNR-exact mixing, dataset construction,
split discipline, view selection, and the mixed-view injection."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvtf.data import (DatasetConfig, MixtureRecord, SynthSpeaker,
                       build_dataset, inject_view_segments, load_record_audio,
                       make_mixture, measure_snr_db, read_manifest,
                       select_training_views, synth_utterance)
from mvtf.errors import ConfigError, DegenerateInput, InputError
from mvtf.signal import si_sdr
from mvtf.tensor import Tensor
from mvtf.visual import SynthConfig, ViewEmbeddingSeq, VIEW_LABELS


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = DatasetConfig(n_train=6, n_val=3, n_test=3, speaker_pool=8,
                        duration_s=0.5, synth=SynthConfig(dim=8))
    records = build_dataset(cfg, out, seed=11)
    return out, records


class TestSpeakers:
    def test_distinct_seeds_distinct_voices(self):
        a = SynthSpeaker.create("a", 1)
        b = SynthSpeaker.create("b", 2)
        assert a.f0_hz != b.f0_hz
        assert a.formants_hz != b.formants_hz

    def test_utterance_deterministic(self):
        spk = SynthSpeaker.create("a", 1)
        np.testing.assert_array_equal(synth_utterance(spk, 0.5, 7),
                                      synth_utterance(spk, 0.5, 7))

    def test_utterance_rms(self):
        wave = synth_utterance(SynthSpeaker.create("a", 1), 1.0, 0)
        assert wave.shape == (16000,)
        assert abs(np.sqrt((wave ** 2).mean()) - 0.1) < 1e-9


class TestMixing:
    def test_equal_power_unit_scale(self, rng):
        t = rng.standard_normal(400)
        i = rng.standard_normal(400)
        i *= np.sqrt((t ** 2).mean() / (i ** 2).mean())
        mixture = make_mixture(t, i, 0.0)
        np.testing.assert_allclose(mixture, t + i, rtol=1e-12)

    @pytest.mark.parametrize("snr", [-10.0, -3.3, 0.0, 7.1, 10.0])
    def test_remeasured_snr_exact(self, rng, snr):
        t = rng.standard_normal(500)
        i = rng.standard_normal(500)
        mixture = make_mixture(t, i, snr)
        assert abs(measure_snr_db(t, mixture - t) - snr) < 1e-6

    def test_zero_power_rejected(self, rng):
        with pytest.raises(DegenerateInput):
            make_mixture(np.zeros(100), rng.standard_normal(100), 0.0)


class TestDataset:
    def test_record_counts_and_split_tags(self, corpus):
        _, records = corpus
        by_split = {s: [r for r in records if r.split == s]
                    for s in ("train", "val", "test")}
        assert len(by_split["train"]) == 6
        assert len(by_split["val"]) == 3
        assert len(by_split["test"]) == 3

    def test_speaker_sets_pairwise_disjoint(self, corpus):
        _, records = corpus
        speakers = {}
        for split in ("train", "val", "test"):
            speakers[split] = set()
            for rec in records:
                if rec.split == split:
                    speakers[split].update(rec.speaker_ids())
        assert speakers["train"] & speakers["val"] == set()
        assert speakers["train"] & speakers["test"] == set()
        assert speakers["val"] & speakers["test"] == set()

    def test_utterances_unique_per_record(self, corpus):
        _, records = corpus
        paths = [r.target_path for r in records] + [r.interferer_path for r in records]
        assert len(paths) == len(set(paths))

    def test_target_and_interferer_speakers_differ(self, corpus):
        _, records = corpus
        for rec in records:
            t, i = rec.speaker_ids()
            assert t != i

    def test_snr_in_declared_range(self, corpus):
        _, records = corpus
        for rec in records:
            assert -10.0 <= rec.snr_db <= 10.0

    def test_all_seven_views_present(self, corpus):
        _, records = corpus
        for rec in records:
            assert set(rec.view_paths) == set(VIEW_LABELS)

    def test_manifest_roundtrip_and_remeasured_snr(self, corpus):
        out, records = corpus
        loaded = read_manifest(out / "manifest.jsonl")
        assert [r.id for r in loaded] == [r.id for r in records]
        for rec in loaded[:4]:
            mixture, target = load_record_audio(rec, out)
            assert abs(measure_snr_db(target, mixture - target) - rec.snr_db) < 1e-6

    def test_manifest_fields_exact(self, corpus):
        out, _ = corpus
        with open(out / "manifest.jsonl", encoding="utf-8") as fh:
            entry = json.loads(fh.readline())
        assert set(entry) == {"id", "target_path", "interferer_path",
                              "snr_db", "view_paths", "split"}

    def test_determinism_byte_identical(self, tmp_path):
        cfg = DatasetConfig(n_train=3, n_val=2, n_test=2, speaker_pool=8,
                            duration_s=0.25, synth=SynthConfig(dim=4))
        build_dataset(cfg, tmp_path / "a", seed=5)
        build_dataset(cfg, tmp_path / "b", seed=5)
        a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert a == b

    def test_small_pool_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            build_dataset(DatasetConfig(speaker_pool=5), tmp_path, seed=0)


class TestViewSelection:
    def test_front3_always(self):
        for seed in range(5):
            assert select_training_views(
                "front3", np.random.default_rng(seed)) == ["front"] * 3

    def test_random3_distinct(self):
        for seed in range(20):
            labels = select_training_views("random3", np.random.default_rng(seed))
            assert len(labels) == 3
            assert len(set(labels)) == 3
            assert set(labels) <= set(VIEW_LABELS)

    def test_repeat1_single_label(self):
        for seed in range(20):
            labels = select_training_views("repeat1", np.random.default_rng(seed))
            assert len(labels) == 3
            assert len(set(labels)) == 1

    def test_single_view_strategies(self):
        assert select_training_views("front1", np.random.default_rng(0)) == ["front"]
        assert len(select_training_views("random1", np.random.default_rng(0))) == 1

    def test_unknown_rejected(self):
        with pytest.raises(InputError):
            select_training_views("all7", np.random.default_rng(0))


def _pair_of_sequences(rng, t_v=25, dim=6):
    front = ViewEmbeddingSeq(Tensor(rng.standard_normal((t_v, dim))), "front")
    alt = ViewEmbeddingSeq(Tensor(rng.standard_normal((t_v, dim))), "left30")
    return front, alt


class TestInjection:
    def test_contiguous_window_inside_bounds(self, rng):
        t_v = 25
        front, alt = _pair_of_sequences(rng, t_v)
        for trial in range(100):
            out = inject_view_segments(front, alt, np.random.default_rng(trial))
            changed = np.nonzero((out.embeddings.data != front.embeddings.data)
                                 .any(axis=1))[0]
            start, end = changed[0], changed[-1] + 1
            length = end - start
            # contiguous
            assert (changed == np.arange(start, end)).all()
            assert np.ceil(0.2 * t_v) <= length <= np.floor(0.4 * t_v)
            assert start >= np.ceil(0.3 * t_v)
            assert end <= np.floor(0.8 * t_v)

    def test_window_copies_alternate_and_preserves_rest(self, rng):
        front, alt = _pair_of_sequences(rng)
        out = inject_view_segments(front, alt, np.random.default_rng(0))
        changed = np.nonzero((out.embeddings.data != front.embeddings.data)
                             .any(axis=1))[0]
        start, end = changed[0], changed[-1] + 1
        np.testing.assert_array_equal(out.embeddings.data[start:end],
                                      alt.embeddings.data[start:end])
        mask = np.ones(25, dtype=bool)
        mask[start:end] = False
        np.testing.assert_array_equal(out.embeddings.data[mask],
                                      front.embeddings.data[mask])

    def test_deterministic_in_seed(self, rng):
        front, alt = _pair_of_sequences(rng)
        a = inject_view_segments(front, alt, np.random.default_rng(9))
        b = inject_view_segments(front, alt, np.random.default_rng(9))
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)

    def test_too_short_rejected(self, rng):
        front, alt = _pair_of_sequences(rng, t_v=2)
        with pytest.raises(DegenerateInput):
            inject_view_segments(front, alt, np.random.default_rng(0))

    def test_mismatched_shapes_rejected(self, rng):
        front, _ = _pair_of_sequences(rng, t_v=25)
        _, alt = _pair_of_sequences(rng, t_v=30)
        with pytest.raises(InputError):
            inject_view_segments(front, alt, np.random.default_rng(0))


def test_mixture_si_sdr_tracks_snr(rng):
    # With near-orthogonal synthetic sources the mixture's SI-SDR stays
    # close to the mixing SNR.
    spk_t = SynthSpeaker.create("t", 10)
    spk_i = SynthSpeaker.create("i", 20)
    t = synth_utterance(spk_t, 1.0, 0)
    i = synth_utterance(spk_i, 1.0, 1)
    for snr in (-8.0, 0.0, 8.0):
        measured = si_sdr(make_mixture(t, i, snr), t)
        assert abs(measured - snr) < 1.5


@settings(max_examples=40, deadline=None)
@given(st.floats(-10.0, 10.0), st.integers(0, 2 ** 20))
def test_snr_exactness_property(snr, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal(256)
    i = rng.standard_normal(256)
    mixture = make_mixture(t, i, snr)
    assert abs(measure_snr_db(t, mixture - t) - snr) < 1e-6
