"""Synthetic two-speaker corpus: seeded speaker models, SNR-controlled
mixing, split management, view-selection strategies, and the mixed-view
robustness transform.

Speakers are filtered harmonic-plus-noise sources with per-speaker
formant-like resonances; utterances are one-second bursts with a random
syllable-like amplitude envelope. Everything is derived from stable hashes
of (seed, record id), so record generation is order-independent and two
runs with the same configuration produce byte-identical manifests.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.signal

from .errors import ConfigError, DegenerateInput, InputError
from .signal import SAMPLE_RATE, read_wav, write_wav
from .visual import (SynthConfig, ViewEmbeddingSeq, VIEW_LABELS,
                     save_embeddings, stable_seed, synth_view_embeddings)
from .tensor import Tensor

SNR_RANGE_DB = (-10.0, 10.0)


@dataclass
class SynthSpeaker:
    """A seeded voice: pitch range, formant resonances, and harmonic/noise
    balance."""
    speaker_id: str
    generator_seed: int
    f0_hz: float = 0.0
    formants_hz: tuple = ()
    bandwidths_hz: tuple = ()
    harmonic_mix: float = 0.0

    @staticmethod
    def create(speaker_id: str, generator_seed: int) -> "SynthSpeaker":
        rng = np.random.default_rng(generator_seed)
        f0 = float(np.exp(rng.uniform(np.log(90.0), np.log(260.0))))
        formants = (rng.uniform(300, 900), rng.uniform(900, 2200),
                    rng.uniform(2200, 3800))
        bands = tuple(rng.uniform(80, 300) for _ in range(3))
        return SynthSpeaker(
            speaker_id=speaker_id,
            generator_seed=generator_seed,
            f0_hz=f0,
            formants_hz=tuple(float(f) for f in formants),
            bandwidths_hz=tuple(float(b) for b in bands),
            harmonic_mix=float(rng.uniform(0.6, 0.95)),
        )


def synth_utterance(speaker: SynthSpeaker, duration_s: float, utt_seed: int
                    ) -> np.ndarray:
    """One utterance: pitched harmonic source plus noise, shaped by the
    speaker's formant filters and a bursty amplitude envelope, RMS 0.1."""
    rng = np.random.default_rng(stable_seed("utt", speaker.generator_seed, utt_seed))
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    drift = rng.uniform(0.9, 1.1)
    vibrato = 0.05 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = speaker.f0_hz * drift * (1.0 + vibrato)
    phase = np.cumsum(f0) / SAMPLE_RATE
    harmonic = np.zeros(n)
    for k in range(1, 21):
        harmonic += np.sin(2 * np.pi * k * phase + rng.uniform(0, 2 * np.pi)) / k
    source = (speaker.harmonic_mix * harmonic
              + (1.0 - speaker.harmonic_mix) * rng.standard_normal(n))

    for fc, bw in zip(speaker.formants_hz, speaker.bandwidths_hz):
        r = np.exp(-np.pi * bw / SAMPLE_RATE)
        theta = 2 * np.pi * fc / SAMPLE_RATE
        source = scipy.signal.lfilter([1.0 - r], [1.0, -2 * r * np.cos(theta), r * r],
                                      source)

    envelope = np.full(n, 0.05)
    for _ in range(int(rng.integers(2, 6))):
        width = int(rng.uniform(0.08, 0.3) * SAMPLE_RATE)
        center = int(rng.uniform(0.1, 0.9) * n)
        lo = max(0, center - width // 2)
        hi = min(n, lo + width)
        bump = np.hanning(hi - lo) if hi - lo > 1 else np.ones(hi - lo)
        envelope[lo:hi] += rng.uniform(0.6, 1.0) * bump
    out = source * np.minimum(envelope, 1.2)

    rms = np.sqrt((out ** 2).mean())
    return out * (0.1 / rms)


def make_mixture(target: np.ndarray, interferer: np.ndarray, snr_db: float
                 ) -> np.ndarray:
    """Mix at an exact target-to-interferer power ratio of ``snr_db``."""
    target = np.asarray(target, dtype=np.float64)
    interferer = np.asarray(interferer, dtype=np.float64)
    if target.shape != interferer.shape:
        raise InputError("target and interferer lengths differ")
    p_t = float((target ** 2).mean())
    p_i = float((interferer ** 2).mean())
    if p_t == 0.0 or p_i == 0.0:
        raise DegenerateInput("mixture sources must have nonzero power")
    scale = np.sqrt(p_t / (p_i * 10.0 ** (snr_db / 10.0)))
    return target + scale * interferer


def measure_snr_db(target: np.ndarray, scaled_interferer: np.ndarray) -> float:
    p_t = float((np.asarray(target) ** 2).mean())
    p_i = float((np.asarray(scaled_interferer) ** 2).mean())
    return 10.0 * np.log10(p_t / p_i)


# -- records and manifests ---------------------------------------------------------


@dataclass
class MixtureRecord:
    id: str
    target_path: str
    interferer_path: str
    snr_db: float
    view_paths: dict
    split: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "MixtureRecord":
        return MixtureRecord(**json.loads(line))

    def speaker_ids(self) -> tuple[str, str]:
        """Target and interferer speakers, recovered from the path scheme
        ``<record>__<speaker>__<role>.wav``."""
        def spk(path):
            return os.path.basename(path).split("__")[1]
        return spk(self.target_path), spk(self.interferer_path)


@dataclass
class DatasetConfig:
    n_train: int = 200
    n_val: int = 50
    n_test: int = 50
    speaker_pool: int = 16
    duration_s: float = 1.0
    synth: SynthConfig = field(default_factory=SynthConfig)


def _split_speakers(cfg: DatasetConfig, seed: int) -> dict[str, list[SynthSpeaker]]:
    n_val = max(2, cfg.speaker_pool // 4)
    n_test = max(2, cfg.speaker_pool // 4)
    n_train = cfg.speaker_pool - n_val - n_test
    if n_train < 2:
        raise ConfigError(
            f"speaker pool of {cfg.speaker_pool} is too small for three "
            "disjoint splits of at least 2 speakers each")
    pool = [SynthSpeaker.create(f"spk{i:03d}", stable_seed("speaker", seed, i))
            for i in range(cfg.speaker_pool)]
    return {"train": pool[:n_train],
            "val": pool[n_train:n_train + n_val],
            "test": pool[n_train + n_val:]}


def build_dataset(cfg: DatasetConfig, out_dir, seed: int) -> list[MixtureRecord]:
    """Generate sources, the seven per-view embedding files, and a
    line-delimited JSON manifest under ``out_dir``. Returns the records."""
    wav_dir = os.path.join(out_dir, "wav")
    emb_dir = os.path.join(out_dir, "emb")
    os.makedirs(wav_dir, exist_ok=True)
    os.makedirs(emb_dir, exist_ok=True)
    speakers = _split_speakers(cfg, seed)

    records: list[MixtureRecord] = []
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    for split, count in counts.items():
        split_speakers = speakers[split]
        for idx in range(count):
            rec_id = f"{split}-{idx:05d}"
            rng = np.random.default_rng(stable_seed("record", seed, rec_id))
            t_spk, i_spk = (split_speakers[i] for i in
                            rng.choice(len(split_speakers), size=2, replace=False))
            snr = float(rng.uniform(*SNR_RANGE_DB))
            target = synth_utterance(t_spk, cfg.duration_s, int(rng.integers(2 ** 31)))
            interferer = synth_utterance(i_spk, cfg.duration_s, int(rng.integers(2 ** 31)))

            t_path = os.path.join("wav", f"{rec_id}__{t_spk.speaker_id}__t.wav")
            i_path = os.path.join("wav", f"{rec_id}__{i_spk.speaker_id}__i.wav")
            write_wav(os.path.join(out_dir, t_path), target)
            write_wav(os.path.join(out_dir, i_path), interferer)

            view_paths = {}
            emb_seed = stable_seed("views", seed, rec_id)
            for view in VIEW_LABELS:
                seq = synth_view_embeddings(target, view, cfg.synth, emb_seed)
                rel = os.path.join("emb", f"{rec_id}_{view}.mvt")
                save_embeddings(os.path.join(out_dir, rel), seq)
                view_paths[view] = rel

            records.append(MixtureRecord(
                id=rec_id, target_path=t_path, interferer_path=i_path,
                snr_db=snr, view_paths=view_paths, split=split))

    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return records


def read_manifest(path) -> list[MixtureRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(MixtureRecord.from_json(line))
    return records


def load_record_audio(record: MixtureRecord, base_dir) -> tuple[np.ndarray, np.ndarray]:
    """Returns (mixture, target) for one record, mixing the stored sources
    at the manifest SNR."""
    target = read_wav(os.path.join(base_dir, record.target_path))
    interferer = read_wav(os.path.join(base_dir, record.interferer_path))
    return make_mixture(target, interferer, record.snr_db), target


# -- view selection ------------------------------------------------------------


VIEW_STRATEGIES = ("random3", "repeat1", "front3", "random1", "front1")


def select_training_views(strategy: str, rng: np.random.Generator) -> list[str]:
    """Draw the view labels used for one batch."""
    if strategy == "random3":
        return [VIEW_LABELS[i] for i in rng.choice(len(VIEW_LABELS), size=3,
                                                   replace=False)]
    if strategy == "repeat1":
        return [VIEW_LABELS[rng.integers(len(VIEW_LABELS))]] * 3
    if strategy == "front3":
        return ["front"] * 3
    if strategy == "random1":
        return [VIEW_LABELS[rng.integers(len(VIEW_LABELS))]]
    if strategy == "front1":
        return ["front"]
    raise InputError(f"unknown view strategy {strategy!r}")


def inject_view_segments(frontal: ViewEmbeddingSeq, alternate: ViewEmbeddingSeq,
                         rng: np.random.Generator) -> ViewEmbeddingSeq:
    """Replace one contiguous window of the frontal sequence with the
    alternate view, simulating a head turn.

    The window length is 20-40% of the sequence and the whole window lies
    between the 30% and 80% positions of the timeline; the audio is left
    untouched (callers keep using the same mixture).
    """
    if frontal.embeddings.shape != alternate.embeddings.shape:
        raise InputError("sequences must be time-aligned with equal shapes")
    t_v = frontal.embeddings.shape[0]
    lo_len = int(np.ceil(0.20 * t_v))
    hi_len = int(np.floor(0.40 * t_v))
    lo_start = int(np.ceil(0.30 * t_v))
    hi_end = int(np.floor(0.80 * t_v))
    if hi_len < 1 or lo_len > hi_len or lo_start + lo_len > hi_end:
        raise DegenerateInput(f"sequence of {t_v} frames is too short for a "
                              "contained injected segment")
    length = int(np.clip(int(round(rng.uniform(0.20, 0.40) * t_v)), lo_len, hi_len))
    length = min(length, hi_end - lo_start)
    start = int(rng.integers(lo_start, hi_end - length + 1))

    out = frontal.embeddings.data.copy()
    out[start:start + length] = alternate.embeddings.data[start:start + length]
    return ViewEmbeddingSeq(Tensor(out), frontal.view_label, frontal.fps)
