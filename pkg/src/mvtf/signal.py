"""Waveform normalization, STFT analysis/synthesis, spectrogram packing,
and the scale-invariant SDR metric and loss.

The transforms are built from the autodiff primitives (framing, windowing,
and explicit DFT-basis matrix products), so gradients flow through both
analysis and synthesis without any dedicated backward code. Analysis and
synthesis use the same square-root Hann window; synthesis divides by the
accumulated window-product envelope, which makes the roundtrip exact at
every sample the windows can represent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

from . import tensor as T
from .errors import DegenerateInput, InputError, ShapeError
from .tensor import Tensor

SAMPLE_RATE = 16000
SI_SDR_CAP_DB = 60.0
_ENVELOPE_FLOOR = 1e-12


def sqrt_hann(n_fft: int) -> np.ndarray:
    """Square-root of the periodic Hann window; self-paired for analysis
    and synthesis."""
    return np.sin(np.pi * np.arange(n_fft) / n_fft)


@dataclass
class StftConfig:
    n_fft: int = 256
    hop: int = 128
    window: np.ndarray = None

    def __post_init__(self):
        if self.n_fft % self.hop != 0:
            raise InputError(f"hop {self.hop} must divide n_fft {self.n_fft}")
        if self.window is None:
            self.window = sqrt_hann(self.n_fft)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.n_fft,):
            raise InputError("window length must equal n_fft")

    @property
    def freq_bins(self) -> int:
        return self.n_fft // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.n_fft:
            raise ShapeError(f"need at least n_fft={self.n_fft} samples",
                             (n_samples,))
        return 1 + (n_samples - self.n_fft) // self.hop

    def coverage(self, frames: int) -> int:
        return (frames - 1) * self.hop + self.n_fft


@dataclass
class AudioBatch:
    """Normalized waveforms plus the per-item scale that was divided out."""
    waveform: Tensor            # B x N
    sigma: Tensor               # B
    original_length: int


@dataclass
class Spectrogram:
    real_part: Tensor           # B x T x F
    imag_part: Tensor           # B x T x F
    stft_config: StftConfig = field(repr=False, default=None)

    def __post_init__(self):
        if self.real_part.shape != self.imag_part.shape:
            raise ShapeError("real and imaginary parts must share a shape",
                             self.real_part.shape, self.imag_part.shape)


def normalize_mixture(x) -> AudioBatch:
    """Divide each item by its population standard deviation.

    Only the division is applied; the signal is not mean-shifted. A 1-D
    input is treated as a single-item batch.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=T.default_dtype())
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2:
        raise ShapeError("expected a (batch, samples) waveform", data.shape)
    sigma = data.std(axis=1)
    for i, s in enumerate(sigma):
        if s <= 0.0:
            raise DegenerateInput(f"zero-variance waveform at item {i}")
    return AudioBatch(
        waveform=Tensor(data / sigma[:, None]),
        sigma=Tensor(sigma),
        original_length=data.shape[1],
    )


# -- DFT bases ------------------------------------------------------------------

_basis_cache: dict[tuple, tuple] = {}


def _bases(n_fft: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    key = (n_fft, np.dtype(dtype).name)
    if key not in _basis_cache:
        f = n_fft // 2 + 1
        n = np.arange(n_fft)[:, None]
        k = np.arange(f)[None, :]
        angle = 2.0 * np.pi * k * n / n_fft
        fwd_cos = np.cos(angle)
        fwd_sin = -np.sin(angle)
        # Inverse expansion weights: interior bins appear twice in the
        # two-sided spectrum; the imaginary parts of the DC and Nyquist
        # bins cannot contribute to a real signal and are dropped.
        w = np.full(f, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        inv_cos = (w[:, None] * np.cos(angle.T)) / n_fft
        inv_sin = -(w[:, None] * np.sin(angle.T)) / n_fft
        inv_sin[0] = 0.0
        inv_sin[-1] = 0.0
        _basis_cache[key] = tuple(a.astype(dtype) for a in
                                  (fwd_cos, fwd_sin, inv_cos, inv_sin))
    return _basis_cache[key]


def stft(audio, cfg: StftConfig) -> Spectrogram:
    """One-sided STFT with no center padding: frame count
    ``1 + (N - n_fft) // hop``, ``F = n_fft / 2 + 1`` bins."""
    x = audio.waveform if isinstance(audio, AudioBatch) else audio
    if not isinstance(x, Tensor):
        x = Tensor(x)
    cfg.frame_count(x.shape[-1])  # raises on too-short input
    fwd_cos, fwd_sin, _, _ = _bases(cfg.n_fft, x.dtype)
    frames = T.frame_windows(x, cfg.n_fft, cfg.hop)
    windowed = frames * Tensor(cfg.window.astype(x.dtype))
    real = windowed @ Tensor(fwd_cos)
    imag = windowed @ Tensor(fwd_sin)
    return Spectrogram(real, imag, cfg)


def _synthesis_envelope(cfg: StftConfig, frames: int) -> np.ndarray:
    prod = cfg.window * cfg.window
    env = np.zeros(cfg.coverage(frames))
    for i in range(frames):
        env[i * cfg.hop:i * cfg.hop + cfg.n_fft] += prod
    return env


def reconstruction_region(cfg: StftConfig, n_samples: int) -> slice:
    """Samples an ``istft(stft(x))`` roundtrip reproduces exactly: everything
    the frames cover except positions where the window envelope vanishes
    (sample 0 for the square-root Hann pair)."""
    frames = cfg.frame_count(n_samples)
    env = _synthesis_envelope(cfg, frames)
    nonzero = np.nonzero(env > _ENVELOPE_FLOOR)[0]
    return slice(int(nonzero[0]), int(nonzero[-1]) + 1)


def istft(s: Spectrogram, cfg: StftConfig, length: int) -> Tensor:
    """Overlap-add synthesis with the dual window, envelope-normalized,
    truncated or zero-padded to ``length`` samples."""
    real, imag = s.real_part, s.imag_part
    if real.shape != imag.shape:
        raise ShapeError("spectrogram parts disagree", real.shape, imag.shape)
    if real.shape[-1] != cfg.freq_bins:
        raise ShapeError("spectrogram bins do not match the config",
                         real.shape, (cfg.freq_bins,))
    _, _, inv_cos, inv_sin = _bases(cfg.n_fft, real.dtype)
    frames = real @ Tensor(inv_cos) + imag @ Tensor(inv_sin)
    frames = frames * Tensor(cfg.window.astype(real.dtype))
    ola = T.overlap_add(frames, cfg.hop)

    env = _synthesis_envelope(cfg, real.shape[-2])
    safe = np.where(env > _ENVELOPE_FLOOR, env, 1.0).astype(real.dtype)
    out = ola / Tensor(safe)

    cover = out.shape[-1]
    if length <= cover:
        return out[..., :length]
    pad = T.zeros(out.shape[:-1] + (length - cover,))
    return T.concatenate([out, pad], axis=-1)


def pack_spectrogram(s: Spectrogram) -> Tensor:
    """Stack (real, imag) as channels: B x T x F pair -> B x 2 x T x F."""
    return T.stack([s.real_part, s.imag_part], axis=-3)


def unpack_spectrogram(packed: Tensor, cfg: StftConfig | None = None) -> Spectrogram:
    if packed.shape[-3] != 2:
        raise ShapeError("expected a 2-channel packed spectrogram", packed.shape)
    real = packed[..., 0, :, :]
    imag = packed[..., 1, :, :]
    return Spectrogram(real, imag, cfg)


# -- scale-invariant SDR ------------------------------------------------------------


def si_sdr(est, ref, cap: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-cap
    for reporting. The estimate is projected onto the reference before the
    distortion ratio is taken, so any positive rescaling of the estimate
    leaves the value unchanged."""
    e = np.asarray(est.data if isinstance(est, Tensor) else est, dtype=np.float64).ravel()
    r = np.asarray(ref.data if isinstance(ref, Tensor) else ref, dtype=np.float64).ravel()
    if e.shape != r.shape:
        raise ShapeError("estimate and reference lengths differ", e.shape, r.shape)
    ref_pow = float(np.dot(r, r))
    if ref_pow == 0.0:
        raise DegenerateInput("reference signal is identically zero")
    alpha = float(np.dot(e, r)) / ref_pow
    target = alpha * r
    p_sig = float(np.dot(target, target))
    p_err = float(np.dot(target - e, target - e))
    if p_sig == 0.0:
        # A zero projection (e.g. an all-zero estimate) carries no signal.
        return -cap
    if p_err == 0.0:
        return cap
    return float(np.clip(10.0 * np.log10(p_sig / p_err), -cap, cap))


def si_sdr_loss(est: Tensor, ref: Tensor) -> Tensor:
    """Negative mean SI-SDR over a batch, differentiable and uncapped
    (the cap is metric-only)."""
    if est.shape != ref.shape:
        raise ShapeError("estimate and reference batches differ", est.shape, ref.shape)
    ref_pow = (ref * ref).sum(axis=-1, keepdims=True)
    if np.any(ref_pow.data == 0.0):
        raise DegenerateInput("reference signal is identically zero")
    alpha = (est * ref).sum(axis=-1, keepdims=True) / ref_pow
    target = alpha * ref
    err = target - est
    ratio = (target * target).sum(axis=-1) / (err * err).sum(axis=-1)
    return -(T.log10(ratio) * 10.0).mean()


# -- WAV files -----------------------------------------------------------------------


def read_wav(path) -> np.ndarray:
    """Load a mono 16 kHz WAV file as float64 in [-1, 1]."""
    rate, data = scipy.io.wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: expected {SAMPLE_RATE} Hz input, got {rate}")
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise InputError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path, waveform: np.ndarray) -> None:
    """Write a mono 16 kHz WAV file with 32-bit float samples."""
    data = np.asarray(waveform, dtype=np.float32)
    if data.ndim != 1:
        raise InputError(f"expected a mono waveform, got shape {data.shape}")
    scipy.io.wavfile.write(path, SAMPLE_RATE, data)
