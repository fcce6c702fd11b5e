"""Per-view lip-embedding sequences: synthetic generation, file ingestion,
temporal alignment to the audio frame grid, and projection into the
audio feature subspace.

The synthetic generator stands in for a pretrained lip encoder. All views
of one utterance share a common articulatory content signal (the target's
amplitude envelope and its first difference, lifted to D dimensions); each
view then applies its own invertible linear distortion and adds noise that
grows with angular distance from the frontal camera. That shared content
is the cross-view redundancy the fusion stage exploits.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import tensorio
from .errors import DegenerateInput, FormatError, InputError, ShapeError
from .signal import SAMPLE_RATE
from .tensor import Tensor

VIEW_LABELS = ("front", "top", "down", "left30", "right30", "left60", "right60")

# Relative noise floor per camera angle: frontal is cleanest, the top view
# is the hardest, obliques sit in between.
VIEW_NOISE_SIGMA = {
    "front": 0.05,
    "down": 0.12,
    "left30": 0.12,
    "right30": 0.12,
    "left60": 0.25,
    "right60": 0.25,
    "top": 0.50,
}

DEFAULT_FPS = 25


def stable_seed(*parts) -> int:
    """Deterministic 64-bit seed from heterogeneous parts (never Python's
    salted ``hash``)."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class SynthConfig:
    """Knobs for the synthetic view-embedding generator."""
    dim: int = 64
    fps: int = DEFAULT_FPS
    noise: float = 1.0          # global multiplier on the per-view sigmas
    distortion: bool = True     # apply per-view linear map and bias
    content_seed: int = 2077    # seeds the shared content lift and view maps


@dataclass
class ViewEmbeddingSeq:
    embeddings: Tensor          # T_v x D
    view_label: str
    fps: int = DEFAULT_FPS

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ShapeError("embeddings must be (frames, dim)", self.embeddings.shape)
        if self.embeddings.shape[0] < 2:
            raise DegenerateInput("an embedding sequence needs at least 2 frames")


@dataclass
class ViewProjectionParams:
    """Shared 1-D convolution mapping D-dim embeddings to the F-dim audio
    feature subspace."""
    conv_kernel: Tensor         # k x D x F, k odd
    conv_bias: Tensor           # F

    def __post_init__(self):
        if self.conv_kernel.ndim != 3:
            raise ShapeError("conv kernel must be (taps, in, out)",
                             self.conv_kernel.shape)
        if self.conv_kernel.shape[0] % 2 == 0:
            raise InputError("conv kernel length must be odd")

    @staticmethod
    def init(dim: int, out: int, k: int = 3, rng: np.random.Generator | None = None
             ) -> "ViewProjectionParams":
        rng = rng or np.random.default_rng(0)
        scale = 1.0 / np.sqrt(k * dim)
        kernel = rng.standard_normal((k, dim, out)) * scale
        return ViewProjectionParams(
            conv_kernel=Tensor(kernel, requires_grad=True),
            conv_bias=Tensor(np.zeros(out), requires_grad=True),
        )


def _amplitude_envelope(target: np.ndarray, fps: int) -> np.ndarray:
    samples_per_frame = SAMPLE_RATE // fps
    frames = len(target) // samples_per_frame
    if frames < 2:
        raise DegenerateInput(
            f"waveform too short for 2 video frames at {fps} fps")
    trimmed = target[:frames * samples_per_frame].reshape(frames, samples_per_frame)
    return np.sqrt((trimmed ** 2).mean(axis=1))


def _content_lift(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(stable_seed("content-lift", cfg.content_seed, cfg.dim))
    return rng.standard_normal((2, cfg.dim)) / np.sqrt(2.0)


def _view_distortion(label: str, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    if label == "front":
        return np.eye(cfg.dim), np.zeros(cfg.dim)
    rng = np.random.default_rng(stable_seed("view-map", cfg.content_seed, cfg.dim, label))
    q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, cfg.dim)))
    bias = 0.5 * rng.standard_normal(cfg.dim)
    return q, bias


def synth_view_embeddings(target: np.ndarray, view_label: str, cfg: SynthConfig,
                          seed: int) -> ViewEmbeddingSeq:
    """Generate one view's embedding sequence for a target waveform.

    Deterministic in (target, view_label, cfg, seed). The content part is
    shared by every view of the same target; only the distortion and the
    noise differ per view.
    """
    if view_label not in VIEW_NOISE_SIGMA:
        raise InputError(f"unknown view label {view_label!r}")
    target = np.asarray(target, dtype=np.float64).ravel()

    env = _amplitude_envelope(target, cfg.fps)
    denom = np.sqrt((env ** 2).mean()) + 1e-12
    env = env / denom
    delta = np.diff(env, prepend=env[0])
    content = np.stack([env, delta], axis=1) @ _content_lift(cfg)

    out = content
    if cfg.distortion:
        mat, bias = _view_distortion(view_label, cfg)
        out = content @ mat + bias
    sigma = VIEW_NOISE_SIGMA[view_label] * cfg.noise
    if sigma > 0.0:
        noise_rng = np.random.default_rng(stable_seed("view-noise", seed, view_label))
        out = out + sigma * noise_rng.standard_normal(out.shape)

    return ViewEmbeddingSeq(Tensor(out), view_label, cfg.fps)


def save_embeddings(path, seq: ViewEmbeddingSeq) -> None:
    tensorio.save_tensor(path, seq.embeddings.data)


def load_embeddings(path, view_label: str | None = None,
                    fps: int = DEFAULT_FPS) -> ViewEmbeddingSeq:
    """Read a rank-2 (frames x dim) tensor file as an embedding sequence.

    The view label defaults to the trailing ``_<label>`` chunk of the file
    stem; the frame rate comes from the caller, defaulting to 25 fps."""
    arr = tensorio.load_tensor(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a rank-2 embedding file, got rank {arr.ndim}")
    if view_label is None:
        stem = os.path.splitext(os.path.basename(path))[0]
        view_label = stem.rsplit("_", 1)[-1] if "_" in stem else stem
    return ViewEmbeddingSeq(Tensor(arr), view_label, fps)


def upsample_time(seq: ViewEmbeddingSeq, t_a: int) -> Tensor:
    """Linearly interpolate a sequence onto ``t_a`` frames with the first
    and last frames preserved exactly."""
    if t_a < 1:
        raise InputError("target frame count must be at least 1")
    emb = seq.embeddings.data
    t_v = emb.shape[0]
    if t_v < 2:
        if t_a == 1:
            return Tensor(emb[:1].copy())
        raise DegenerateInput("cannot upsample fewer than 2 frames")
    if t_a == 1:
        return Tensor(emb[:1].copy())
    pos = np.arange(t_a) * (t_v - 1) / (t_a - 1)
    lo = np.minimum(pos.astype(np.int64), t_v - 2)
    frac = (pos - lo)[:, None]
    out = emb[lo] * (1.0 - frac) + emb[lo + 1] * frac
    return Tensor(out)


def project_to_subspace(l, p: ViewProjectionParams) -> Tensor:
    """1-D convolution along time with symmetric zero padding; output length
    equals input length. Accepts (T, D) or (B, T, D)."""
    x = l if isinstance(l, Tensor) else Tensor(l)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError("expected (time, dim) or (batch, time, dim)", x.shape)
    k, d, _ = p.conv_kernel.shape
    if x.shape[-1] != d:
        raise ShapeError("embedding dim does not match the projection",
                         x.shape, p.conv_kernel.shape)
    half = k // 2
    t_len = x.shape[1]
    if half:
        zeros = T.zeros((x.shape[0], half, d))
        x = T.concatenate([zeros, x, zeros], axis=1)
    out = None
    for j in range(k):
        term = x[:, j:j + t_len, :] @ p.conv_kernel[j]
        out = term if out is None else out + term
    out = out + p.conv_bias
    return out.reshape(out.shape[1:]) if squeeze else out
