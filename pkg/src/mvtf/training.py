"""SI-SDR-driven optimization: Adam with gradient clipping, the
plateau-halving learning-rate schedule with early stopping, checkpointing,
and evaluation sweeps over view configurations.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import (MixtureRecord, inject_view_segments, load_record_audio,
                   select_training_views)
from .errors import InputError, NumericalError
from .fusion import ViewSet, replicate_views
from .separator import SeparationModel, separate
from .signal import AudioBatch, normalize_mixture, si_sdr, si_sdr_loss
from .tensor import Tensor
from .visual import ViewEmbeddingSeq, load_embeddings, project_to_subspace, \
    stable_seed, upsample_time

MAX_EPOCHS_HARD = 100
PLATEAU_HALVE_EVERY = 3
EARLY_STOP_AFTER = 10


def effective_max_epochs(requested: int) -> int:
    """Epoch budget: the configured maximum, never more than 100."""
    return min(requested, MAX_EPOCHS_HARD)


# -- optimizer and schedule -----------------------------------------------------


def clip_gradients(grads, max_norm: float = 1.0):
    """Scale all gradients by ``max_norm / g`` when the global L2 norm ``g``
    exceeds ``max_norm``; otherwise leave them untouched. Returns the
    (possibly rescaled) gradients and never increases the norm."""
    if max_norm <= 0:
        raise InputError("max_norm must be positive")
    arrays = [g.data if isinstance(g, Tensor) else np.asarray(g) for g in grads]
    total = 0.0
    for g in arrays:
        s = float((g.astype(np.float64) ** 2).sum())
        if not np.isfinite(s):
            raise NumericalError("non-finite gradient")
        total += s
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in arrays:
            g *= scale
    return grads


class Adam:
    """Standard Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 1e-3
    best_val: float = -np.inf
    epochs_since_improve: int = 0
    history: list = field(default_factory=list)
    stopped: bool = False


def lr_schedule_step(st: TrainState, val_si_sdr: float) -> TrainState:
    """Plateau schedule: a strict improvement of the validation SI-SDR
    resets the counter; every 3 consecutive non-improving epochs halve the
    learning rate; 10 consecutive non-improving epochs set the stop flag."""
    if val_si_sdr > st.best_val:
        return replace(st, best_val=val_si_sdr, epochs_since_improve=0)
    count = st.epochs_since_improve + 1
    lr = st.lr * 0.5 if count % PLATEAU_HALVE_EVERY == 0 else st.lr
    return replace(st, lr=lr, epochs_since_improve=count,
                   stopped=st.stopped or count >= EARLY_STOP_AFTER)


# -- batch assembly ---------------------------------------------------------------


class RecordCache:
    """Lazily loads and keeps record audio and raw embeddings in memory;
    the corpus is small enough to cache whole."""

    def __init__(self, base_dir):
        self.base_dir = base_dir
        self._audio: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._emb: dict[tuple[str, str], np.ndarray] = {}

    def audio(self, rec: MixtureRecord) -> tuple[np.ndarray, np.ndarray]:
        if rec.id not in self._audio:
            self._audio[rec.id] = load_record_audio(rec, self.base_dir)
        return self._audio[rec.id]

    def embeddings(self, rec: MixtureRecord, label: str) -> np.ndarray:
        key = (rec.id, label)
        if key not in self._emb:
            path = os.path.join(self.base_dir, rec.view_paths[label])
            self._emb[key] = load_embeddings(path, view_label=label).embeddings.data
        return self._emb[key]


def _project_stack(sequences: list[np.ndarray], t_a: int,
                   model: SeparationModel) -> Tensor:
    ups = [upsample_time(ViewEmbeddingSeq(Tensor(s), "batch"), t_a).data
           for s in sequences]
    return project_to_subspace(Tensor(np.stack(ups)), model.proj)


def assemble_batch(recs: list[MixtureRecord], labels: list[str],
                   model: SeparationModel, cache: RecordCache
                   ) -> tuple[AudioBatch, Tensor, ViewSet]:
    """Build one training batch: normalized mixtures, clean targets, and the
    projected view set for the given labels (repeated labels share one
    projected tensor, which keeps replicated fusion exact)."""
    audio = [cache.audio(r) for r in recs]
    mixtures = np.stack([a[0] for a in audio])
    targets = np.stack([a[1] for a in audio])
    batch = normalize_mixture(mixtures)
    t_a = model.stft_cfg.frame_count(batch.original_length)

    unique: dict[str, Tensor] = {}
    for label in labels:
        if label not in unique:
            unique[label] = _project_stack(
                [cache.embeddings(r, label) for r in recs], t_a, model)
    views = ViewSet([unique[l] for l in labels], list(labels))
    return batch, Tensor(targets), views


def _injected_views(recs: list[MixtureRecord], model: SeparationModel,
                    cache: RecordCache, t_a: int, seed: int) -> ViewSet:
    """Frontal sequences with an alternate-view segment injected per item."""
    alternates = [l for l in recs[0].view_paths if l != "front"]
    mixed = []
    for rec in recs:
        rng = np.random.default_rng(stable_seed("inject", seed, rec.id))
        alt = alternates[rng.integers(len(alternates))]
        front = ViewEmbeddingSeq(Tensor(cache.embeddings(rec, "front")), "front")
        other = ViewEmbeddingSeq(Tensor(cache.embeddings(rec, alt)), alt)
        mixed.append(inject_view_segments(front, other, rng).embeddings.data)
    view = _project_stack(mixed, t_a, model)
    return ViewSet([view], ["injected"])


# -- training loop -----------------------------------------------------------------


@dataclass
class TrainConfig:
    n_fft: int = 256
    hop: int = 128
    hidden: int = 32
    n_blocks: int = 2
    embed_dim: int = 64
    kernel: int = 3
    strategy: str = "mvtf"
    lr: float = 1e-3
    batch: int = 8
    max_epochs: int = 100
    seed: int = 0
    view_strategy: str = "random3"
    val_view_strategy: str = "front3"
    clip_norm: float = 1.0


def _batches(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def _validation_score(model: SeparationModel, recs: list[MixtureRecord],
                      cache: RecordCache, labels: list[str], batch: int) -> float:
    scores = []
    with T.no_grad():
        for chunk in _batches(recs, batch):
            mix, target, views = assemble_batch(chunk, labels, model, cache)
            est = separate(mix, replicate_views(views), model)
            for i in range(len(chunk)):
                scores.append(si_sdr(est.data[i], target.data[i]))
    return float(np.mean(scores))


def train(cfg: TrainConfig, records: list[MixtureRecord], base_dir,
          out_dir=None, log=None) -> tuple[SeparationModel, TrainState]:
    """Optimize a model on the manifest's train split, tracking validation
    SI-SDR with front-view inputs. Returns the model restored to its
    best-validation parameters plus the schedule state and history.

    When ``out_dir`` is given, the best checkpoint is written there after
    every improvement, so a divergence abort still leaves the last good
    parameters on disk.
    """
    train_recs = [r for r in records if r.split == "train"]
    val_recs = [r for r in records if r.split == "val"]
    if not train_recs or not val_recs:
        raise InputError("manifest needs both train and val splits")

    model = SeparationModel.build(
        n_fft=cfg.n_fft, hop=cfg.hop, hidden=cfg.hidden, n_blocks=cfg.n_blocks,
        embed_dim=cfg.embed_dim, kernel=cfg.kernel, strategy=cfg.strategy,
        seed=cfg.seed)
    params = model.params()
    opt = Adam(params, lr=cfg.lr)
    state = TrainState(lr=cfg.lr)
    cache = RecordCache(base_dir)
    val_labels = select_training_views(cfg.val_view_strategy,
                                       np.random.default_rng(0))
    best_arrays = {k: p.data.copy() for k, p in params.items()}
    ckpt_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "best.ckpt")
    max_epochs = effective_max_epochs(cfg.max_epochs)

    for epoch in range(1, max_epochs + 1):
        order_rng = np.random.default_rng(stable_seed("order", cfg.seed, epoch))
        epoch_recs = [train_recs[i] for i in order_rng.permutation(len(train_recs))]
        losses = []
        for step, chunk in enumerate(_batches(epoch_recs, cfg.batch)):
            view_rng = np.random.default_rng(stable_seed("views", cfg.seed, epoch, step))
            labels = select_training_views(cfg.view_strategy, view_rng)
            mix, target, views = assemble_batch(chunk, labels, model, cache)
            est = separate(mix, replicate_views(views), model,
                           role_seed=stable_seed("roles", cfg.seed, epoch, step))
            loss = si_sdr_loss(est, target)
            if not np.isfinite(loss.item()):
                # The best checkpoint written so far stays on disk.
                raise NumericalError(
                    f"training diverged at epoch {epoch} step {step}")
            opt.zero_grad()
            loss.backward()
            clip_gradients([p.grad for p in params.values() if p.grad is not None],
                           cfg.clip_norm)
            opt.step()
            losses.append(loss.item())

        val = _validation_score(model, val_recs, cache, val_labels, cfg.batch)
        improved = val > state.best_val
        state = lr_schedule_step(state, val)
        state.epoch = epoch
        opt.lr = state.lr
        state.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                              "val_si_sdr": val, "lr": state.lr})
        if improved:
            best_arrays = {k: p.data.copy() for k, p in params.items()}
            if ckpt_path:
                model.save(ckpt_path)
        if log:
            log(f"epoch {epoch:3d}  loss {np.mean(losses):8.3f}  "
                f"val {val:7.3f} dB  lr {state.lr:.2e}"
                + ("  *" if improved else ""))
        if state.stopped:
            break

    model.load_arrays(best_arrays)
    if ckpt_path:
        model.save(ckpt_path)
    return model, state


# -- evaluation ---------------------------------------------------------------------


def evaluate(model: SeparationModel, records: list[MixtureRecord], base_dir,
             view_config: dict, seed: int = 0, batch: int = 8,
             split: str = "test") -> dict:
    """Score a model on one view configuration.

    ``view_config`` is one of ``{"single": label}``, ``{"combo": [l1, l2, l3]}``,
    or ``{"injected": True}``. Returns mean/std SI-SDR of the separated
    estimates plus the unprocessed-mixture baseline.
    """
    recs = [r for r in records if r.split == split] or list(records)
    cache = RecordCache(base_dir)

    if "single" in view_config:
        labels = [view_config["single"]]
    elif "combo" in view_config:
        labels = list(view_config["combo"])
        if len(labels) != 3:
            raise InputError("a combo view configuration needs 3 labels")
    elif view_config.get("injected"):
        labels = None
    else:
        raise InputError(f"unrecognized view configuration {view_config!r}")
    if labels is not None:
        known = set(recs[0].view_paths)
        for label in labels:
            if label not in known:
                raise InputError(f"unknown view label {label!r}")

    est_scores, mix_scores = [], []
    with T.no_grad():
        for chunk in _batches(recs, batch):
            if labels is None:
                audio = [cache.audio(r) for r in chunk]
                mixtures = np.stack([a[0] for a in audio])
                targets = np.stack([a[1] for a in audio])
                mix = normalize_mixture(mixtures)
                t_a = model.stft_cfg.frame_count(mix.original_length)
                views = _injected_views(chunk, model, cache, t_a, seed)
                target = Tensor(targets)
            else:
                mix, target, views = assemble_batch(chunk, labels, model, cache)
            est = separate(mix, replicate_views(views), model,
                           role_seed=stable_seed("eval-roles", seed))
            raw = mix.waveform.data * mix.sigma.data[:, None]
            for i in range(len(chunk)):
                est_scores.append(si_sdr(est.data[i], target.data[i]))
                mix_scores.append(si_sdr(raw[i], target.data[i]))

    return {
        "view_config": view_config,
        "count": len(est_scores),
        "mean_si_sdr": float(np.mean(est_scores)),
        "std_si_sdr": float(np.std(est_scores)),
        "mixture_mean_si_sdr": float(np.mean(mix_scores)),
        "improvement_db": float(np.mean(est_scores) - np.mean(mix_scores)),
    }
