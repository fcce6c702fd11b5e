"""Multi-view fusion: the pairwise outer-product strategy plus the two
baseline fusers and the missing-view replication rule.

Fusion always runs on exactly three view sequences; when fewer cameras are
available the views are replicated cyclically first. Pairs are formed over
the three positions after replication, self-pairs included, so a single
view at inference reduces to one view paired with itself.

The per-pair outer product is symmetrized (mean of both orientations)
before the shared flatten / layer-norm / linear projection. A one-sided
product followed by a shared projection would be orientation-sensitive;
the symmetrized form makes the output exactly independent of input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InputError, ShapeError
from .tensor import Tensor

PAIR_POSITIONS = ((0, 1), (0, 2), (1, 2))
VIEW_SLOTS = 3


@dataclass
class LstmParams:
    """Single-layer LSTM, input and hidden size F. Gate order i, f, g, o."""
    w_x: Tensor                 # F x 4F
    w_h: Tensor                 # F x 4F
    bias: Tensor                # 4F

    @staticmethod
    def init(f: int, rng: np.random.Generator) -> "LstmParams":
        scale = 1.0 / np.sqrt(f)
        bias = np.zeros(4 * f)
        bias[f:2 * f] = 1.0  # open the forget gate at the start of training
        return LstmParams(
            w_x=Tensor(rng.uniform(-scale, scale, (f, 4 * f)), requires_grad=True),
            w_h=Tensor(rng.uniform(-scale, scale, (f, 4 * f)), requires_grad=True),
            bias=Tensor(bias, requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h,
                f"{prefix}.bias": self.bias}


@dataclass
class MvtfParams:
    """Learnable state of the outer-product fusion: one shared LSTM and one
    shared pair projection (layer norm over (F+1)^2, then linear to F)."""
    lstm: LstmParams
    pair_gamma: Tensor          # (F+1)^2
    pair_beta: Tensor           # (F+1)^2
    pair_w: Tensor              # (F+1)^2 x F
    pair_b: Tensor              # F

    @staticmethod
    def init(f: int, rng: np.random.Generator) -> "MvtfParams":
        f1sq = (f + 1) * (f + 1)
        return MvtfParams(
            lstm=LstmParams.init(f, rng),
            pair_gamma=Tensor(np.ones(f1sq), requires_grad=True),
            pair_beta=Tensor(np.zeros(f1sq), requires_grad=True),
            pair_w=Tensor(rng.standard_normal((f1sq, f)) / np.sqrt(f1sq),
                          requires_grad=True),
            pair_b=Tensor(np.zeros(f), requires_grad=True),
        )

    def named(self, prefix: str = "fusion") -> dict[str, Tensor]:
        out = self.lstm.named(f"{prefix}.lstm")
        out.update({
            f"{prefix}.pair_norm.gamma": self.pair_gamma,
            f"{prefix}.pair_norm.beta": self.pair_beta,
            f"{prefix}.pair_proj.w": self.pair_w,
            f"{prefix}.pair_proj.b": self.pair_b,
        })
        return out


@dataclass
class AddFuseParams:
    """Projected-addition baseline: one shared linear F -> F."""
    w: Tensor
    b: Tensor

    @staticmethod
    def init(f: int, rng: np.random.Generator) -> "AddFuseParams":
        return AddFuseParams(
            w=Tensor(rng.standard_normal((f, f)) / np.sqrt(f), requires_grad=True),
            b=Tensor(np.zeros(f), requires_grad=True),
        )

    def named(self, prefix: str = "fusion") -> dict[str, Tensor]:
        return {f"{prefix}.add.w": self.w, f"{prefix}.add.b": self.b}


@dataclass
class AttnFuseParams:
    """Cross-attention baseline with randomized role assignment."""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @staticmethod
    def init(f: int, rng: np.random.Generator) -> "AttnFuseParams":
        def mat():
            return Tensor(rng.standard_normal((f, f)) / np.sqrt(f), requires_grad=True)
        return AttnFuseParams(w_q=mat(), w_k=mat(), w_v=mat(), w_o=mat())

    def named(self, prefix: str = "fusion") -> dict[str, Tensor]:
        return {f"{prefix}.attn.w_q": self.w_q, f"{prefix}.attn.w_k": self.w_k,
                f"{prefix}.attn.w_v": self.w_v, f"{prefix}.attn.w_o": self.w_o}


@dataclass
class ViewSet:
    """An ordered list of 1 to 3 aligned view feature sequences."""
    views: list                 # Tensors, each (T, F) or (B, T, F)
    labels: list

    def __post_init__(self):
        if not self.views:
            raise InputError("a view set needs at least one view")
        if len(self.views) > VIEW_SLOTS:
            raise InputError(f"at most {VIEW_SLOTS} views are supported")
        if len(self.labels) != len(self.views):
            raise InputError("labels and views must be parallel lists")
        first = self.views[0].shape
        for v in self.views[1:]:
            if v.shape != first:
                raise ShapeError("all views must share a shape", first, v.shape)

    def __len__(self) -> int:
        return len(self.views)


def replicate_views(vs: ViewSet, target_count: int = VIEW_SLOTS) -> ViewSet:
    """Cyclically repeat the available views until ``target_count``:
    [a] -> [a, a, a]; [a, b] -> [a, b, a]; a full set passes through."""
    if len(vs) == 0:
        raise InputError("cannot replicate an empty view set")
    if len(vs) >= target_count:
        return vs
    views = [vs.views[i % len(vs.views)] for i in range(target_count)]
    labels = [vs.labels[i % len(vs.labels)] for i in range(target_count)]
    return ViewSet(views, labels)


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape((1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeError("expected (T, F) or (B, T, F) features", x.shape)


def lstm_forward(h, p: LstmParams) -> Tensor:
    """Unidirectional LSTM over the time axis, zero initial state; returns
    the hidden-state sequence with the input's shape."""
    x, squeeze = _as_batched(h if isinstance(h, Tensor) else Tensor(h))
    f = p.w_x.shape[0]
    if x.shape[-1] != f:
        raise ShapeError("feature size does not match the LSTM", x.shape, p.w_x.shape)
    t_len = x.shape[1]
    driven = x @ p.w_x + p.bias  # B x T x 4F, input part of every gate
    h_prev = None
    c_prev = None
    outputs = []
    for t in range(t_len):
        z = driven[:, t, :]
        if h_prev is not None:
            z = z + h_prev @ p.w_h
        i = T.sigmoid(z[:, :f])
        g = T.tanh(z[:, 2 * f:3 * f])
        o = T.sigmoid(z[:, 3 * f:])
        if c_prev is None:
            c_prev = i * g
        else:
            forget = T.sigmoid(z[:, f:2 * f])
            c_prev = forget * c_prev + i * g
        h_prev = o * T.tanh(c_prev)
        outputs.append(h_prev)
    out = T.stack(outputs, axis=1)
    return out.reshape(out.shape[1:]) if squeeze else out


def augment_bias(o) -> Tensor:
    """Append a constant 1 as the last feature at every time step."""
    x = o if isinstance(o, Tensor) else Tensor(o)
    ones = T.ones(x.shape[:-1] + (1,))
    return T.concatenate([x, ones], axis=-1)


def outer_product(oi: Tensor, oj: Tensor) -> Tensor:
    """Per-time-step outer product of two feature sequences:
    (..., T, F1) x (..., T, F1) -> (..., T, F1, F1). The last row and
    column reproduce the two unimodal embeddings; the corner is 1 when the
    inputs are bias-augmented."""
    if oi.shape != oj.shape:
        raise ShapeError("pair members disagree", oi.shape, oj.shape)
    col = oi.reshape(oi.shape + (1,))
    row = oj.reshape(oj.shape[:-1] + (1, oj.shape[-1]))
    return col @ row


def pair_fuse(oi: Tensor, oj: Tensor, p: MvtfParams) -> Tensor:
    """Fuse one pair of bias-augmented sequences: symmetrized outer product,
    flatten, layer norm, linear back to F."""
    sym = T.symmetric_outer(oi, oj)
    flat = sym.flatten(start=sym.ndim - 2)
    normed = T.layer_norm(flat, p.pair_gamma, p.pair_beta)
    return T.linear(normed, p.pair_w, p.pair_b)


def _mean_terms(terms: list[Tensor]) -> Tensor:
    # Replicated views arrive as the same tensor object, so equal terms are
    # literally identical here; returning the shared term keeps the mean of
    # identical contributions exact (floats round (3x)/3 away from x).
    first = terms[0]
    if all(t is first for t in terms):
        return first
    total = first
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def mvtf_fuse(vs: ViewSet, p: MvtfParams) -> Tensor:
    """Fused visual context: run the shared LSTM and bias augmentation per
    view, then average the three position pairs (0,1), (0,2), (1,2).

    Replication repeats tensor objects, so the per-view recurrence and any
    repeated pair are computed once and reused.
    """
    if len(vs) != VIEW_SLOTS:
        raise InputError(f"fusion expects exactly {VIEW_SLOTS} views; "
                         "run replicate_views first")
    # Canonical position of each distinct view object; replicated slots
    # resolve to their first occurrence so repeated pairs are shared.
    canon: dict[int, int] = {}
    for idx, v in enumerate(vs.views):
        canon.setdefault(id(v), idx)
    augmented: dict[int, Tensor] = {}
    for v in vs.views:
        pos = canon[id(v)]
        if pos not in augmented:
            augmented[pos] = augment_bias(lstm_forward(v, p.lstm))
    pairs: dict[tuple, Tensor] = {}
    terms = []
    for i, j in PAIR_POSITIONS:
        key = tuple(sorted((canon[id(vs.views[i])], canon[id(vs.views[j])])))
        if key not in pairs:
            pairs[key] = pair_fuse(augmented[key[0]], augmented[key[1]], p)
        terms.append(pairs[key])
    return _mean_terms(terms)


def projected_addition_fuse(vs: ViewSet, p: AddFuseParams) -> Tensor:
    """Baseline: shared linear projection of each view, element-wise sum,
    scaled by 1/3."""
    if len(vs) != VIEW_SLOTS:
        raise InputError(f"fusion expects exactly {VIEW_SLOTS} views")
    projected: dict[int, Tensor] = {}
    for v in vs.views:
        if id(v) not in projected:
            projected[id(v)] = T.linear(v, p.w, p.b)
    return _mean_terms([projected[id(v)] for v in vs.views])


def attention_fuse(vs: ViewSet, p: AttnFuseParams, role_seed: int,
                   with_weights: bool = False):
    """Baseline: single-head scaled dot-product attention over time with the
    query/key/value roles drawn as a random permutation of the three views.

    This reconstruction is best-effort; the strategy is reported in
    evaluations but not used as a hard gate.
    """
    if len(vs) != VIEW_SLOTS:
        raise InputError(f"fusion expects exactly {VIEW_SLOTS} views")
    roles = np.random.default_rng(role_seed).permutation(VIEW_SLOTS)
    q_in, k_in, v_in = (vs.views[r] for r in roles)
    batched, squeeze = _as_batched(q_in)
    k_b = _as_batched(k_in)[0]
    v_b = _as_batched(v_in)[0]
    f = batched.shape[-1]
    q = batched @ p.w_q
    k = k_b @ p.w_k
    v = v_b @ p.w_v
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(f))
    weights = T.softmax(scores, axis=-1)
    out = (weights @ v) @ p.w_o
    if squeeze:
        out = out.reshape(out.shape[1:])
        weights = weights.reshape(weights.shape[1:])
    return (out, weights) if with_weights else out


FUSION_STRATEGIES = ("mvtf", "projected_addition", "attention", "none")


def fuse_views(strategy: str, vs: ViewSet, params, role_seed: int = 0) -> Tensor:
    """Dispatch on the configured fusion strategy. ``none`` bypasses fusion
    and feeds the first view's features directly."""
    if strategy == "mvtf":
        return mvtf_fuse(replicate_views(vs), params)
    if strategy == "projected_addition":
        return projected_addition_fuse(replicate_views(vs), params)
    if strategy == "attention":
        return attention_fuse(replicate_views(vs), params, role_seed)
    if strategy == "none":
        return vs.views[0]
    raise InputError(f"unknown fusion strategy {strategy!r}")


def init_fusion_params(strategy: str, f: int, rng: np.random.Generator):
    if strategy == "mvtf":
        return MvtfParams.init(f, rng)
    if strategy == "projected_addition":
        return AddFuseParams.init(f, rng)
    if strategy == "attention":
        return AttnFuseParams.init(f, rng)
    if strategy == "none":
        return None
    raise InputError(f"unknown fusion strategy {strategy!r}")
