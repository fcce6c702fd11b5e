"""Self-contained invariant suites behind the ``selftest`` command.

Each check re-derives its expected value from an independent construction
(finite differences, algebraic identities, statistical baselines) and
compares at the tolerance the acceptance gates use. Everything runs in
64-bit regardless of the configured training precision.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import (SynthSpeaker, inject_view_segments, make_mixture,
                   measure_snr_db, select_training_views, synth_utterance)
from .errors import DegenerateInput
from .fusion import (LstmParams, MvtfParams, ViewSet, augment_bias,
                     lstm_forward, mvtf_fuse, outer_product, pair_fuse,
                     replicate_views)
from .gradcheck import grad_check
from .separator import GridBlockParams, grid_block
from .signal import (StftConfig, istft, normalize_mixture,
                     reconstruction_region, si_sdr, si_sdr_loss, stft)
from .tensor import Tensor
from .training import (EARLY_STOP_AFTER, MAX_EPOCHS_HARD, TrainState,
                       clip_gradients, effective_max_epochs, lr_schedule_step)
from .visual import (SynthConfig, ViewProjectionParams, project_to_subspace,
                     synth_view_embeddings)

PERMUTATION_TOL = 1e-10
GRAD_TOL = 1e-4
ROUNDTRIP_TOL = 1e-6
SNR_TOL_DB = 1e-6
SCALE_INVARIANCE_TOL_DB = 1e-9
ORTHOGONAL_TOL_DB = 1e-6
NORMALIZE_TOL = 1e-6
MIXTURE_BAND_DB = 1.5
KS_LIMIT = 0.02
CLIP_TOL = 1e-10


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.suite:8s} {self.name:42s} {self.detail}"


def _random_views(rng, t_len=4, f=5, count=3):
    return [Tensor(rng.standard_normal((t_len, f))) for _ in range(count)]


# -- fusion invariants -----------------------------------------------------------


def fusion_checks(draws: int = 100) -> list[CheckResult]:
    results = []
    f, t_len = 5, 4

    worst = 0.0
    for d in range(draws):
        rng = np.random.default_rng(1000 + d)
        params = MvtfParams.init(f, rng)
        views = _random_views(rng, t_len, f)
        base = mvtf_fuse(ViewSet(views, ["a", "b", "c"]), params).data
        for perm in itertools.permutations(range(3)):
            out = mvtf_fuse(ViewSet([views[i] for i in perm],
                                    [str(i) for i in perm]), params).data
            worst = max(worst, float(np.abs(out - base).max()))
    results.append(CheckResult(
        "fusion", f"permutation invariance ({draws} draws, all orders)",
        worst < PERMUTATION_TOL, f"max dev {worst:.2e} < {PERMUTATION_TOL:.0e}"))

    rng = np.random.default_rng(7)
    oi = augment_bias(Tensor(rng.standard_normal((t_len, f))))
    oj = augment_bias(Tensor(rng.standard_normal((t_len, f))))
    raw = outer_product(oi, oj).data
    ok = (np.array_equal(raw[:, f, :], oj.data)
          and np.array_equal(raw[:, :, f], oi.data)
          and np.all(raw[:, f, f] == 1.0))
    results.append(CheckResult(
        "fusion", "unimodal capture in the raw outer product", ok,
        "last row/column reproduce the inputs, corner is 1, exactly"))

    params = MvtfParams.init(f, np.random.default_rng(8))
    v = Tensor(np.random.default_rng(9).standard_normal((t_len, f)))
    triple = mvtf_fuse(ViewSet([v, v, v], ["x", "x", "x"]), params)
    one_pair = pair_fuse(augment_bias(lstm_forward(v, params.lstm)),
                         augment_bias(lstm_forward(v, params.lstm)), params)
    ok = np.array_equal(triple.data, one_pair.data)
    results.append(CheckResult(
        "fusion", "self-pair collapse (identical views)", ok,
        "fused output equals the single pair output exactly"))

    replicated = mvtf_fuse(replicate_views(ViewSet([v], ["x"])), params)
    ok = np.array_equal(replicated.data, triple.data)
    results.append(CheckResult(
        "fusion", "replication equivalence (1 view vs explicit triple)", ok,
        "bit-identical outputs"))

    sym_params = MvtfParams.init(f, np.random.default_rng(10))
    ok = np.array_equal(pair_fuse(oi, oj, sym_params).data,
                        pair_fuse(oj, oi, sym_params).data)
    results.append(CheckResult(
        "fusion", "pair fusion is order-symmetric", ok, "exact equality"))
    return results


# -- gradient suite ----------------------------------------------------------------


def _gradient_cases(rng):
    """(name, op, inputs) triples covering every parameterized operation."""
    def rand(*shape):
        return Tensor(rng.standard_normal(shape))

    d_in, d_out = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    yield ("linear", lambda x, w, b: T.linear(x, w, b),
           [rand(3, d_in), rand(d_in, d_out), rand(d_out)])

    n = int(rng.integers(3, 9))
    yield ("layer_norm", lambda x, g, b: T.layer_norm(x, g, b),
           [rand(2, n), rand(n), rand(n)])

    t_len, d, f = int(rng.integers(4, 8)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
    yield ("conv_projection",
           lambda x, k, b: project_to_subspace(
               x, ViewProjectionParams(conv_kernel=k, conv_bias=b)),
           [rand(t_len, d), rand(3, d, f), rand(f)])

    f = int(rng.integers(2, 5))
    yield ("lstm",
           lambda h, wx, wh, b: lstm_forward(h, LstmParams(wx, wh, b)),
           [rand(4, f), rand(f, 4 * f) * 0.5, rand(f, 4 * f) * 0.5, rand(4 * f) * 0.1])

    f = int(rng.integers(2, 4))
    f1sq = (f + 1) ** 2

    def make_pair(oi, oj, g, bta, w, b):
        p = MvtfParams(lstm=None, pair_gamma=g, pair_beta=bta, pair_w=w, pair_b=b)
        return pair_fuse(augment_bias(oi), augment_bias(oj), p)

    yield ("pair_fuse", make_pair,
           [rand(3, f), rand(3, f), rand(f1sq), rand(f1sq),
            rand(f1sq, f) * 0.3, rand(f)])

    def make_mvtf(v1, v2, v3, wx, wh, lb, g, bta, w, b):
        p = MvtfParams(lstm=LstmParams(wx, wh, lb), pair_gamma=g, pair_beta=bta,
                       pair_w=w, pair_b=b)
        return mvtf_fuse(ViewSet([v1, v2, v3], ["a", "b", "c"]), p)

    yield ("mvtf_fuse", make_mvtf,
           [rand(3, f), rand(3, f), rand(3, f),
            rand(f, 4 * f) * 0.5, rand(f, 4 * f) * 0.5, rand(4 * f) * 0.1,
            rand(f1sq), rand(f1sq), rand(f1sq, f) * 0.3, rand(f)])

    h = 3

    def make_block(x, *flat):
        names = ["ln1_gamma", "ln1_beta",
                 "ff_wx", "ff_wh", "ff_b", "fb_wx", "fb_wh", "fb_b",
                 "ln2_gamma", "ln2_beta", "t_wx", "t_wh", "t_b",
                 "merge_w", "merge_b"]
        vals = dict(zip(names, flat))
        from .separator import RnnParams
        p = GridBlockParams(
            ln1_gamma=vals["ln1_gamma"], ln1_beta=vals["ln1_beta"],
            freq_fwd=RnnParams(vals["ff_wx"], vals["ff_wh"], vals["ff_b"]),
            freq_bwd=RnnParams(vals["fb_wx"], vals["fb_wh"], vals["fb_b"]),
            ln2_gamma=vals["ln2_gamma"], ln2_beta=vals["ln2_beta"],
            time_rnn=RnnParams(vals["t_wx"], vals["t_wh"], vals["t_b"]),
            merge_w=vals["merge_w"], merge_b=vals["merge_b"])
        return grid_block(x, p)

    yield ("grid_block", make_block,
           [rand(1, h, 4, 5),
            rand(h), rand(h),
            rand(h, h) * 0.5, rand(h, h) * 0.5, rand(h) * 0.1,
            rand(h, h) * 0.5, rand(h, h) * 0.5, rand(h) * 0.1,
            rand(2 * h), rand(2 * h),
            rand(2 * h, h) * 0.5, rand(h, h) * 0.5, rand(h) * 0.1,
            rand(h, h) * 0.5, rand(h) * 0.1])

    n = int(rng.integers(16, 64))
    yield ("si_sdr_loss", si_sdr_loss, [rand(2, n), rand(2, n)])


def gradient_checks(shapes_per_op: int = 3) -> list[CheckResult]:
    worst: dict[str, float] = {}
    with T.precision("f64"):
        for trial in range(shapes_per_op):
            rng = np.random.default_rng(31337 + trial)
            for name, op, inputs in _gradient_cases(rng):
                report = grad_check(op, inputs, name=name)
                worst[name] = max(worst.get(name, 0.0), report.max_rel_error)
    return [CheckResult("gradient", f"{name} ({shapes_per_op} shapes)",
                        err < GRAD_TOL, f"max rel err {err:.2e} < {GRAD_TOL:.0e}")
            for name, err in worst.items()]


# -- signal suite --------------------------------------------------------------------


def signal_checks() -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(404)
    cfg = StftConfig()

    sig = rng.standard_normal((2, 4 * cfg.n_fft))
    rec = istft(stft(Tensor(sig), cfg), cfg, sig.shape[1]).data
    region = reconstruction_region(cfg, sig.shape[1])
    rel = float(np.linalg.norm(rec[:, region] - sig[:, region])
                / np.linalg.norm(sig[:, region]))
    results.append(CheckResult(
        "signal", "istft(stft(x)) roundtrip", rel < ROUNDTRIP_TOL,
        f"relative error {rel:.2e} < {ROUNDTRIP_TOL:.0e}"))

    est = rng.standard_normal(512)
    ref = rng.standard_normal(512)
    base = si_sdr(est, ref)
    worst = max(abs(si_sdr(c * est, ref) - base) for c in (0.5, 3.0, 100.0))
    results.append(CheckResult(
        "signal", "si_sdr scale invariance (c in 0.5, 3, 100)",
        worst < SCALE_INVARIANCE_TOL_DB, f"max dev {worst:.2e} dB"))

    noise = rng.standard_normal(512)
    noise -= (noise @ ref) / (ref @ ref) * ref  # Gram-Schmidt: orthogonal part
    analytic = 10.0 * np.log10((ref @ ref) / (noise @ noise))
    measured = si_sdr(ref + noise, ref)
    dev = abs(measured - analytic)
    results.append(CheckResult(
        "signal", "si_sdr of orthogonal noise equals analytic SNR",
        dev < ORTHOGONAL_TOL_DB, f"|{measured:.6f} - {analytic:.6f}| = {dev:.2e} dB"))

    batch = normalize_mixture(rng.standard_normal((4, 2048)) * 5.0)
    devs = np.abs(batch.waveform.data.std(axis=1) - 1.0)
    results.append(CheckResult(
        "signal", "normalized waveforms have unit deviation",
        float(devs.max()) < NORMALIZE_TOL, f"max |std-1| = {devs.max():.2e}"))

    try:
        normalize_mixture(np.zeros((1, 64)))
        degenerate_ok = False
    except DegenerateInput:
        degenerate_ok = True
    results.append(CheckResult(
        "signal", "zero-variance input is rejected", degenerate_ok,
        "DegenerateInput raised"))
    return results


# -- data suite ---------------------------------------------------------------------


def data_checks(snr_draws: int = 10000, mixture_items: int = 500) -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(512)

    worst = 0.0
    requests = [-10.0, 10.0] + [float(rng.uniform(-10, 10)) for _ in range(18)]
    for trial, snr in enumerate(requests):
        spk_a = SynthSpeaker.create("a", 100 + trial)
        spk_b = SynthSpeaker.create("b", 200 + trial)
        target = synth_utterance(spk_a, 1.0, trial)
        interferer = synth_utterance(spk_b, 1.0, trial)
        mixture = make_mixture(target, interferer, snr)
        remeasured = measure_snr_db(target, mixture - target)
        worst = max(worst, abs(remeasured - snr))
    results.append(CheckResult(
        "data", "re-measured mixture SNR matches the request",
        worst < SNR_TOL_DB, f"max dev {worst:.2e} dB (incl. +/-10 endpoints)"))

    draws = np.random.default_rng(99).uniform(-10.0, 10.0, size=snr_draws)
    sorted_draws = np.sort(draws)
    cdf = (sorted_draws + 10.0) / 20.0
    ecdf_hi = np.arange(1, snr_draws + 1) / snr_draws
    ecdf_lo = np.arange(0, snr_draws) / snr_draws
    ks = float(max(np.abs(ecdf_hi - cdf).max(), np.abs(ecdf_lo - cdf).max()))
    results.append(CheckResult(
        "data", f"SNR draw uniformity over {snr_draws} samples",
        ks < KS_LIMIT, f"KS statistic {ks:.4f} < {KS_LIMIT}"))

    ok = (select_training_views("front3", np.random.default_rng(0)) == ["front"] * 3)
    r3 = select_training_views("random3", np.random.default_rng(1))
    ok = ok and len(set(r3)) == 3
    r1 = select_training_views("repeat1", np.random.default_rng(2))
    ok = ok and len(set(r1)) == 1 and len(r1) == 3
    results.append(CheckResult(
        "data", "view selection strategies", ok,
        "front3 fixed, random3 distinct, repeat1 single label"))

    t_v = 25
    cfg = SynthConfig(dim=8)
    wave = synth_utterance(SynthSpeaker.create("w", 1), 1.0, 0)
    front = synth_view_embeddings(wave, "front", cfg, 3)
    alt = synth_view_embeddings(wave, "left30", cfg, 3)
    inject_ok = True
    detail = ""
    for trial in range(200):
        out = inject_view_segments(front, alt, np.random.default_rng(trial))
        changed = np.nonzero(np.any(out.embeddings.data != front.embeddings.data,
                                    axis=1))[0]
        start, end = changed[0], changed[-1] + 1
        length = end - start
        if not (np.ceil(0.2 * t_v) <= length <= np.floor(0.4 * t_v)):
            inject_ok, detail = False, f"length {length} outside 20-40% of {t_v}"
            break
        if start < np.ceil(0.3 * t_v) or end > np.floor(0.8 * t_v):
            inject_ok, detail = False, f"window [{start},{end}) escapes 30-80%"
            break
        inside = out.embeddings.data[start:end]
        if not (np.array_equal(inside, alt.embeddings.data[start:end])
                and np.array_equal(np.delete(out.embeddings.data, range(start, end), 0),
                                   np.delete(front.embeddings.data, range(start, end), 0))):
            inject_ok, detail = False, "frames changed outside the window"
            break
    results.append(CheckResult(
        "data", "injected segments respect length and containment",
        inject_ok, detail or "200 trials: 20-40% length inside 30-80% positions"))

    scores = []
    mix_rng = np.random.default_rng(2024)
    for i in range(mixture_items):
        spk_t = SynthSpeaker.create(f"t{i % 7}", 300 + i % 7)
        spk_i = SynthSpeaker.create(f"i{i % 5}", 400 + i % 5)
        target = synth_utterance(spk_t, 1.0, 1000 + i)
        interferer = synth_utterance(spk_i, 1.0, 2000 + i)
        snr = float(mix_rng.uniform(-10, 10))
        scores.append(si_sdr(make_mixture(target, interferer, snr), target))
    mean = float(np.mean(scores))
    results.append(CheckResult(
        "data", f"mixture-vs-target SI-SDR over {mixture_items} items",
        -MIXTURE_BAND_DB <= mean <= MIXTURE_BAND_DB,
        f"mean {mean:+.3f} dB within [-1.5, +1.5]"))
    return results


# -- protocol suite -------------------------------------------------------------------


def protocol_checks() -> list[CheckResult]:
    results = []

    st = TrainState(lr=1e-3)
    for val in (1.0, 2.0, 3.0, 4.0):
        st = lr_schedule_step(st, val)
    ok = st.lr == 1e-3 and st.epochs_since_improve == 0 and not st.stopped
    results.append(CheckResult(
        "protocol", "improving epochs keep the learning rate", ok,
        f"lr stays {st.lr:.0e}"))

    st = TrainState(lr=1e-3, best_val=5.0)
    lrs = []
    for _ in range(10):
        st = lr_schedule_step(st, 0.0)
        lrs.append(st.lr)
    halvings_ok = (lrs[2] == 5e-4 and lrs[5] == 2.5e-4 and lrs[8] == 1.25e-4
                   and all(lr == 1e-3 * 2.0 ** -(k // 3) for k, lr in
                           zip(range(1, 11), [1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 2.5e-4,
                                              2.5e-4, 2.5e-4, 1.25e-4, 1.25e-4])))
    results.append(CheckResult(
        "protocol", "lr halves exactly after every 3 flat epochs",
        lrs[2] == 5e-4 and lrs[5] == 2.5e-4 and halvings_ok,
        "1e-3 -> 5e-4 -> 2.5e-4 -> 1.25e-4"))
    results.append(CheckResult(
        "protocol", f"early stop after {EARLY_STOP_AFTER} flat epochs",
        st.stopped and st.epochs_since_improve == 10, "stop flag set"))

    g = [np.array([3.0, 4.0])]
    clip_gradients(g, 1.0)
    single_ok = np.allclose(g[0], [0.6, 0.8], atol=1e-15)
    rng = np.random.default_rng(5)
    grads = [rng.standard_normal((4, 4)), rng.standard_normal(10)]
    clip_gradients(grads, 1.0)
    norm = np.sqrt(sum(float((a ** 2).sum()) for a in grads))
    small = [np.array([0.3, 0.4])]
    before = small[0].copy()
    clip_gradients(small, 1.0)
    results.append(CheckResult(
        "protocol", "gradient clipping",
        single_ok and norm <= 1.0 + CLIP_TOL and np.array_equal(small[0], before),
        f"[3,4] -> [0.6,0.8]; clipped global norm {norm:.12f} <= 1; "
        "small gradients untouched"))

    results.append(CheckResult(
        "protocol", f"epoch budget capped at {MAX_EPOCHS_HARD}",
        effective_max_epochs(1000) == MAX_EPOCHS_HARD
        and effective_max_epochs(30) == 30,
        f"effective_max_epochs(1000) == {MAX_EPOCHS_HARD}"))
    return results


def run_all(fast: bool = False) -> list[CheckResult]:
    with T.precision("f64"):
        results = []
        results += fusion_checks(draws=20 if fast else 100)
        results += gradient_checks(shapes_per_op=1 if fast else 3)
        results += signal_checks()
        results += data_checks(mixture_items=150 if fast else 500)
        results += protocol_checks()
    return results
