"""Visual pipeline: synthetic embeddings, file ingestion, temporal
alignment, and the shared convolution projection."""

import numpy as np
import pytest

from mvtf import tensorio
from mvtf import tensor as T
from mvtf.errors import DegenerateInput, FormatError, InputError
from mvtf.gradcheck import grad_check
from mvtf.tensor import Tensor
from mvtf.visual import (SynthConfig, ViewEmbeddingSeq, ViewProjectionParams,
                         VIEW_LABELS, VIEW_NOISE_SIGMA, load_embeddings,
                         project_to_subspace, save_embeddings,
                         synth_view_embeddings, upsample_time)


@pytest.fixture
def wave(rng):
    return rng.standard_normal(16000) * 0.1


class TestSynth:
    def test_deterministic(self, wave):
        cfg = SynthConfig(dim=16)
        a = synth_view_embeddings(wave, "left30", cfg, seed=7)
        b = synth_view_embeddings(wave, "left30", cfg, seed=7)
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)
        assert a.view_label == "left30"
        assert a.fps == 25

    def test_unknown_view_rejected(self, wave):
        with pytest.raises(InputError):
            synth_view_embeddings(wave, "behind", SynthConfig(), seed=0)

    def test_silence_gives_noise_around_view_bias(self):
        cfg = SynthConfig(dim=8, noise=0.0)
        seq = synth_view_embeddings(np.zeros(16000), "left60", cfg, seed=0)
        # Constant content signal: every frame identical (pure bias).
        np.testing.assert_allclose(
            seq.embeddings.data,
            np.broadcast_to(seq.embeddings.data[0], (25, 8)), atol=1e-12)

    def test_views_share_content_without_distortion(self, wave):
        cfg = SynthConfig(dim=8, noise=0.0, distortion=False)
        a = synth_view_embeddings(wave, "front", cfg, seed=3)
        b = synth_view_embeddings(wave, "top", cfg, seed=3)
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)

    def test_noise_grows_away_from_front(self, wave):
        cfg = SynthConfig(dim=32, distortion=False)
        clean = synth_view_embeddings(wave, "front",
                                      SynthConfig(dim=32, noise=0.0,
                                                  distortion=False), seed=5)
        deviations = {}
        for label in VIEW_LABELS:
            seq = synth_view_embeddings(wave, label, cfg, seed=5)
            deviations[label] = np.sqrt(
                ((seq.embeddings.data - clean.embeddings.data) ** 2).mean())
        assert deviations["front"] < deviations["down"] < deviations["left60"] \
            < deviations["top"]

    def test_difficulty_ordering_constants(self):
        s = VIEW_NOISE_SIGMA
        assert s["front"] < s["down"] == s["left30"] == s["right30"] \
            < s["left60"] == s["right60"] < s["top"]

    def test_frame_count(self, wave):
        seq = synth_view_embeddings(wave, "front", SynthConfig(dim=4), seed=0)
        assert seq.embeddings.shape == (25, 4)


class TestFileIngestion:
    def test_roundtrip_bit_identical(self, tmp_path, rng):
        seq = ViewEmbeddingSeq(Tensor(rng.standard_normal((50, 64))), "front")
        path = tmp_path / "rec0_front.mvt"
        save_embeddings(path, seq)
        back = load_embeddings(path)
        np.testing.assert_array_equal(back.embeddings.data, seq.embeddings.data)
        assert back.view_label == "front"
        assert back.fps == 25

    def test_truncated_rejected(self, tmp_path, rng):
        path = tmp_path / "cut_front.mvt"
        blob = tensorio.tensor_bytes(rng.standard_normal((10, 4)))
        path.write_bytes(blob[:-9])
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_rank3_rejected(self, tmp_path, rng):
        path = tmp_path / "r3_front.mvt"
        tensorio.save_tensor(path, rng.standard_normal((2, 3, 4)))
        with pytest.raises(FormatError):
            load_embeddings(path)


class TestUpsample:
    def test_two_point_ramp(self):
        seq = ViewEmbeddingSeq(Tensor([[0.0], [1.0]]), "front")
        out = upsample_time(seq, 3)
        np.testing.assert_allclose(out.data, [[0.0], [0.5], [1.0]])

    def test_same_length_is_identity(self, rng):
        emb = rng.standard_normal((7, 3))
        out = upsample_time(ViewEmbeddingSeq(Tensor(emb), "x"), 7)
        np.testing.assert_array_equal(out.data, emb)

    def test_constant_stays_constant(self):
        seq = ViewEmbeddingSeq(Tensor(np.full((4, 2), 3.5)), "x")
        np.testing.assert_array_equal(upsample_time(seq, 11).data,
                                      np.full((11, 2), 3.5))

    def test_endpoints_preserved(self, rng):
        emb = rng.standard_normal((9, 5))
        out = upsample_time(ViewEmbeddingSeq(Tensor(emb), "x"), 40).data
        np.testing.assert_array_equal(out[0], emb[0])
        np.testing.assert_array_equal(out[-1], emb[-1])

    def test_monotone_inputs_stay_monotone(self):
        emb = np.cumsum(np.abs(np.random.default_rng(3).standard_normal((6, 4))),
                        axis=0)
        out = upsample_time(ViewEmbeddingSeq(Tensor(emb), "x"), 23).data
        assert (np.diff(out, axis=0) >= -1e-12).all()


class TestProjection:
    def test_pointwise_identity(self, rng):
        d = 5
        kernel = np.zeros((1, d, d))
        kernel[0] = np.eye(d)
        params = ViewProjectionParams(Tensor(kernel), T.zeros(d))
        x = rng.standard_normal((6, d))
        out = project_to_subspace(Tensor(x), params)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_zero_input_gives_bias(self, rng):
        params = ViewProjectionParams(Tensor(rng.standard_normal((3, 4, 6))),
                                      Tensor(rng.standard_normal(6)))
        out = project_to_subspace(T.zeros((5, 4)), params)
        np.testing.assert_allclose(out.data,
                                   np.broadcast_to(params.conv_bias.data, (5, 6)))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(InputError):
            ViewProjectionParams(Tensor(rng.standard_normal((2, 4, 6))),
                                 T.zeros(6))

    def test_gradients(self, rng):
        inputs = [Tensor(rng.standard_normal((10, 8))),
                  Tensor(rng.standard_normal((3, 8, 6))),
                  Tensor(rng.standard_normal(6))]
        report = grad_check(
            lambda x, k, b: project_to_subspace(
                x, ViewProjectionParams(conv_kernel=k, conv_bias=b)),
            inputs, name="projection")
        assert report.max_rel_error < 1e-4

    def test_commutes_with_time_shift_in_interior(self, rng):
        params = ViewProjectionParams.init(4, 6, k=3,
                                           rng=np.random.default_rng(5))
        x = rng.standard_normal((12, 4))
        shifted = np.roll(x, 2, axis=0)
        out = project_to_subspace(Tensor(x), params).data
        out_shifted = project_to_subspace(Tensor(shifted), params).data
        np.testing.assert_allclose(out_shifted[3:-1], np.roll(out, 2, axis=0)[3:-1],
                                   atol=1e-6)

    def test_batched_matches_single(self, rng):
        params = ViewProjectionParams.init(4, 6, k=3,
                                           rng=np.random.default_rng(5))
        x = rng.standard_normal((2, 9, 4))
        batched = project_to_subspace(Tensor(x), params).data
        for i in range(2):
            single = project_to_subspace(Tensor(x[i]), params).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)


def test_short_sequence_rejected():
    with pytest.raises(DegenerateInput):
        ViewEmbeddingSeq(Tensor(np.zeros((1, 4))), "front")
