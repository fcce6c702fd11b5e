"""Signal frontend: normalization, STFT/iSTFT, packing, SI-SDR."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvtf import signal as S
from mvtf import tensor as T
from mvtf.errors import DegenerateInput, InputError, ShapeError
from mvtf.gradcheck import grad_check
from mvtf.tensor import Tensor


class TestNormalize:
    def test_unit_alternation_unchanged(self):
        batch = S.normalize_mixture(np.array([[1.0, -1.0, 1.0, -1.0]]))
        np.testing.assert_array_equal(batch.waveform.data, [[1, -1, 1, -1]])
        np.testing.assert_array_equal(batch.sigma.data, [1.0])

    def test_scale_two(self):
        batch = S.normalize_mixture(np.array([[2.0, -2.0, 2.0, -2.0]]))
        np.testing.assert_array_equal(batch.waveform.data, [[1, -1, 1, -1]])
        np.testing.assert_array_equal(batch.sigma.data, [2.0])

    def test_zero_input_rejected_with_index(self):
        with pytest.raises(DegenerateInput, match="item 1"):
            S.normalize_mixture(np.stack([np.ones(8) * np.linspace(0, 1, 8),
                                          np.zeros(8)]))

    def test_no_mean_subtraction(self, rng):
        x = rng.standard_normal((2, 256)) + 5.0
        batch = S.normalize_mixture(x)
        sigma = x.std(axis=1)
        np.testing.assert_allclose(batch.waveform.data, x / sigma[:, None],
                                   rtol=1e-12)

    def test_unit_std_within_tolerance(self, rng):
        batch = S.normalize_mixture(rng.standard_normal((5, 1000)) * 37.0)
        np.testing.assert_allclose(batch.waveform.data.std(axis=1), 1.0,
                                   atol=1e-6)


class TestStftConfig:
    def test_bins(self):
        assert S.StftConfig().freq_bins == 129

    def test_hop_must_divide(self):
        with pytest.raises(InputError):
            S.StftConfig(n_fft=256, hop=100)

    def test_frame_count_formula(self):
        cfg = S.StftConfig(n_fft=256, hop=128)
        assert cfg.frame_count(256) == 1
        assert cfg.frame_count(16000) == 1 + (16000 - 256) // 128


class TestStft:
    def test_zero_waveform(self):
        cfg = S.StftConfig()
        spec = S.stft(Tensor(np.zeros((1, 1024))), cfg)
        assert not spec.real_part.data.any()
        assert not spec.imag_part.data.any()

    def test_pure_cosine_peaks_at_bin(self):
        cfg = S.StftConfig()
        k = 17
        t = np.arange(4096)
        x = np.cos(2 * np.pi * k * t / cfg.n_fft)
        spec = S.stft(Tensor(x[None, :]), cfg)
        mag = np.hypot(spec.real_part.data, spec.imag_part.data)[0]
        assert (mag.argmax(axis=1) == k).all()

    def test_matches_fft_oracle(self, rng):
        # Independent oracle: numpy's FFT of the same windowed frames.
        cfg = S.StftConfig()
        x = rng.standard_normal(1024)
        spec = S.stft(Tensor(x[None, :]), cfg)
        for t in range(spec.real_part.shape[1]):
            frame = x[t * cfg.hop:t * cfg.hop + cfg.n_fft] * cfg.window
            ref = np.fft.rfft(frame)
            np.testing.assert_allclose(spec.real_part.data[0, t], ref.real,
                                       atol=1e-10)
            np.testing.assert_allclose(spec.imag_part.data[0, t], ref.imag,
                                       atol=1e-10)

    def test_single_frame(self):
        cfg = S.StftConfig()
        spec = S.stft(Tensor(np.ones((1, 256))), cfg)
        assert spec.real_part.shape == (1, 1, 129)

    def test_too_short_rejected(self):
        with pytest.raises(ShapeError):
            S.stft(Tensor(np.zeros((1, 100))), S.StftConfig())


class TestIstft:
    def test_roundtrip_random_second(self, rng):
        cfg = S.StftConfig()
        x = rng.standard_normal((2, 16000))
        rec = S.istft(S.stft(Tensor(x), cfg), cfg, 16000).data
        region = S.reconstruction_region(cfg, 16000)
        err = np.abs(rec[:, region] - x[:, region]).max()
        assert err < 1e-6 * np.abs(x).max()

    def test_roundtrip_sinusoid_relative_l2(self):
        cfg = S.StftConfig()
        t = np.arange(8000)
        x = np.sin(2 * np.pi * 440 * t / S.SAMPLE_RATE)[None, :]
        rec = S.istft(S.stft(Tensor(x), cfg), cfg, 8000).data
        region = S.reconstruction_region(cfg, 8000)
        rel = np.linalg.norm(rec[:, region] - x[:, region]) / np.linalg.norm(x[:, region])
        assert rel < 1e-6

    def test_zero_spectrogram(self):
        cfg = S.StftConfig()
        spec = S.Spectrogram(T.zeros((1, 5, 129)), T.zeros((1, 5, 129)), cfg)
        assert not S.istft(spec, cfg, 768).data.any()

    def test_length_padding(self, rng):
        cfg = S.StftConfig(n_fft=8, hop=4)
        x = rng.standard_normal((1, 32))
        rec = S.istft(S.stft(Tensor(x), cfg), cfg, 40)
        assert rec.shape == (1, 40)
        assert not rec.data[:, 32:].any()

    def test_matches_irfft_oracle(self, rng):
        cfg = S.StftConfig(n_fft=16, hop=8)
        real = rng.standard_normal(9)
        imag = rng.standard_normal(9)
        spec = S.Spectrogram(Tensor(real[None, None, :]),
                             Tensor(imag[None, None, :]), cfg)
        frame = S.istft(spec, cfg, 16).data[0]
        full = real + 1j * imag
        ref = np.fft.irfft(full, 16) * cfg.window
        env = cfg.window * cfg.window
        expected = np.where(env > 1e-12, ref / np.where(env > 1e-12, env, 1.0), 0.0)
        np.testing.assert_allclose(frame, expected, atol=1e-12)


class TestPacking:
    def test_pack_shape_and_order(self, rng):
        cfg = S.StftConfig()
        spec = S.Spectrogram(Tensor(rng.standard_normal((2, 3, 129))),
                             Tensor(rng.standard_normal((2, 3, 129))), cfg)
        packed = S.pack_spectrogram(spec)
        assert packed.shape == (2, 2, 3, 129)
        np.testing.assert_array_equal(packed.data[:, 0], spec.real_part.data)
        np.testing.assert_array_equal(packed.data[:, 1], spec.imag_part.data)

    def test_purely_real_has_zero_imag_channel(self, rng):
        spec = S.Spectrogram(Tensor(rng.standard_normal((1, 4, 9))),
                             T.zeros((1, 4, 9)))
        assert not S.pack_spectrogram(spec).data[:, 1].any()

    def test_unpack_inverts_pack(self, rng):
        spec = S.Spectrogram(Tensor(rng.standard_normal((1, 4, 9))),
                             Tensor(rng.standard_normal((1, 4, 9))))
        back = S.unpack_spectrogram(S.pack_spectrogram(spec))
        np.testing.assert_array_equal(back.real_part.data, spec.real_part.data)
        np.testing.assert_array_equal(back.imag_part.data, spec.imag_part.data)


class TestSiSdr:
    def test_perfect_estimate_hits_cap(self, rng):
        x = rng.standard_normal(128)
        assert S.si_sdr(x, x) == 60.0

    def test_scaled_estimate_hits_cap(self, rng):
        x = rng.standard_normal(128)
        assert S.si_sdr(2.0 * x, x) == 60.0

    def test_unit_example_zero_db(self):
        assert S.si_sdr(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == 0.0

    def test_zero_reference_rejected(self):
        with pytest.raises(DegenerateInput):
            S.si_sdr(np.ones(4), np.zeros(4))

    def test_zero_estimate_negative_cap(self, rng):
        assert S.si_sdr(np.zeros(16), rng.standard_normal(16)) == -60.0

    @pytest.mark.parametrize("c", [0.5, 3.0, 100.0])
    def test_scale_invariance(self, rng, c):
        est = rng.standard_normal(256)
        ref = rng.standard_normal(256)
        assert abs(S.si_sdr(c * est, ref) - S.si_sdr(est, ref)) < 1e-9

    def test_orthogonal_noise_analytic(self, rng):
        ref = rng.standard_normal(512)
        noise = rng.standard_normal(512)
        noise -= (noise @ ref) / (ref @ ref) * ref
        expected = 10 * np.log10((ref @ ref) / (noise @ noise))
        assert abs(S.si_sdr(ref + noise, ref) - expected) < 1e-6


class TestSiSdrLoss:
    def test_gradients(self, rng):
        inputs = [Tensor(rng.standard_normal((2, 64))) for _ in range(2)]
        assert grad_check(S.si_sdr_loss, inputs).max_rel_error < 1e-4

    def test_matches_metric_mean(self, rng):
        est = rng.standard_normal((3, 200))
        ref = rng.standard_normal((3, 200))
        loss = S.si_sdr_loss(Tensor(est), Tensor(ref)).item()
        per_item = [S.si_sdr(est[i], ref[i]) for i in range(3)]
        assert abs(loss + np.mean(per_item)) < 1e-9

    def test_invariant_to_positive_rescaling(self, rng):
        est = Tensor(rng.standard_normal((2, 64)))
        ref = Tensor(rng.standard_normal((2, 64)))
        a = S.si_sdr_loss(est, ref).item()
        b = S.si_sdr_loss(est * 7.5, ref).item()
        assert abs(a - b) < 1e-9

    def test_near_perfect_fit_goes_very_negative(self, rng):
        ref = rng.standard_normal((2, 64))
        est = ref + 1e-4 * rng.standard_normal((2, 64))
        assert S.si_sdr_loss(Tensor(est), Tensor(ref)).item() < -50.0


class TestWav:
    def test_float_roundtrip(self, tmp_path, rng):
        x = (rng.standard_normal(1600) * 0.1)
        path = tmp_path / "a.wav"
        S.write_wav(path, x)
        back = S.read_wav(path)
        np.testing.assert_allclose(back, x, atol=1e-7)

    def test_pcm16_scaling(self, tmp_path):
        import scipy.io.wavfile
        path = tmp_path / "b.wav"
        scipy.io.wavfile.write(path, 16000, (np.ones(10) * 16384).astype(np.int16))
        np.testing.assert_allclose(S.read_wav(path), 0.5)

    def test_wrong_rate_rejected(self, tmp_path):
        import scipy.io.wavfile
        path = tmp_path / "c.wav"
        scipy.io.wavfile.write(path, 8000, np.zeros(10, dtype=np.float32))
        with pytest.raises(InputError):
            S.read_wav(path)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.5, 3.0, 100.0]))
def test_si_sdr_scale_invariance_property(seed, c):
    rng = np.random.default_rng(seed)
    est = rng.standard_normal(64)
    ref = rng.standard_normal(64)
    assert abs(S.si_sdr(c * est, ref) - S.si_sdr(est, ref)) < 1e-9
