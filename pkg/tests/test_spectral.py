import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurodesign.signal import Epoch
from neurodesign.spectral import (
    BAND_ORDER,
    EEG_BANDS,
    PsdEstimate,
    band_powers,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
    welch_psd,
)

FS = 256.0


def epoch_from(data, fs=FS):
    return Epoch(np.atleast_2d(np.asarray(data, dtype=float)), 0.0, fs)


def full_length_periodogram(x, fs):
    """Independent oracle: single unwindowed DFT periodogram, one-sided density."""
    n = len(x)
    spectrum = np.fft.rfft(x - x.mean())
    power = (np.abs(spectrum) ** 2) / (fs * n)
    power[1:-1] *= 2
    freqs = np.fft.rfftfreq(n, 1 / fs)
    return freqs, power


class TestWelch:
    def test_sinusoid_peak_bin(self):
        t = np.arange(int(8 * FS)) / FS
        x = np.sin(2 * np.pi * 10.0 * t)
        psd = welch_psd(epoch_from(x), seg_samples=256, overlap_fraction=0.5)
        peak = psd.freqs[np.argmax(psd.power[0])]
        bin_width = psd.freqs[1] - psd.freqs[0]
        assert abs(peak - 10.0) <= bin_width
        # oracle: the full-length periodogram peaks at the same frequency
        of, op = full_length_periodogram(x, FS)
        assert abs(of[np.argmax(op)] - 10.0) <= of[1] - of[0]

    def test_all_zero_epoch(self):
        psd = welch_psd(epoch_from(np.zeros(2048)))
        assert np.all(psd.power == 0)

    def test_parseval_white_noise(self, rng):
        x = rng.standard_normal(int(30 * FS))
        x /= x.std()
        psd = welch_psd(epoch_from(x))
        integral = float(np.trapezoid(psd.power[0], psd.freqs))
        assert abs(integral - 1.0) < 0.10

    def test_freq_axis_spans_nyquist(self, rng):
        psd = welch_psd(epoch_from(rng.standard_normal(512)))
        assert psd.freqs[0] == 0.0
        assert psd.freqs[-1] == FS / 2

    def test_segment_longer_than_epoch(self):
        with pytest.raises(ValueError):
            welch_psd(epoch_from(np.zeros(128)), seg_samples=256)

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            welch_psd(epoch_from(np.zeros(512)), seg_samples=256, overlap_fraction=1.0)

    def test_power_linearity(self, rng):
        x = rng.standard_normal(2048)
        base = welch_psd(epoch_from(x))
        scaled = welch_psd(epoch_from(3.5 * x))
        nonzero = base.power > 0
        ratio = scaled.power[nonzero] / base.power[nonzero]
        assert np.max(np.abs(ratio - 3.5 ** 2)) < 1e-9 * 3.5 ** 2

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative_and_monotone_freqs(self, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((2, 512)) * r.uniform(0.1, 50)
        psd = welch_psd(Epoch(x, 0.0, FS))
        assert np.all(psd.power >= 0)
        assert np.all(np.diff(psd.freqs) > 0)


class TestBandPowers:
    def test_alpha_indicator_integrates_to_five(self):
        freqs = np.arange(0.0, 129.0, 1.0)
        power = np.where((freqs >= 8) & (freqs < 13), 1.0, 0.0)[None, :]
        bp = band_powers(PsdEstimate(freqs, power))
        alpha = bp.powers[0, BAND_ORDER.index("alpha")]
        assert alpha == pytest.approx(5.0)
        for name in BAND_ORDER:
            if name != "alpha":
                assert bp.powers[0, BAND_ORDER.index(name)] == 0.0

    def test_all_zero_psd(self):
        freqs = np.arange(0.0, 129.0, 0.5)
        bp = band_powers(PsdEstimate(freqs, np.zeros((3, freqs.size))))
        assert np.all(bp.powers == 0)

    def test_sinusoid_alpha_dominant(self):
        t = np.arange(int(8 * FS)) / FS
        data = np.stack([np.sin(2 * np.pi * 10 * t), 0.5 * np.sin(2 * np.pi * 10 * t + 1.0)])
        bp = band_powers(welch_psd(epoch_from(data)))
        alpha_idx = BAND_ORDER.index("alpha")
        for ch in range(2):
            others = np.delete(bp.powers[ch], alpha_idx)
            assert bp.powers[ch, alpha_idx] > others.max()

    def test_range_too_short(self):
        freqs = np.arange(0.0, 30.0, 0.5)
        with pytest.raises(ValueError):
            band_powers(PsdEstimate(freqs, np.ones((1, freqs.size))))

    def test_additive_in_psd(self, rng):
        freqs = np.arange(0.0, 129.0, 0.5)
        p1 = rng.uniform(0, 2, size=(2, freqs.size))
        p2 = rng.uniform(0, 2, size=(2, freqs.size))
        v1 = band_powers(PsdEstimate(freqs, p1)).powers
        v2 = band_powers(PsdEstimate(freqs, p2)).powers
        v12 = band_powers(PsdEstimate(freqs, p1 + p2)).powers
        assert np.allclose(v12, v1 + v2, rtol=0, atol=1e-12)

    def test_gamma_band_capped_at_45(self):
        assert EEG_BANDS["gamma"] == (30.0, 45.0)


class TestPca:
    def test_rank_one_line(self):
        t = np.linspace(-1, 1, 50)
        data = np.stack([t, 2 * t], axis=1)
        model = pca_fit(data, 1)
        assert model.explained_variance_ratio[0] >= 0.999

    def test_matches_covariance_eigvecs(self, rng):
        cov = np.array([[4.0, 1.2], [1.2, 0.5]])
        data = rng.multivariate_normal([1.0, -2.0], cov, size=400)
        model = pca_fit(data, 2)
        # oracle: eigendecomposition of the sample covariance, recomputed here
        centered = data - data.mean(axis=0)
        eigvals, eigvecs = np.linalg.eigh(centered.T @ centered / (len(data) - 1))
        order = np.argsort(eigvals)[::-1]
        for i, col in enumerate(order):
            oracle_vec = eigvecs[:, col]
            cos = abs(float(model.components[i] @ oracle_vec))
            angle = np.degrees(np.arccos(np.clip(cos, -1, 1)))
            assert angle < 2.0

    def test_component_count_out_of_range(self, rng):
        data = rng.standard_normal((20, 4))
        with pytest.raises(ValueError):
            pca_fit(data, 5)
        with pytest.raises(ValueError):
            pca_fit(data, 0)

    def test_orthonormal_components(self, rng):
        data = rng.standard_normal((60, 6)) @ rng.standard_normal((6, 6))
        model = pca_fit(data, 4)
        gram = model.components @ model.components.T
        assert np.max(np.abs(gram - np.eye(4))) < 1e-8
        evr = model.explained_variance_ratio
        assert np.all(evr >= 0) and np.all(evr <= 1)
        assert np.all(np.diff(evr) <= 1e-12)
        assert evr.sum() <= 1 + 1e-12

    def test_transform_decorrelates(self, rng):
        data = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 5))
        model = pca_fit(data, 3)
        projected = pca_transform(model, data)
        cov = np.cov(projected.T)
        scale = np.abs(np.diag(cov)).max()
        off = cov - np.diag(np.diag(cov))
        assert np.max(np.abs(off)) < 1e-6 * scale

    def test_full_reconstruction(self, rng):
        data = rng.standard_normal((40, 5))
        model = pca_fit(data, 5)
        recon = pca_inverse_transform(model, pca_transform(model, data))
        scale = np.abs(data).max()
        assert np.max(np.abs(recon - data)) < 1e-6 * scale

    def test_sign_convention_deterministic(self, rng):
        data = rng.standard_normal((30, 4))
        a = pca_fit(data, 3)
        b = pca_fit(data, 3)
        assert np.array_equal(a.components, b.components)
        for row in a.components:
            assert row[np.argmax(np.abs(row))] > 0
