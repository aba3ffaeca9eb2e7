"""Spectral features: Welch PSD, canonical band powers, PCA projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .signal import Epoch

# Canonical EEG bands. The gamma band is integrated only up to 45 Hz because
# the preprocessing band-pass caps the spectrum there; the nominal 100 Hz
# upper edge is unreachable in this pipeline.
EEG_BANDS: dict[str, tuple[float, float]] = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
}
BAND_ORDER = ("delta", "theta", "alpha", "beta", "gamma")

LOG_POWER_FLOOR = 1e-20


@dataclass
class PsdEstimate:
    """One-sided power spectral density per channel, uV^2/Hz."""

    freqs: np.ndarray   # (bins,) ascending, Hz
    power: np.ndarray   # (channels, bins), >= 0

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        self.power = np.atleast_2d(np.asarray(self.power, dtype=np.float64))


@dataclass
class BandPowerVector:
    """Integrated band power per channel, band order delta..gamma."""

    powers: np.ndarray  # (channels, 5)

    def __post_init__(self):
        self.powers = np.atleast_2d(np.asarray(self.powers, dtype=np.float64))

    def flattened(self) -> np.ndarray:
        return self.powers.reshape(-1)


def welch_psd(epoch: Epoch, seg_samples: int | None = None, overlap_fraction: float = 0.5) -> PsdEstimate:
    """Welch PSD of one epoch: Hann-windowed, mean-detrended averaged periodograms.

    Defaults to 1-second segments with 50% overlap. One-sided density
    scaling, so the integral over frequency approximates the signal
    variance (Parseval).
    """
    if seg_samples is None:
        seg_samples = min(int(round(epoch.sample_rate)), epoch.n_samples)
    if seg_samples > epoch.n_samples:
        raise ValueError(f"segment of {seg_samples} samples exceeds epoch length {epoch.n_samples}")
    if not 0 <= overlap_fraction < 1:
        raise ValueError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    freqs, power = sps.welch(
        epoch.data,
        fs=epoch.sample_rate,
        window="hann",
        nperseg=seg_samples,
        noverlap=int(seg_samples * overlap_fraction),
        detrend="constant",
        scaling="density",
        axis=1,
    )
    return PsdEstimate(freqs=freqs, power=power)


def band_powers(psd: PsdEstimate) -> BandPowerVector:
    """Integrate the PSD over each canonical band.

    Riemann sum over the bins falling in [low, high) per band (the final
    gamma band closes at 45 Hz), which makes the band vector exactly
    additive in the PSD.
    """
    freqs = psd.freqs
    if freqs[0] > EEG_BANDS["delta"][0] or freqs[-1] < EEG_BANDS["gamma"][1]:
        raise ValueError(
            f"PSD spans [{freqs[0]}, {freqs[-1]}] Hz; band table needs "
            f"[{EEG_BANDS['delta'][0]}, {EEG_BANDS['gamma'][1]}] Hz"
        )
    df = float(freqs[1] - freqs[0])
    out = np.zeros((psd.power.shape[0], len(BAND_ORDER)))
    for b, name in enumerate(BAND_ORDER):
        low, high = EEG_BANDS[name]
        if name == BAND_ORDER[-1]:
            mask = (freqs >= low) & (freqs <= high)
        else:
            mask = (freqs >= low) & (freqs < high)
        out[:, b] = psd.power[:, mask].sum(axis=1) * df
    return BandPowerVector(powers=out)


def log_band_power_features(
    epochs: list[Epoch],
    seg_samples: int | None = None,
    overlap_fraction: float = 0.5,
) -> np.ndarray:
    """Feature matrix (epochs x channels*5) of log band powers.

    The standard motor-imagery feature set for this pipeline; log
    compression turns per-channel gain differences into additive offsets
    that the downstream Z-score removes.
    """
    rows = []
    for epoch in epochs:
        psd = welch_psd(epoch, seg_samples=seg_samples, overlap_fraction=overlap_fraction)
        rows.append(np.log(band_powers(psd).flattened() + LOG_POWER_FLOOR))
    return np.asarray(rows)


def feature_config_fingerprint(
    channels: int,
    seg_samples: int | None = None,
    overlap_fraction: float = 0.5,
) -> dict:
    """Describes the feature extraction so a model can refuse mismatched inputs."""
    return {
        "kind": "log_band_power",
        "bands": {name: list(EEG_BANDS[name]) for name in BAND_ORDER},
        "channels": channels,
        "welch_seg_samples": seg_samples,
        "welch_overlap_fraction": overlap_fraction,
    }


@dataclass
class PcaModel:
    """Principal components of a feature matrix; rows of `components` are orthonormal."""

    mean: np.ndarray                       # (features,)
    components: np.ndarray                 # (n_components, features)
    explained_variance_ratio: np.ndarray   # (n_components,), non-increasing

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        self.explained_variance_ratio = np.asarray(self.explained_variance_ratio, dtype=np.float64)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def pca_fit(data: np.ndarray, n_components: int) -> PcaModel:
    """Fit PCA via eigendecomposition of the sample covariance.

    Component signs are fixed so each component's largest-magnitude entry
    is positive, which makes the fit deterministic.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("expected a 2-D samples x features matrix")
    n_samples, n_features = data.shape
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples, got {n_samples}")
    limit = min(n_samples - 1, n_features)
    if not 1 <= n_components <= limit:
        raise ValueError(
            f"n_components must be in [1, {limit}] for {n_samples} samples "
            f"x {n_features} features, got {n_components}"
        )
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n_samples - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    components = eigvecs[:, order].T
    eigvals = np.clip(eigvals[order], 0.0, None)
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = np.clip(np.trace(cov), 1e-30, None)
    return PcaModel(mean=mean, components=components, explained_variance_ratio=eigvals / total)


def pca_transform(model: PcaModel, data: np.ndarray) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != model.mean.shape[0]:
        raise ValueError(
            f"model was fit on {model.mean.shape[0]} features, data has {data.shape[1]}"
        )
    return (data - model.mean) @ model.components.T


def pca_inverse_transform(model: PcaModel, projected: np.ndarray) -> np.ndarray:
    """Map projected points back to the original (centered + mean) space."""
    projected = np.atleast_2d(np.asarray(projected, dtype=np.float64))
    return projected @ model.components + model.mean
