import numpy as np
import pytest

from neurodesign.labels import COMMANDS
from neurodesign.signal import Epoch, bandpass_filter, zscore_apply, zscore_fit
from neurodesign.spectral import log_band_power_features
from neurodesign.classify import stratified_folds


def pipeline_features(segset):
    """Standard feature path: band-pass each segment, log band powers."""
    epochs = [
        Epoch(bandpass_filter(seg).data, 0.0, seg.sample_rate)
        for seg in segset.segments
    ]
    return log_band_power_features(epochs)


def nearest_centroid_cv(features, labels, folds=10, seed=0):
    """Independent oracle classifier: per-fold z-scored nearest class centroid."""
    fold_sets = stratified_folds(labels, folds, seed)
    hits = total = 0
    for test_idx in fold_sets:
        mask = np.ones(features.shape[0], bool)
        mask[test_idx] = False
        stats = zscore_fit(features[mask])
        x_train = zscore_apply(stats, features[mask])
        x_test = zscore_apply(stats, features[test_idx])
        labs = [lab for i, lab in enumerate(labels) if mask[i]]
        centroids = np.stack([
            x_train[[i for i, lab in enumerate(labs) if lab == c]].mean(axis=0)
            for c in COMMANDS
        ])
        pred = ((x_test[:, None, :] - centroids[None, :, :]) ** 2).sum(-1).argmin(1)
        hits += sum(COMMANDS[p] == labels[i] for p, i in zip(pred, test_idx))
        total += len(test_idx)
    return hits / total


@pytest.fixture
def rng():
    return np.random.default_rng(0)
