"""EEG-driven interior design toolkit.

Decodes design commands from multichannel EEG via spectral features and
a per-user one-vs-rest RBF SVM, evaluates command feasibility with
cluster-validity metrics, and drives an iterative human-in-the-loop
image-generation session.
"""

from .labels import COMMANDS, CommandLabel, FeatureLabels, SPATIAL_FEATURES
from .signal import (
    EegRecording,
    Epoch,
    FilterSpec,
    IcaConfig,
    NormStats,
    bandpass_filter,
    epoch_windows,
    remove_artifacts_ica,
    zscore_apply,
    zscore_fit,
)
from .spectral import (
    BandPowerVector,
    PcaModel,
    PsdEstimate,
    band_powers,
    log_band_power_features,
    pca_fit,
    pca_transform,
    welch_psd,
)
from .clustering import (
    Clustering,
    ClusterReport,
    WeightedLabelSet,
    calinski_harabasz,
    kmeans,
    select_k,
    silhouette,
    v_measure,
    weighted_purity,
)
from .classify import (
    BinarySvm,
    IntentModel,
    Prediction,
    TrainingSet,
    load_model,
    predict,
    save_model,
    train_binary_svm,
    train_intent_model,
)

__version__ = "0.1.0"
