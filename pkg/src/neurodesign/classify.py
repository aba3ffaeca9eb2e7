"""One-vs-rest RBF SVM over normalized spectral features.

The binary machines are trained with an SMO solver using maximal-violating-
pair working-set selection; the multiclass wrapper runs stratified k-fold
cross-validation with per-fold normalization and refits on the full data.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .labels import COMMANDS, CommandLabel
from .signal import NormStats, zscore_apply, zscore_fit

SMO_TOL = 1e-3
SUPPORT_EPS = 1e-8
_BOUND_EPS = 1e-12


class TrainingCancelled(Exception):
    """Raised from train_intent_model when the cancel callback fires."""


@dataclass
class TrainingSet:
    features: np.ndarray          # (samples, d)
    labels: list[CommandLabel]

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if len(self.labels) != self.features.shape[0]:
            raise ValueError("label count does not match feature rows")
        if len(set(self.labels)) < 2:
            raise ValueError("need at least 2 distinct labels")


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for all row pairs."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d2 = (
        (a * a).sum(axis=1)[:, None]
        + (b * b).sum(axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.exp(-gamma * np.clip(d2, 0.0, None))


@dataclass
class BinarySvm:
    """Dual-form RBF machine: f(x) = sum_i coef_i K(sv_i, x) + bias."""

    support_vectors: np.ndarray   # (m, d)
    dual_coef: np.ndarray         # (m,), alpha_i * y_i, |coef| <= C
    bias: float
    gamma: float
    C: float
    # full training alphas, kept for KKT diagnostics; not persisted
    alpha: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        self.dual_coef = np.asarray(self.dual_coef, dtype=np.float64)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(
                f"expected {self.support_vectors.shape[1]} features, got {x.shape[1]}"
            )
        k = rbf_kernel(x, self.support_vectors, self.gamma)
        return k @ self.dual_coef + self.bias


def train_binary_svm(
    x: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    gamma: float = 1.0,
    tol: float = SMO_TOL,
    max_iter: int = 100_000,
) -> BinarySvm:
    """Solve the soft-margin RBF dual by SMO.

    Working pairs are chosen by maximal KKT violation: the most demanding
    lower bound on the bias against the least permissive upper bound.
    Terminates when the violation gap falls below tol, which bounds every
    training point's KKT violation by tol/2.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y length mismatch")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1/-1")
    if not ((y > 0).any() and (y < 0).any()):
        raise ValueError("both classes must be present")
    if C <= 0 or gamma <= 0:
        raise ValueError(f"C and gamma must be positive, got C={C}, gamma={gamma}")

    n = x.shape[0]
    kernel = rbf_kernel(x, x, gamma)
    q = kernel * np.outer(y, y)
    alpha = np.zeros(n)
    grad = -np.ones(n)              # gradient of the dual objective at alpha = 0

    pos = y > 0
    m_val = mm_val = 0.0
    for _ in range(max_iter):
        v = -(y * grad)             # v_t = y_t - (f(x_t) - bias)
        up = (pos & (alpha < C - _BOUND_EPS)) | (~pos & (alpha > _BOUND_EPS))
        low = (~pos & (alpha < C - _BOUND_EPS)) | (pos & (alpha > _BOUND_EPS))
        v_up = np.where(up, v, -np.inf)
        v_low = np.where(low, v, np.inf)
        i = int(v_up.argmax())
        j = int(v_low.argmin())
        m_val = v_up[i]
        mm_val = v_low[j]
        if m_val - mm_val <= tol:
            break
        eta = max(kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j], 1e-12)
        t = (m_val - mm_val) / eta
        t = min(t, C - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        grad += q[:, i] * (y[i] * t) - q[:, j] * (y[j] * t)
    else:
        warnings.warn(
            f"SMO hit the {max_iter}-iteration bound with gap {m_val - mm_val:.2e}",
            RuntimeWarning,
        )

    bias = float((m_val + mm_val) / 2.0)
    support = alpha > SUPPORT_EPS
    if not support.any():
        support = np.ones(n, dtype=bool)
    return BinarySvm(
        support_vectors=x[support],
        dual_coef=(alpha * y)[support],
        bias=bias,
        gamma=gamma,
        C=C,
        alpha=alpha,
    )


def kkt_violations(svm: BinarySvm, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-point KKT violation of a trained machine on its training set.

    alpha = 0 demands y*f >= 1, 0 < alpha < C demands y*f = 1, and
    alpha = C demands y*f <= 1; the violation is the margin excess of the
    applicable condition. Requires the training alphas on the machine.
    """
    if svm.alpha is None:
        raise ValueError("machine carries no training alphas")
    y = np.asarray(y, dtype=np.float64).ravel()
    margins = y * svm.decision_function(x)
    alpha = svm.alpha
    viol = np.zeros_like(margins)
    at_zero = alpha <= SUPPORT_EPS
    at_c = alpha >= svm.C - SUPPORT_EPS
    free = ~at_zero & ~at_c
    viol[at_zero] = np.clip(1.0 - margins[at_zero], 0.0, None)
    viol[at_c] = np.clip(margins[at_c] - 1.0, 0.0, None)
    viol[free] = np.abs(margins[free] - 1.0)
    return viol


def softmax_confidence(decision_values) -> tuple[int, float, np.ndarray]:
    """Argmax command index (first on exact ties) and softmax confidence."""
    d = np.asarray(decision_values, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("decision values must be finite")
    shifted = d - d.max()
    p = np.exp(shifted)
    p /= p.sum()
    idx = int(np.argmax(d))
    return idx, float(p[idx]), p


@dataclass
class Prediction:
    command: CommandLabel
    confidence: float
    decision_values: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "command": self.command.value,
            "confidence": self.confidence,
            "decision_values": list(self.decision_values),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(
            command=CommandLabel(d["command"]),
            confidence=float(d["confidence"]),
            decision_values=tuple(float(v) for v in d["decision_values"]),
        )


@dataclass
class IntentModel:
    """One binary machine per command plus the normalization fitted with it."""

    machines: dict[CommandLabel, BinarySvm]
    norm: NormStats
    feature_config: dict
    cv_accuracy: dict
    hyperparams: dict

    def __post_init__(self):
        if set(self.machines) != set(COMMANDS):
            raise ValueError("intent model must carry exactly one machine per command")

    @property
    def n_features(self) -> int:
        return self.norm.n_features


def resolve_gamma(gamma_mode, data: np.ndarray) -> float:
    """'scale' maps to 1 / (d * mean feature variance); numbers pass through."""
    if isinstance(gamma_mode, (int, float)):
        if gamma_mode <= 0:
            raise ValueError(f"gamma must be positive, got {gamma_mode}")
        return float(gamma_mode)
    if gamma_mode == "scale":
        var = float(np.asarray(data).var(axis=0).mean())
        if var <= 0:
            var = 1.0
        return 1.0 / (data.shape[1] * var)
    raise ValueError(f"unknown gamma mode {gamma_mode!r}")


def stratified_folds(labels: list[CommandLabel], folds: int, seed: int) -> list[np.ndarray]:
    """Round-robin deal of shuffled per-class indices into folds.

    Keeps each fold's class counts within one sample of the proportional
    share, and is fully determined by (labels, folds, seed).
    """
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(folds)]
    for command in COMMANDS:
        idx = np.asarray([i for i, lab in enumerate(labels) if lab == command])
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        for pos, sample in enumerate(idx):
            fold_members[pos % folds].append(int(sample))
    return [np.asarray(sorted(members), dtype=np.int64) for members in fold_members]


def _train_ovr(x: np.ndarray, labels: list[CommandLabel], C: float, gamma: float) -> dict[CommandLabel, BinarySvm]:
    machines = {}
    for command in COMMANDS:
        y = np.asarray([1.0 if lab == command else -1.0 for lab in labels])
        machines[command] = train_binary_svm(x, y, C=C, gamma=gamma)
    return machines


def _predict_commands(machines: dict[CommandLabel, BinarySvm], x: np.ndarray) -> list[CommandLabel]:
    decisions = np.column_stack([machines[c].decision_function(x) for c in COMMANDS])
    return [COMMANDS[int(i)] for i in decisions.argmax(axis=1)]


def train_intent_model(
    ts: TrainingSet,
    C: float = 1.0,
    gamma_mode="scale",
    folds: int = 10,
    seed: int = 0,
    feature_config: dict | None = None,
    progress: Callable[[int, int], None] | None = None,
    cancel: Callable[[], bool] | None = None,
) -> IntentModel:
    """Stratified k-fold CV over the one-vs-rest machines, then refit on all data.

    Normalization is fit on each fold's training split only (no leakage);
    the reported overall accuracy is the mean of per-fold accuracies and
    the per-command accuracy is the pooled recall for that command.
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    counts = {c: sum(1 for lab in ts.labels if lab == c) for c in set(ts.labels)}
    thin = {c.value: n for c, n in counts.items() if n < folds}
    if thin:
        raise ValueError(f"every class needs at least {folds} samples, got {thin}")

    fold_sets = stratified_folds(ts.labels, folds, seed)
    fold_accuracies = []
    per_command_hits = {c: 0 for c in COMMANDS}
    per_command_totals = {c: 0 for c in COMMANDS}
    for fold_idx, test_idx in enumerate(fold_sets):
        if cancel is not None and cancel():
            raise TrainingCancelled(f"cancelled at fold {fold_idx}")
        train_mask = np.ones(ts.features.shape[0], dtype=bool)
        train_mask[test_idx] = False
        x_train_raw = ts.features[train_mask]
        labels_train = [lab for i, lab in enumerate(ts.labels) if train_mask[i]]
        stats = zscore_fit(x_train_raw)
        x_train = zscore_apply(stats, x_train_raw)
        x_test = zscore_apply(stats, ts.features[test_idx])
        gamma = resolve_gamma(gamma_mode, x_train)
        machines = _train_ovr(x_train, labels_train, C, gamma)
        predicted = _predict_commands(machines, x_test)
        truth = [ts.labels[i] for i in test_idx]
        hits = sum(1 for p, t in zip(predicted, truth) if p == t)
        fold_accuracies.append(hits / len(truth))
        for p, t in zip(predicted, truth):
            per_command_totals[t] += 1
            if p == t:
                per_command_hits[t] += 1
        if progress is not None:
            progress(fold_idx + 1, folds)

    stats = zscore_fit(ts.features)
    x_all = zscore_apply(stats, ts.features)
    gamma = resolve_gamma(gamma_mode, x_all)
    machines = _train_ovr(x_all, ts.labels, C, gamma)
    cv = {"overall": float(np.mean(fold_accuracies)), "per_fold": [float(a) for a in fold_accuracies]}
    for c in COMMANDS:
        total = per_command_totals[c]
        cv[c.value] = per_command_hits[c] / total if total else float("nan")
    return IntentModel(
        machines=machines,
        norm=stats,
        feature_config=feature_config or {},
        cv_accuracy=cv,
        hyperparams={"C": C, "gamma_mode": gamma_mode, "folds": folds, "seed": seed, "gamma": gamma},
    )


def predict(model: IntentModel, features: np.ndarray) -> Prediction:
    """Normalize one feature vector and score it against the three machines."""
    features = np.asarray(features, dtype=np.float64).ravel()
    if features.shape[0] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {features.shape[0]}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    z = zscore_apply(model.norm, features)
    decisions = np.asarray([float(model.machines[c].decision_function(z)[0]) for c in COMMANDS])
    idx, confidence, _ = softmax_confidence(decisions)
    return Prediction(
        command=COMMANDS[idx],
        confidence=confidence,
        decision_values=tuple(decisions.tolist()),
    )


MODEL_SCHEMA_VERSION = 1


def _svm_to_dict(svm: BinarySvm) -> dict:
    return {
        "support_vectors": svm.support_vectors.tolist(),
        "dual_coef": svm.dual_coef.tolist(),
        "bias": svm.bias,
        "gamma": svm.gamma,
        "C": svm.C,
    }


def _svm_from_dict(d: dict) -> BinarySvm:
    return BinarySvm(
        support_vectors=np.asarray(d["support_vectors"]),
        dual_coef=np.asarray(d["dual_coef"]),
        bias=float(d["bias"]),
        gamma=float(d["gamma"]),
        C=float(d["C"]),
    )


def save_model(model: IntentModel, path: str | Path) -> None:
    """Write the model as versioned JSON; floats round-trip exactly."""
    doc = {
        "v": MODEL_SCHEMA_VERSION,
        "commands": [c.value for c in COMMANDS],
        "machines": {c.value: _svm_to_dict(model.machines[c]) for c in COMMANDS},
        "norm": {"mean": model.norm.mean.tolist(), "std": model.norm.std.tolist()},
        "feature_config": model.feature_config,
        "cv_accuracy": model.cv_accuracy,
        "hyperparams": model.hyperparams,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_model(path: str | Path) -> IntentModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("v") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('v')!r}")
    return IntentModel(
        machines={CommandLabel(name): _svm_from_dict(d) for name, d in doc["machines"].items()},
        norm=NormStats(mean=np.asarray(doc["norm"]["mean"]), std=np.asarray(doc["norm"]["std"])),
        feature_config=doc["feature_config"],
        cv_accuracy=doc["cv_accuracy"],
        hyperparams=doc["hyperparams"],
    )
