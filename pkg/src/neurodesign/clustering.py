"""K-means and the cluster-validity suite.

Silhouette and Calinski-Harabasz for model selection over k, plus the
label-agreement metrics used for the feasibility study: weighted purity
(each sample's vote scaled by its |score|/5 weight) and V-measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

KMEANS_MAX_ITER = 300


@dataclass
class Clustering:
    """A hard partition: per-sample cluster index, centroids, total within-cluster SSE."""

    assignments: np.ndarray  # (n,) ints in [0, k)
    centroids: np.ndarray    # (k, features)
    inertia: float

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass
class WeightedLabelSet:
    """Per-sample direction (+1/-1) and weight in [0, 1] for one spatial feature."""

    directions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.directions.shape != self.weights.shape:
            raise ValueError("directions and weights must have equal length")
        if not np.all(np.isin(self.directions, (-1, 1))):
            raise ValueError("directions must be +1 or -1")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")

    @classmethod
    def from_scores(cls, scores) -> "WeightedLabelSet":
        """Build from signed scores in [-5, 5]; weight = |score|/5, zero scores lean +."""
        scores = np.asarray(scores, dtype=np.float64)
        return cls(directions=np.where(scores >= 0, 1, -1), weights=np.abs(scores) / 5.0)

    def __len__(self) -> int:
        return self.directions.shape[0]


def _squared_distances(data: np.ndarray, points: np.ndarray) -> np.ndarray:
    """(n, m) matrix of squared Euclidean distances, clipped at 0."""
    d2 = (
        (data * data).sum(axis=1)[:, None]
        + (points * points).sum(axis=1)[None, :]
        - 2.0 * data @ points.T
    )
    return np.clip(d2, 0.0, None)


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    centroids[0] = data[rng.integers(n)]
    closest = _squared_distances(data, centroids[:1]).ravel()
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centroids[c] = data[idx]
        closest = np.minimum(closest, _squared_distances(data, centroids[c:c + 1]).ravel())
    return centroids


def _lloyd(data: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    assignments = np.full(data.shape[0], -1, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(max_iter):
        d2 = _squared_distances(data, centroids)
        new_assignments = d2.argmin(axis=1)
        inertia = float(d2[np.arange(data.shape[0]), new_assignments].sum())
        assert inertia <= prev_inertia + 1e-9, "Lloyd inertia increased"
        prev_inertia = inertia
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = data[members].mean(axis=0)
            else:
                # deterministic repair: seize the sample farthest from its centroid
                dist_to_own = d2[np.arange(data.shape[0]), assignments]
                farthest = int(dist_to_own.argmax())
                centroids[c] = data[farthest]
                assignments[farthest] = c
    d2 = _squared_distances(data, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(data.shape[0]), assignments].sum())
    return assignments, centroids, inertia


def kmeans(data: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> Clustering:
    """Best-of-restarts K-means with k-means++ seeding.

    Deterministic given (data, k, seed, restarts): every restart draws
    from its own seeded stream and ties resolve to the earliest restart.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if data.shape[0] < k:
        raise ValueError(f"cannot form {k} clusters from {data.shape[0]} samples")
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    for restart in range(max(1, restarts)):
        rng = np.random.default_rng([seed, restart])
        init = _kmeans_pp_init(data, k, rng)
        assignments, centroids, inertia = _lloyd(data, init.copy(), KMEANS_MAX_ITER)
        if best is None or inertia < best[2]:
            best = (assignments, centroids, inertia)
    assignments, centroids, inertia = best
    return Clustering(assignments=assignments, centroids=centroids, inertia=inertia)


def _check_partition(data: np.ndarray, clustering: Clustering) -> np.ndarray:
    labels = clustering.assignments
    if labels.shape[0] != data.shape[0]:
        raise ValueError("clustering does not match data length")
    counts = np.bincount(labels, minlength=clustering.k)
    if clustering.k < 2:
        raise ValueError("need at least 2 clusters")
    if (counts == 0).any():
        raise ValueError(f"empty cluster(s): {list(np.flatnonzero(counts == 0))}")
    return counts


def silhouette(data: np.ndarray, clustering: Clustering) -> float:
    """Mean silhouette over samples; singleton clusters contribute 0."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    counts = _check_partition(data, clustering)
    labels = clustering.assignments
    dist = np.sqrt(_squared_distances(data, data))
    n = data.shape[0]
    scores = np.zeros(n)
    # mean distance from each sample to each cluster
    sums = np.zeros((n, clustering.k))
    for c in range(clustering.k):
        sums[:, c] = dist[:, labels == c].sum(axis=1)
    for i in range(n):
        own = labels[i]
        if counts[own] == 1:
            continue
        a = sums[i, own] / (counts[own] - 1)
        other = [sums[i, c] / counts[c] for c in range(clustering.k) if c != own]
        b = min(other)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def calinski_harabasz(data: np.ndarray, clustering: Clustering) -> float:
    """Between/within dispersion ratio scaled by (N - k) / (k - 1)."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    counts = _check_partition(data, clustering)
    labels = clustering.assignments
    n, k = data.shape[0], clustering.k
    overall = data.mean(axis=0)
    between = 0.0
    within = 0.0
    for c in range(k):
        members = data[labels == c]
        center = members.mean(axis=0)
        between += counts[c] * float(((center - overall) ** 2).sum())
        within += float(((members - center) ** 2).sum())
    if within == 0.0:
        return float("inf") if between > 0 else 0.0
    return float(between * (n - k) / (within * (k - 1)))


def _as_assignments(clustering) -> np.ndarray:
    if isinstance(clustering, Clustering):
        return clustering.assignments
    return np.asarray(clustering, dtype=np.int64)


def weighted_purity(clustering, labels: WeightedLabelSet) -> float:
    """Weight-scaled purity of a partition against one feature's directions.

    Each cluster's representative direction maximizes the summed |weight|
    inside the cluster; the score is the total represented weight divided
    by the total weight W of all samples. Zero-weight samples cancel from
    both numerator and denominator.
    """
    assignments = _as_assignments(clustering)
    if assignments.shape[0] != len(labels):
        raise ValueError("labels do not match clustering length")
    w = np.abs(labels.weights)
    total = float(w.sum())
    if total <= 0:
        raise ValueError("all label weights are zero")
    captured = 0.0
    for c in np.unique(assignments):
        members = assignments == c
        pos = float(w[members & (labels.directions == 1)].sum())
        neg = float(w[members & (labels.directions == -1)].sum())
        captured += max(pos, neg)
    return captured / total


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    total = counts.sum()
    if total <= 0 or counts.size <= 1:
        return 0.0
    p = counts / total
    return float(-(p * np.log(p)).sum())


def v_measure(clustering, labels: WeightedLabelSet, beta: float = 1.0) -> tuple[float, float, float]:
    """(v, homogeneity, completeness) of a partition against direction labels.

    Directions are used as unweighted class labels. A zero conditional
    entropy against a zero marginal entropy defines the component as 1.
    """
    assignments = _as_assignments(clustering)
    if assignments.shape[0] != len(labels):
        raise ValueError("labels do not match clustering length")
    classes = labels.directions
    cluster_ids = np.unique(assignments)
    class_ids = np.unique(classes)
    contingency = np.zeros((cluster_ids.size, class_ids.size))
    for i, cid in enumerate(cluster_ids):
        for j, lab in enumerate(class_ids):
            contingency[i, j] = np.sum((assignments == cid) & (classes == lab))
    n = contingency.sum()
    h_class = _entropy(contingency.sum(axis=0))
    h_cluster = _entropy(contingency.sum(axis=1))
    h_class_given_cluster = 0.0
    h_cluster_given_class = 0.0
    for i in range(cluster_ids.size):
        h_class_given_cluster += contingency[i].sum() / n * _entropy(contingency[i])
    for j in range(class_ids.size):
        h_cluster_given_class += contingency[:, j].sum() / n * _entropy(contingency[:, j])
    homogeneity = 1.0 if h_class == 0 else 1.0 - h_class_given_cluster / h_class
    completeness = 1.0 if h_cluster == 0 else 1.0 - h_cluster_given_class / h_cluster
    if homogeneity + completeness == 0:
        v = 0.0
    else:
        v = (1 + beta) * homogeneity * completeness / (beta * homogeneity + completeness)
    return float(v), float(homogeneity), float(completeness)


@dataclass
class VMeasureResult:
    v: float
    homogeneity: float
    completeness: float


@dataclass
class ClusterReport:
    """Validity metrics for one value of k, plus optional per-feature label agreement."""

    k: int
    silhouette: float
    calinski_harabasz: float
    inertia: float
    weighted_purity: dict[str, float] = field(default_factory=dict)
    v_measure: dict[str, VMeasureResult] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "silhouette": self.silhouette,
            "calinski_harabasz": self.calinski_harabasz,
            "inertia": self.inertia,
            "weighted_purity": dict(self.weighted_purity),
            "v_measure": {
                name: {"v": r.v, "homogeneity": r.homogeneity, "completeness": r.completeness}
                for name, r in self.v_measure.items()
            },
        }


def evaluate_clustering(
    data: np.ndarray,
    clustering: Clustering,
    feature_labels: dict[str, WeightedLabelSet] | None = None,
) -> ClusterReport:
    report = ClusterReport(
        k=clustering.k,
        silhouette=silhouette(data, clustering),
        calinski_harabasz=calinski_harabasz(data, clustering),
        inertia=clustering.inertia,
    )
    for name, labels in (feature_labels or {}).items():
        report.weighted_purity[name] = weighted_purity(clustering, labels)
        report.v_measure[name] = VMeasureResult(*v_measure(clustering, labels))
    return report


def select_k(
    data: np.ndarray,
    k_range,
    seed: int = 0,
    restarts: int = 10,
    feature_labels: dict[str, WeightedLabelSet] | None = None,
) -> tuple[int, list[ClusterReport]]:
    """Pick k by the rank-sum of silhouette and Calinski-Harabasz.

    Both indices are converted to ranks (higher is better) because their
    scales differ; ties in the rank-sum resolve to the smaller k. Returns
    the winning k and the full per-k report table.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if ks[0] < 2 or ks[-1] > data.shape[0]:
        raise ValueError(f"k_range must lie within [2, {data.shape[0]}], got {ks}")
    reports = []
    for k in ks:
        clustering = kmeans(data, k, seed=seed, restarts=restarts)
        reports.append(evaluate_clustering(data, clustering, feature_labels))
    sil_rank = rankdata([r.silhouette for r in reports])
    ch_rank = rankdata([r.calinski_harabasz for r in reports])
    rank_sum = sil_rank + ch_rank
    best_idx = 0
    for i in range(1, len(ks)):
        if rank_sum[i] > rank_sum[best_idx]:
            best_idx = i
    return ks[best_idx], reports


def save_report(reports: list[ClusterReport], best_k: int, path: str | Path, run_info: dict | None = None) -> None:
    """Serialize one selection run as a single JSON document."""
    doc = {
        "v": 1,
        "best_k": best_k,
        "per_k": [r.to_dict() for r in reports],
    }
    if run_info:
        doc["run"] = run_info
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
