"""Comparison pipelines over the shared attention-extracted features:
VAE-K (VAE compression + k-means), SeqCR (k-means on the narrow latents),
SeqCS (k-means seeded with attribute vectors), and DEFT (random forest on
SeqCS cluster labels). Includes Lloyd k-means and optimal cluster-to-label
accuracy scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .classifier import EvalReport, build_report
from .cvae import CvaeConfig, train_cvae
from .forest import RandomForest

logger = logging.getLogger("zest.baselines")


class BaselineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

@dataclass
class ClusterResult:
    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    def assign(self, points: np.ndarray) -> np.ndarray:
        d = ((np.asarray(points, dtype=np.float64)[:, None, :]
              - self.centers[None, :, :]) ** 2).sum(axis=2)
        return d.argmin(axis=1)


def kmeans(points: np.ndarray, k: int, init: str | np.ndarray = "random",
           max_iter: int = 100, seed: int = 0) -> ClusterResult:
    """Lloyd iterations to an assignment fixpoint. Empty clusters are
    re-seeded at the point farthest from its current center."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if k > n:
        raise BaselineError(f"k={k} exceeds number of points {n}")
    if isinstance(init, str):
        if init != "random":
            raise BaselineError(f"unknown init {init!r}")
        rng = np.random.default_rng(seed)
        centers = x[rng.choice(n, size=k, replace=False)].copy()
    else:
        centers = np.asarray(init, dtype=np.float64).copy()
        if centers.shape != (k, x.shape[1]):
            raise BaselineError(
                f"seeded init shape {centers.shape} != ({k}, {x.shape[1]})")

    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for iteration in range(1, max_iter + 1):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignments = dists.argmin(axis=1)
        inertia = float(dists[np.arange(n), new_assignments].sum())
        history.append(inertia)
        if np.array_equal(new_assignments, assignments):
            assignments = new_assignments
            break
        assignments = new_assignments
        for c in range(k):
            mask = assignments == c
            if mask.any():
                centers[c] = x[mask].mean(axis=0)
            else:
                # farthest point from its own center becomes the new seed
                per_point = dists[np.arange(n), assignments]
                centers[c] = x[int(per_point.argmax())]
    return ClusterResult(assignments=assignments, centers=centers,
                         inertia=history[-1], inertia_history=history,
                         n_iter=len(history))


# ---------------------------------------------------------------------------
# cluster accuracy (optimal one-to-one mapping)
# ---------------------------------------------------------------------------

def cluster_label_mapping(assignments: np.ndarray, labels: np.ndarray,
                          k: int) -> np.ndarray:
    """Optimal one-to-one cluster -> label mapping maximizing matched count
    (Hungarian assignment on the contingency matrix)."""
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if assignments.shape != labels.shape:
        raise BaselineError(
            f"length mismatch: {assignments.shape} vs {labels.shape}")
    contingency = np.zeros((k, k), dtype=np.int64)
    np.add.at(contingency, (assignments, labels), 1)
    rows, cols = linear_sum_assignment(contingency, maximize=True)
    mapping = np.full(k, -1, dtype=np.int64)
    mapping[rows] = cols
    return mapping


def cluster_accuracy(assignments: np.ndarray, labels: np.ndarray,
                     k: int | None = None) -> float:
    """Accuracy under the optimal cluster <-> label mapping."""
    labels = np.asarray(labels, dtype=np.int64)
    if k is None:
        k = int(max(np.max(assignments), labels.max())) + 1
    mapping = cluster_label_mapping(assignments, labels, k)
    mapped = mapping[np.asarray(assignments, dtype=np.int64)]
    return float((mapped == labels).mean())


# ---------------------------------------------------------------------------
# baseline pipelines
# ---------------------------------------------------------------------------

def _clustering_report(setting: str, cluster: ClusterResult,
                       train_labels: np.ndarray, test_features: np.ndarray,
                       test_labels: np.ndarray, num_classes: int,
                       pipeline: str, seed: int) -> EvalReport:
    """Map clusters to labels on the training data, then score held-out test
    points routed through nearest centers and the same mapping."""
    mapping = cluster_label_mapping(cluster.assignments, train_labels,
                                    num_classes)
    test_pred = mapping[cluster.assign(test_features)]
    report = build_report(setting, test_labels, test_pred,
                          sorted(set(int(v) for v in test_labels)),
                          extra={"pipeline": pipeline, "seed": seed,
                                 "train_accuracy": cluster_accuracy(
                                     cluster.assignments, train_labels,
                                     num_classes)})
    return report


def seqcr(train_lam: np.ndarray, train_labels: np.ndarray,
          test_lam: np.ndarray, test_labels: np.ndarray,
          num_classes: int, seed: int, setting: str = "gzsl") -> EvalReport:
    """k-means with random centers on the narrow latents."""
    cluster = kmeans(train_lam, k=num_classes, init="random", seed=seed)
    return _clustering_report(setting, cluster, train_labels, test_lam,
                              test_labels, num_classes, "seqcr", seed)


def seqcs(train_lam: np.ndarray, train_labels: np.ndarray,
          test_lam: np.ndarray, test_labels: np.ndarray,
          attribute_seeds: np.ndarray, num_classes: int, seed: int,
          setting: str = "gzsl") -> EvalReport:
    """Seeded k-means: initial centers are the attribute vectors of all
    devices."""
    if attribute_seeds.shape[0] != num_classes:
        raise BaselineError(
            f"need {num_classes} attribute seeds, got {attribute_seeds.shape[0]}")
    cluster = kmeans(train_lam, k=num_classes, init=attribute_seeds, seed=seed)
    return _clustering_report(setting, cluster, train_labels, test_lam,
                              test_labels, num_classes, "seqcs", seed)


def deft(train_lam: np.ndarray, train_labels: np.ndarray,
         test_lam: np.ndarray, test_labels: np.ndarray,
         attribute_seeds: np.ndarray, num_classes: int, seed: int,
         setting: str = "gzsl",
         forest_params: dict | None = None) -> EvalReport:
    """Seeded clustering followed by a random forest trained on the cluster
    labels; test predictions route through the clustering's label mapping."""
    cluster = kmeans(train_lam, k=num_classes, init=attribute_seeds, seed=seed)
    mapping = cluster_label_mapping(cluster.assignments, train_labels,
                                    num_classes)
    params = {"n_trees": 50, "max_depth": 10, "bootstrap": True,
              "feature_subsample": True}
    params.update(forest_params or {})
    forest = RandomForest(seed=seed, **params)
    forest.fit(train_lam, cluster.assignments)
    test_pred = mapping[forest.predict(test_lam)]
    return build_report(setting, test_labels, test_pred,
                        sorted(set(int(v) for v in test_labels)),
                        extra={"pipeline": "deft", "seed": seed})


def vae_k(train_l: np.ndarray, train_labels: np.ndarray,
          test_l: np.ndarray, test_labels: np.ndarray,
          num_classes: int, seed: int, setting: str = "gzsl",
          compress_dim: int = 3, epochs: int = 100,
          trained: bool = True) -> EvalReport:
    """Unconditional VAE compresses the wide latents to the attribute width,
    then random-init k-means clusters the compressed features. `trained=False`
    skips VAE training (untrained compression, for paired comparisons)."""
    config = CvaeConfig(input_dim=train_l.shape[1], cond_dim=0,
                        z_dim=compress_dim, epochs=epochs if trained else 0,
                        seed=seed)
    if trained:
        model, _ = train_cvae(train_l, None, config)
    else:
        from .cvae import CvaeModel
        model = CvaeModel(config)
    train_mu, _ = model.encode_arrays(train_l)
    test_mu, _ = model.encode_arrays(test_l)
    cluster = kmeans(train_mu, k=num_classes, init="random", seed=seed)
    return _clustering_report(setting, cluster, train_labels, test_mu,
                              test_labels, num_classes, "vae_k", seed)


PIPELINES = {"vae-k": vae_k, "seqcr": seqcr, "seqcs": seqcs, "deft": deft}
