"""Final supervised classifier and the ZSL/GZSL evaluation protocols.

A linear one-vs-rest SVM is trained on pseudo latents by subgradient descent
on the L2-regularized hinge objective and evaluated on real latents extracted
from held-out test traffic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger("zest.classifier")


@dataclass
class SvmModel:
    """Per-class weights/biases of a linear one-vs-rest SVM."""

    classes: list[int]
    weights: np.ndarray      # (num_classes, dim)
    biases: np.ndarray       # (num_classes,)
    regularization: float
    metadata: dict = field(default_factory=dict)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights.T + self.biases

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "regularization": self.regularization,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(classes=list(d["classes"]),
                   weights=np.asarray(d["weights"], dtype=np.float64),
                   biases=np.asarray(d["biases"], dtype=np.float64),
                   regularization=d["regularization"],
                   metadata=d.get("metadata", {}))


@dataclass
class ConstantClassifier:
    """Degenerate predictor for a single-class label set (the 1-unseen-device
    ZSL case, where there is nothing to separate)."""

    classes: list[int]

    def scores(self, x: np.ndarray) -> np.ndarray:
        return np.zeros((np.asarray(x).shape[0], 1))


def hinge_objective(w: np.ndarray, b: float, x: np.ndarray,
                    y_signed: np.ndarray, c_reg: float) -> float:
    """0.5*||w||^2 + C * mean(max(0, 1 - y*(w.x + b)))."""
    margins = np.maximum(0.0, 1.0 - y_signed * (x @ w + b))
    return 0.5 * float(w @ w) + c_reg * float(margins.mean())


def _fit_binary(x: np.ndarray, y_signed: np.ndarray, c_reg: float,
                epochs: int, lr: float) -> tuple[np.ndarray, float]:
    """Full-batch subgradient descent with 1/t decay; returns the iterate with
    the lowest objective (subgradient descent is not monotone)."""
    dim = x.shape[1]
    w = np.zeros(dim)
    b = 0.0
    best = (hinge_objective(w, b, x, y_signed, c_reg), w.copy(), b)
    n = x.shape[0]
    for t in range(1, epochs + 1):
        margins = 1.0 - y_signed * (x @ w + b)
        active = margins > 0
        grad_w = w - c_reg * (y_signed[active, None] * x[active]).sum(axis=0) / n
        grad_b = -c_reg * y_signed[active].sum() / n
        step = lr / t
        w = w - step * grad_w
        b = b - step * grad_b
        obj = hinge_objective(w, b, x, y_signed, c_reg)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    return best[1], best[2]


def train_svm(x: np.ndarray, y: np.ndarray, c_reg: float = 1.0,
              epochs: int = 100, lr: float = 0.01, seed: int = 0) -> SvmModel:
    """One-vs-rest linear SVM on a balanced labeled set; deterministic
    (cold start from zero weights, full-batch updates)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = sorted(set(int(v) for v in y))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    weights = np.zeros((len(classes), x.shape[1]))
    biases = np.zeros(len(classes))
    for row, cls in enumerate(classes):
        y_signed = np.where(y == cls, 1.0, -1.0)
        weights[row], biases[row] = _fit_binary(x, y_signed, c_reg, epochs, lr)
    return SvmModel(classes=classes, weights=weights, biases=biases,
                    regularization=c_reg,
                    metadata={"epochs": epochs, "lr": lr, "seed": seed})


def predict(model, latents: np.ndarray) -> np.ndarray:
    """Argmax over class scores; ties break to the lowest class index."""
    scores = model.scores(np.asarray(latents))
    idx = scores.argmax(axis=1)
    return np.asarray([model.classes[i] for i in idx], dtype=np.int64)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Accuracy summary for one evaluation run."""

    setting: str                       # "zsl" | "gzsl" | "supervised"
    accuracy: float
    class_labels: list[int]
    per_class_accuracy: dict[int, float]
    confusion: np.ndarray              # true x predicted over class_labels
    num_test: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "accuracy": self.accuracy,
            "class_labels": self.class_labels,
            "per_class_accuracy": {str(k): v for k, v in
                                   self.per_class_accuracy.items()},
            "confusion": self.confusion.tolist(),
            "num_test": self.num_test,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(setting=d["setting"], accuracy=d["accuracy"],
                   class_labels=list(d["class_labels"]),
                   per_class_accuracy={int(k): v for k, v in
                                       d["per_class_accuracy"].items()},
                   confusion=np.asarray(d["confusion"], dtype=np.int64),
                   num_test=d["num_test"], extra=d.get("extra", {}))

    def save_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def format_table(self) -> str:
        lines = [f"setting: {self.setting}",
                 f"accuracy: {self.accuracy:.4f}  (n={self.num_test})",
                 "per-class accuracy:"]
        for label in self.class_labels:
            if label in self.per_class_accuracy:
                lines.append(f"  class {label}: "
                             f"{self.per_class_accuracy[label]:.4f}")
        return "\n".join(lines)


def build_report(setting: str, y_true: np.ndarray, y_pred: np.ndarray,
                 class_labels: list[int], extra: dict | None = None) -> EvalReport:
    """Confusion over class_labels; predictions outside the set count as a
    dedicated overflow column so row sums equal per-class test counts."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    index = {c: i for i, c in enumerate(class_labels)}
    k = len(class_labels)
    outside = any(int(p) not in index for p in y_pred)
    confusion = np.zeros((k, k + (1 if outside else 0)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        col = index.get(int(p), k)
        confusion[index[int(t)], col] += 1
    per_class = {}
    for c in class_labels:
        mask = y_true == c
        if mask.any():
            per_class[c] = float((y_pred[mask] == c).mean())
    accuracy = float((y_true == y_pred).mean())
    return EvalReport(setting=setting, accuracy=accuracy,
                      class_labels=list(class_labels),
                      per_class_accuracy=per_class, confusion=confusion,
                      num_test=len(y_true), extra=extra or {})


def evaluate(setting: str, model, test_latents: np.ndarray,
             test_labels: np.ndarray, extra: dict | None = None) -> EvalReport:
    """Score a trained classifier on real test latents.

    ZSL: the model's label set is the unseen classes and test latents must
    come from unseen devices only. GZSL: label set is seen + unseen.
    """
    if setting not in ("zsl", "gzsl"):
        raise ValueError(f"unknown setting {setting!r}")
    test_labels = np.asarray(test_labels, dtype=np.int64)
    declared = set(model.classes)
    stray = set(int(v) for v in test_labels) - declared
    if stray:
        raise ValueError(
            f"test latents contain labels {sorted(stray)} outside the "
            f"declared label set {sorted(declared)}")
    y_pred = predict(model, test_latents)
    return build_report(setting, test_labels, y_pred, list(model.classes),
                        extra=extra)
