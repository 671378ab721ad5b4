"""Classification metrics, PCA projections, and the desk-scale baseline classifier.

The positive class is `deformed` throughout. The baseline is a logistic
model over 32x32 grayscale features, trained by full-batch gradient descent:
small enough to run in the test suite, strong enough to prove the generated
datasets are learnable end to end.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .deform import LABEL_DEFORMED, LABEL_NON_DEFORMED
from .errors import ParameterError, ShapeError
from .dataset import DatasetManifest

FEATURE_SPEC = {"mode": "grayscale", "size": 32, "range": "unit"}
FEATURE_DIM = FEATURE_SPEC["size"] ** 2


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_array(self) -> np.ndarray:
        return np.array([[self.tp, self.fn], [self.fp, self.tn]])


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    recall: float
    precision: float
    undefined: list[str] = field(default_factory=list)

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("Accuracy", self.accuracy),
            ("F1", self.f1),
            ("Recall", self.recall),
            ("Precision", self.precision),
        ]


def confusion(labels, predictions) -> ConfusionMatrix:
    """Count (label, prediction) pairs with `deformed` as the positive class."""
    labels, predictions = list(labels), list(predictions)
    if len(labels) != len(predictions):
        raise ShapeError(f"{len(labels)} labels vs {len(predictions)} predictions")
    cm = ConfusionMatrix()
    for y, p in zip(labels, predictions):
        pos_y, pos_p = y == LABEL_DEFORMED, p == LABEL_DEFORMED
        if pos_y and pos_p:
            cm.tp += 1
        elif pos_y:
            cm.fn += 1
        elif pos_p:
            cm.fp += 1
        else:
            cm.tn += 1
    return cm


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, precision, recall, F1; division by zero yields 0 and a flag."""
    if cm.total == 0:
        raise ParameterError("cannot compute metrics of an empty confusion matrix")
    undefined = []

    def safe(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = safe(cm.tp, cm.tp + cm.fp, "precision")
    recall = safe(cm.tp, cm.tp + cm.fn, "recall")
    f1 = safe(2.0 * precision * recall, precision + recall, "f1")
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        f1=f1,
        recall=recall,
        precision=precision,
        undefined=undefined,
    )


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


def pca_fit(data: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal directions of the rows of `data`, variance-descending.

    Returns (mean, components) with components orthonormal, shape (k, d).
    Implemented by SVD of the centered data matrix; sign fixed so each
    component's largest-magnitude entry is positive.
    """
    x = np.asarray(data, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ParameterError("PCA needs at least 2 samples")
    if not 1 <= k <= min(n, d):
        raise ParameterError(f"k must be in [1, {min(n, d)}], got {k}")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    components = vt[:k]
    flip = np.sign(components[np.arange(k), np.abs(components).argmax(axis=1)])
    flip[flip == 0] = 1.0
    return mean, components * flip[:, None]


def pca_project(x: np.ndarray, mean: np.ndarray, components: np.ndarray) -> np.ndarray:
    return (np.asarray(x) - mean) @ components.T


def pca_scatter(
    tagged_manifests: list[tuple[str, DatasetManifest]],
    k: int = 2,
    out_csv: str | Path | None = None,
) -> list[tuple[str, tuple[float, ...]]]:
    """Project every dataset into one shared PCA basis fit on their union.

    Returns (dataset_tag, coords) rows; optionally writes them as CSV with
    a feature-space note so the projection is reproducible.
    """
    if not tagged_manifests:
        raise ParameterError("pca_scatter needs at least one manifest")
    tags, blocks = [], []
    for tag, manifest in tagged_manifests:
        feats = manifest_features(manifest)
        if len(feats) == 0:
            raise ParameterError(f"manifest {tag!r} is empty")
        tags += [tag] * len(feats)
        blocks.append(feats)
    union = np.concatenate(blocks)
    if len(union) == 1:
        coords = np.zeros((1, k))
    else:
        mean, components = pca_fit(union, min(k, *union.shape))
        coords = pca_project(union, mean, components)
        if coords.shape[1] < k:
            coords = np.pad(coords, ((0, 0), (0, k - coords.shape[1])))
    rows = [(tag, tuple(float(c) for c in xy)) for tag, xy in zip(tags, coords)]
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            fh.write(f"# features: {json.dumps(FEATURE_SPEC)}\n")
            writer = csv.writer(fh)
            writer.writerow(["dataset"] + [f"pc{i + 1}" for i in range(k)])
            for tag, xy in rows:
                writer.writerow([tag] + [f"{c:.8g}" for c in xy])
    return rows


# ---------------------------------------------------------------------------
# Feature extraction and the logistic baseline
# ---------------------------------------------------------------------------


def image_features(path: str | Path) -> np.ndarray:
    """Grayscale 32x32 pixels scaled to [0, 1], flattened."""
    size = FEATURE_SPEC["size"]
    with Image.open(path) as im:
        small = im.convert("L").resize((size, size), Image.BILINEAR)
    return np.asarray(small, dtype=np.float64).ravel() / 255.0


def manifest_features(manifest: DatasetManifest) -> np.ndarray:
    feats = [image_features(manifest.image_path(s)) for s in manifest.samples]
    return np.array(feats) if feats else np.zeros((0, FEATURE_DIM))


def manifest_targets(manifest: DatasetManifest) -> np.ndarray:
    return np.array([1.0 if s.label == LABEL_DEFORMED else 0.0 for s in manifest.samples])


@dataclass
class LinearModel:
    weights: np.ndarray  # (1024,)
    bias: float
    feature_spec: dict = field(default_factory=lambda: dict(FEATURE_SPEC))

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (FEATURE_DIM,):
            raise ShapeError(f"weights must have length {FEATURE_DIM}")

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = np.asarray(features) @ self.weights + self.bias
        return _sigmoid(z)

    def save(self, path: str | Path) -> None:
        blob = {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_spec": self.feature_spec,
        }
        Path(path).write_text(json.dumps(blob))

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        blob = json.loads(Path(path).read_text())
        return cls(
            weights=np.array(blob["weights"]),
            bias=float(blob["bias"]),
            feature_spec=blob.get("feature_spec", dict(FEATURE_SPEC)),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_grad(
    weights: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, float]:
    """Mean logistic loss and its analytic gradient in (weights, bias)."""
    z = x @ weights + bias
    # log(1 + exp(-|z|)) + max(0, -yz) form keeps the loss finite for large |z|
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    residual = _sigmoid(z) - y
    grad_w = x.T @ residual / len(y)
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def train_baseline(
    train_manifest: DatasetManifest, epochs: int = 400, lr: float = 2.0
) -> LinearModel:
    """Full-batch gradient descent from zero weights; deterministic by construction."""
    labels = set(train_manifest.labels())
    if len(labels) < 2:
        raise ParameterError(f"training set has a single class: {sorted(labels)}")
    x = manifest_features(train_manifest)
    y = manifest_targets(train_manifest)
    return train_baseline_arrays(x, y, epochs=epochs, lr=lr)


def train_baseline_arrays(
    x: np.ndarray, y: np.ndarray, epochs: int = 400, lr: float = 2.0
) -> LinearModel:
    if x.shape[1] != FEATURE_DIM:
        raise ShapeError(f"features must have {FEATURE_DIM} columns (pad toy data)")
    weights = np.zeros(x.shape[1])
    bias = 0.0
    for _ in range(epochs):
        _, grad_w, grad_b = logistic_loss_grad(weights, bias, x, y)
        weights -= lr * grad_w
        bias -= lr * grad_b
    return LinearModel(weights=weights, bias=bias)


def evaluate(
    model: LinearModel, manifest: DatasetManifest
) -> tuple[ConfusionMatrix, MetricsReport]:
    """Threshold predicted probability at 0.5; exact ties resolve to non-deformed."""
    if not manifest.samples:
        raise ParameterError("cannot evaluate on an empty manifest")
    x = manifest_features(manifest)
    proba = model.predict_proba(x)
    preds = [LABEL_DEFORMED if p > 0.5 else LABEL_NON_DEFORMED for p in proba]
    cm = confusion(manifest.labels(), preds)
    return cm, metrics(cm)


# ---------------------------------------------------------------------------
# Report files (Table-style CSV shared with the secondary harness)
# ---------------------------------------------------------------------------


def write_metrics_csv(report: MetricsReport, path: str | Path, tag: str = "dataset") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", tag])
        for name, value in report.as_rows():
            writer.writerow([name, f"{value:.6f}"])


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", "pred_deformed", "pred_non_deformed"])
        writer.writerow(["true_deformed", cm.tp, cm.fn])
        writer.writerow(["true_non_deformed", cm.fp, cm.tn])


def read_metrics_csv(path: str | Path) -> tuple[str, dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    tag = rows[0][1] if len(rows[0]) > 1 else Path(path).stem
    return tag, {name: float(value) for name, value, *_ in rows[1:]}


def write_report_table(
    metric_files: list[str | Path], path: str | Path
) -> list[list[str]]:
    """Merge per-dataset metrics files into one table: rows metrics, columns datasets."""
    columns = [read_metrics_csv(p) for p in metric_files]
    names = ["Accuracy", "F1", "Recall", "Precision"]
    table = [["Metrics"] + [tag for tag, _ in columns]]
    for name in names:
        table.append([name] + [f"{vals.get(name, float('nan')):.3f}" for _, vals in columns])
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(table)
    return table
