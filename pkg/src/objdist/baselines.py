"""Geometry-only distance baselines.

A single closed-form (optionally ridge-regularized) hyperplane fit over
bounding-box geometry features. Under an exact pinhole camera the distance is
exactly linear in the inverse relative box height, so on noiseless
single-class data this baseline is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BoundingBox

SIZE_FEATURE_NAMES = ("h_px", "w_px", "diag_px", "inv_h_rel", "inv_w_rel", "inv_diag_rel")


@dataclass(frozen=True)
class GeometryFeatures:
    vector: np.ndarray
    class_label: str


@dataclass
class GeometricModel:
    weights: np.ndarray
    classes: tuple[str, ...]
    min_distance_m: float = 0.1

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(
            {
                "weights": self.weights.tolist(),
                "classes": list(self.classes),
                "min_distance_m": self.min_distance_m,
                "feature_names": list(SIZE_FEATURE_NAMES) + [f"class:{c}" for c in self.classes],
            },
            indent=indent,
        )

    @classmethod
    def from_json(cls, text: str) -> "GeometricModel":
        obj = json.loads(text)
        return cls(
            weights=np.asarray(obj["weights"], dtype=np.float64),
            classes=tuple(obj["classes"]),
            min_distance_m=float(obj["min_distance_m"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "GeometricModel":
        return cls.from_json(Path(path).read_text())


def geometric_features(
    box: BoundingBox,
    image_wh: tuple[int, int],
    class_label: str,
    classes: tuple[str, ...],
) -> GeometryFeatures:
    """Box size features plus a one-hot class block.

    Sizes enter both raw (pixels) and as inverse image-relative fractions;
    the latter carry the pinhole signal d = const / h_rel.
    """
    img_w, img_h = image_wh
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image_wh must be positive, got {image_wh}")
    if class_label not in classes:
        raise ValueError(f"class {class_label!r} not in {classes}")
    diag = float(np.hypot(box.w, box.h))
    img_diag = float(np.hypot(img_w, img_h))
    vec = [
        box.h,
        box.w,
        diag,
        img_h / box.h,
        img_w / box.w,
        img_diag / diag,
    ]
    onehot = [1.0 if c == class_label else 0.0 for c in classes]
    return GeometryFeatures(
        vector=np.asarray(vec + onehot, dtype=np.float64), class_label=class_label
    )


def fit_geometric(
    features: list[GeometryFeatures],
    distances: list[float],
    ridge: float = 0.0,
    classes: tuple[str, ...] | None = None,
    min_distance_m: float = 0.1,
) -> GeometricModel:
    """Least-squares hyperplane fit via normal equations.

    The one-hot class block doubles as a per-class intercept, so no extra
    bias column is added.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if len(features) != len(distances):
        raise ValueError("features and distances must have equal length")
    if not features:
        raise ValueError("cannot fit on an empty dataset")
    if any(d <= 0 for d in distances):
        raise ValueError("distances must be positive")
    X = np.stack([f.vector for f in features])
    y = np.asarray(distances, dtype=np.float64)
    n_features = X.shape[1]
    if ridge == 0 and len(features) < n_features:
        raise ValueError(
            f"{len(features)} samples cannot determine {n_features} coefficients; "
            "use ridge > 0"
        )
    gram = X.T @ X + ridge * np.eye(n_features)
    if ridge == 0:
        rank = np.linalg.matrix_rank(gram, hermitian=True)
        if rank < n_features:
            raise np.linalg.LinAlgError(
                f"normal equations are singular (rank {rank} < {n_features}); "
                "use ridge > 0"
            )
    weights = np.linalg.solve(gram, X.T @ y)
    if classes is None:
        classes = tuple(dict.fromkeys(f.class_label for f in features))
    return GeometricModel(weights=weights, classes=classes, min_distance_m=min_distance_m)


def predict_geometric(model: GeometricModel, features: GeometryFeatures) -> float:
    """Linear evaluation, clamped below at the model's minimum distance."""
    if features.vector.shape != model.weights.shape:
        raise ValueError(
            f"feature length {features.vector.shape[0]} != model length {model.weights.shape[0]}"
        )
    raw = float(features.vector @ model.weights)
    return max(raw, model.min_distance_m)
