"""One-against-all reduction of multiclass problems to binary (W)SVMs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataError
from .kernel_solver import load_model, save_model, smo_train
from .metrics import accumulate
from .model_select import make_params

MANIFEST = "manifest.txt"

BinaryTrainer = Callable[[np.ndarray, np.ndarray, int], object]


@dataclass(frozen=True, eq=False)
class OvaModel:
    """One binary model per class, ``class_ids`` ascending.

    ``per_class[i]`` separates ``class_ids[i]`` (+1) from all other classes (-1).
    """

    class_ids: np.ndarray
    per_class: tuple

    def __post_init__(self):
        if len(self.class_ids) != len(self.per_class):
            raise DataError("one binary model per class is required")

    @property
    def n_features(self) -> int:
        return self.per_class[0].n_features

    def decision_matrix(self, x) -> np.ndarray:
        """Decision values, one column per class."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} features, got {x.shape[1]}")
        return np.column_stack([m.decision_function(x) for m in self.per_class])

    def predict(self, x) -> np.ndarray:
        # argmax keeps the first maximum, i.e. the lowest class id on ties
        return self.class_ids[np.argmax(self.decision_matrix(x), axis=1)]


def fixed_params_trainer(c: float, gamma: float, weighted: bool = True, **svm_kw) -> BinaryTrainer:
    """Binary trainer with pinned (C, gamma); weights follow each sub-problem's counts."""
    point = (np.log2(c), np.log2(gamma))

    def train(x, y, seed):
        return smo_train(x, y, make_params(point, y, weighted, **svm_kw))

    return train


def ova_train(x, labels, trainer: BinaryTrainer, seed: int = 0) -> OvaModel:
    """Train one model per class against the rest.

    ``trainer(x, y, seed)`` gets the full training set with +-1 labels and
    returns an SvmModel or anything with a ``final_model`` attribute.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise DataError("one label per row is required")
    ids, counts = np.unique(labels, return_counts=True)
    if len(ids) < 2:
        raise DataError("need at least two classes")
    small = ids[counts < 2]
    if len(small):
        raise DataError(f"classes with fewer than 2 points: {small.tolist()}")
    models = []
    for cid in ids:
        out = trainer(x, np.where(labels == cid, 1, -1), seed)
        models.append(getattr(out, "final_model", out))
    return OvaModel(ids, tuple(models))


def ova_predict(model: OvaModel, x):
    """Class id of one feature vector: argmax of decision values, lowest id on ties."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("ova_predict takes a single feature vector")
    return model.predict(x[None, :])[0].item()


def per_class_confusion(predicted, actual, class_ids=None) -> dict:
    """One-vs-rest confusion matrix of every class."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if class_ids is None:
        class_ids = np.unique(np.concatenate([actual, predicted]))
    return {int(c): accumulate(np.where(predicted == c, 1, -1), np.where(actual == c, 1, -1))
            for c in class_ids}


def save_ova(model: OvaModel, directory) -> None:
    """Write one model file per class plus a manifest listing them."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for cid, m in zip(model.class_ids, model.per_class):
        name = f"class_{cid}.model"
        save_model(m, d / name)
        lines.append(f"{cid} {name}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def load_ova(directory) -> OvaModel:
    d = Path(directory)
    ids, models = [], []
    for lineno, line in enumerate((d / MANIFEST).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            cid, name = line.split()
            ids.append(int(cid))
        except ValueError:
            raise DataError(f"{d / MANIFEST}:{lineno}: expected '<class id> <file>'") from None
        models.append(load_model(d / name))
    return OvaModel(np.asarray(ids, dtype=np.int64), tuple(models))

