"""kNN probe on frozen embeddings with repeated stratified splits."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import f1_score
from sklearn.model_selection import StratifiedShuffleSplit
from sklearn.neighbors import KNeighborsClassifier

from .validation import check_embeddings, check_positive_int

__all__ = ["EvalReport", "knn_predict", "knn_eval", "f1_scores"]


@dataclass
class EvalReport:
    micro_f1: list
    macro_f1: list
    loss_curve: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def n_splits(self):
        return len(self.micro_f1)

    @property
    def micro_mean(self):
        return float(np.mean(self.micro_f1))

    @property
    def macro_mean(self):
        return float(np.mean(self.macro_f1))

    @property
    def micro_std(self):
        return float(np.std(self.micro_f1))

    @property
    def macro_std(self):
        return float(np.std(self.macro_f1))


def knn_predict(train_x, train_y, test_x, k=5):
    """Majority vote among the ``k`` Euclidean nearest training points.

    Vote ties go to the smallest label id.
    """
    clf = KNeighborsClassifier(n_neighbors=k, metric="euclidean")
    return clf.fit(train_x, train_y).predict(test_x)


def f1_scores(y_true, y_pred):
    """``(micro, macro)`` F1 over the labels present in either array."""
    return (
        float(f1_score(y_true, y_pred, average="micro")),
        float(f1_score(y_true, y_pred, average="macro", zero_division=0)),
    )


def knn_eval(H, labels, k=5, train_frac=0.2, repeats=10, seed=0, loss_curve=()):
    """Average kNN Micro/Macro-F1 over ``repeats`` stratified random splits."""
    start = time.perf_counter()
    H, labels = check_embeddings(H, labels)
    k = check_positive_int(k, "k")
    repeats = check_positive_int(repeats, "repeats")
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    _, per_class = np.unique(labels, return_counts=True)
    if per_class.min() < 2:
        raise ValueError("every class needs at least 2 nodes to appear in both train and test")
    splitter = StratifiedShuffleSplit(n_splits=repeats, train_size=train_frac, random_state=seed)
    micro, macro = [], []
    for train, test in splitter.split(H, labels):
        if k > len(train):
            raise ValueError(f"k={k} exceeds the {len(train)} training nodes")
        pred = knn_predict(H[train], labels[train], H[test], k)
        mi, ma = f1_scores(labels[test], pred)
        micro.append(mi)
        macro.append(ma)
    return EvalReport(micro, macro, list(loss_curve), time.perf_counter() - start)
