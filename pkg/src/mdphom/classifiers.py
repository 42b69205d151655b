"""State-action classifiers mapping (state, action) to a block id.

Every classifier exposes ``fit(pairs, labels)`` and
``predict(state, action) -> (block, confidence)``. Feature-based
classifiers take an ``encode(state, action) -> np.ndarray`` callable
supplied by the environment.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Callable, Sequence

import numpy as np

from mdphom import kernels
from mdphom.core import ContractViolation

Encoder = Callable[[object, int], np.ndarray]


class UnseenPair(KeyError):
    """The exact memorizer was asked about a pair it never saw."""


class Classifier(ABC):
    kind: str = ""

    @abstractmethod
    def fit(self, pairs: Sequence[tuple], labels: Sequence[int]) -> "Classifier":
        ...

    @abstractmethod
    def predict(self, state, action: int) -> tuple[int, float]:
        ...

    def predict_many(self, state, actions: Sequence[int]) -> list[tuple[int, float]]:
        return [self.predict(state, a) for a in actions]

    @abstractmethod
    def to_json(self) -> dict:
        ...

    def fresh(self) -> "Classifier":
        """An unfitted classifier with the same settings."""
        return type(self)(**self._settings())

    def _settings(self) -> dict:
        return {}


def _freeze(x):
    """Turn JSON lists back into the nested tuples environments use as states."""
    if isinstance(x, list):
        return tuple(_freeze(v) for v in x)
    return x


class ExactClassifier(Classifier):
    """Memorizes the label of every training pair; confidence is always 1."""

    kind = "exact"

    def __init__(self):
        self.table: dict[tuple, int] = {}

    def fit(self, pairs, labels):
        self.table = {}
        for pair, label in zip(pairs, labels):
            self.table.setdefault((pair[0], int(pair[1])), int(label))
        return self

    def predict(self, state, action):
        try:
            return self.table[(state, int(action))], 1.0
        except KeyError:
            raise UnseenPair((state, action)) from None

    def to_json(self):
        return {"kind": self.kind, "points": [[s, a, b] for (s, a), b in self.table.items()]}

    @classmethod
    def from_json(cls, doc, encode=None):
        clf = cls()
        clf.table = {(_freeze(s), int(a)): int(b) for s, a, b in doc["points"]}
        return clf


class _FeatureClassifier(Classifier):
    def __init__(self, encode: Encoder):
        self.encode = encode

    def _settings(self):
        return {"encode": self.encode}

    def _matrix(self, pairs) -> np.ndarray:
        return np.ascontiguousarray(np.array([self.encode(s, a) for s, a in pairs], dtype=np.float64))

    @staticmethod
    def _dedup(pairs, labels) -> tuple[list, np.ndarray, np.ndarray]:
        """Distinct (pair, label) rows in first-seen order, with multiplicities."""
        counts: dict = {}
        for p, y in zip(pairs, np.asarray(labels, dtype=np.int64).tolist()):
            key = (tuple(p), y)
            counts[key] = counts.get(key, 0) + 1
        rows = list(counts)
        return ([p for p, _ in rows], np.array([y for _, y in rows], dtype=np.int64),
                np.array(list(counts.values()), dtype=np.float64))


class NearestNeighbor(_FeatureClassifier):
    """1-nearest-neighbor under Euclidean distance; ties go to the earliest point.

    Exact duplicate points are stored once (the first occurrence wins any
    tie anyway).
    """

    kind = "knn1"

    def __init__(self, encode: Encoder):
        super().__init__(encode)
        self.features = np.zeros((0, 0))
        self.labels = np.zeros(0, dtype=np.int64)

    def fit(self, pairs, labels):
        if len(pairs):
            pairs, labels, _ = self._dedup(pairs, labels)
        X = self._matrix(pairs) if len(pairs) else np.zeros((0, 0))
        if len(X):
            _, first = np.unique(X, axis=0, return_index=True)
            keep = np.sort(first)
            X = X[keep]
            labels = np.asarray(labels, dtype=np.int64)[keep]
        self.features = np.ascontiguousarray(X)
        self.labels = np.asarray(labels, dtype=np.int64)
        return self

    def predict(self, state, action):
        return self.predict_many(state, [action])[0]

    def predict_many(self, state, actions):
        if len(self.features) == 0:
            raise ContractViolation("1-NN index is empty")
        Q = self._matrix([(state, a) for a in actions])
        idx = kernels.nearest(self.features, Q)
        return [(int(self.labels[i]), 1.0) for i in idx]

    def to_json(self):
        return {"kind": self.kind, "features": self.features.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_json(cls, doc, encode):
        clf = cls(encode)
        clf.features = np.ascontiguousarray(np.array(doc["features"], dtype=np.float64))
        clf.labels = np.array(doc["labels"], dtype=np.int64)
        return clf


class DecisionTree(_FeatureClassifier):
    """CART with Gini impurity and binary axis-aligned splits, no depth cap.

    Nodes are grown until pure or until they hold fewer than two samples.
    Identical training rows are merged into integer weights, which leaves
    every impurity unchanged.
    """

    kind = "tree"

    def __init__(self, encode: Encoder):
        super().__init__(encode)
        self.nodes: list[dict] = []

    def fit(self, pairs, labels):
        if not len(pairs):
            raise ContractViolation("cannot fit a tree on an empty set")
        pairs, labels, mult = self._dedup(pairs, labels)
        X = self._matrix(pairs)
        classes, y = np.unique(labels, return_inverse=True)
        rows = np.concatenate([X, y[:, None].astype(np.float64)], axis=1)
        uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
        w = np.bincount(inverse.ravel(), weights=mult, minlength=len(uniq))
        Xu = np.ascontiguousarray(uniq[:, :-1])
        yu = np.ascontiguousarray(uniq[:, -1].astype(np.int64))
        self.nodes = _grow(Xu, yu, w, classes)
        return self

    def _leaf(self, x: np.ndarray) -> dict:
        node = self.nodes[0]
        while "feature" in node:
            node = self.nodes[node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]]
        return node

    def predict(self, state, action):
        node = self._leaf(np.asarray(self.encode(state, action), dtype=np.float64))
        return node["label"], node["confidence"]

    @property
    def depth(self) -> int:
        def d(i):
            n = self.nodes[i]
            return 0 if "feature" not in n else 1 + max(d(n["left"]), d(n["right"]))
        return d(0)

    def to_json(self):
        return {"kind": self.kind, "nodes": self.nodes}

    @classmethod
    def from_json(cls, doc, encode):
        clf = cls(encode)
        clf.nodes = [dict(n) for n in doc["nodes"]]
        for n in clf.nodes:
            if "counts" in n:
                n["counts"] = {int(k): v for k, v in n["counts"].items()}
        return clf


def _grow(X, y, w, classes) -> list[dict]:
    n_classes = len(classes)
    nodes: list[dict] = [{}]
    stack = [(0, np.arange(len(y), dtype=np.int64))]
    while stack:
        at, rows = stack.pop()
        counts = np.bincount(y[rows], weights=w[rows], minlength=n_classes)
        total = counts.sum()
        pure = np.count_nonzero(counts) == 1
        feature = -1
        if not pure and total >= 2:
            feature, threshold, _ = kernels.best_split(X, y, w, rows, n_classes)
        if feature < 0:
            top = int(np.argmax(counts))
            nodes[at] = {
                "label": int(classes[top]),
                "confidence": float(counts[top] / total),
                "counts": {int(classes[c]): float(counts[c]) for c in np.flatnonzero(counts)},
            }
            continue
        go_left = X[rows, feature] <= threshold
        left, right = len(nodes), len(nodes) + 1
        nodes.extend([{}, {}])
        nodes[at] = {"feature": int(feature), "threshold": float(threshold), "left": left, "right": right}
        stack.append((right, rows[~go_left]))
        stack.append((left, rows[go_left]))
    return nodes


_KINDS = {c.kind: c for c in (ExactClassifier, NearestNeighbor, DecisionTree)}


def make_classifier(kind: str, encode: Encoder | None = None) -> Classifier:
    if kind == "exact":
        return ExactClassifier()
    if kind not in _KINDS:
        raise ValueError(f"unknown classifier {kind!r}; expected one of {sorted(_KINDS)}")
    return _KINDS[kind](encode)


def classifier_from_json(doc: dict, encode: Encoder | None = None) -> Classifier:
    return _KINDS[doc["kind"]].from_json(doc, encode)
