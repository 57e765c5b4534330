"""Base learners with a uniform ``fit(examples) -> model`` interface.

Every model exposes ``predict``, ``predict_many``, a deterministic
``canonical_form`` (bytes, used as an outcome label by the verifier) and a
JSON-friendly ``to_dict``. Ties are always resolved towards the smallest
label id.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class LabeledExample:
    features: tuple[float, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(x) for x in self.features))
        if isinstance(self.label, bool) or int(self.label) != self.label or self.label < 0:
            raise InvalidArgumentError("label", f"must be a non-negative integer, got {self.label!r}")
        object.__setattr__(self, "label", int(self.label))


def serialize_example(example: LabeledExample) -> bytes:
    """Injective byte encoding: label, feature count, big-endian doubles."""
    f = example.features
    return struct.pack(f">qI{len(f)}d", example.label, len(f), *f)


def _as_arrays(examples: Sequence[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([e.features for e in examples], dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(len(examples), -1)
    y = np.array([e.label for e in examples], dtype=np.int64)
    return X, y


def _majority(labels: np.ndarray) -> int:
    # bincount + argmax returns the first (smallest) label among ties
    return int(np.argmax(np.bincount(labels)))


def _require_examples(examples) -> None:
    if len(examples) == 0:
        raise InvalidArgumentError("subsample", "cannot fit on an empty subsample")


# ---------------------------------------------------------------- k-NN

@dataclass(frozen=True, eq=False)
class KNNModel:
    """Stores its training subsample verbatim; that is all its parameters."""

    examples: tuple[LabeledExample, ...]
    k_neighbors: int
    ordered: bool = True
    kind: ClassVar[str] = "knn"

    def __post_init__(self):
        X, y = _as_arrays(self.examples)
        object.__setattr__(self, "_X", X)
        object.__setattr__(self, "_y", y)

    @property
    def canonical_form(self) -> bytes:
        parts = [serialize_example(e) for e in self.examples]
        if not self.ordered:
            parts.sort()
        return b"".join(parts)

    def predict(self, features) -> int:
        return int(self.predict_many(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        d2 = ((X[:, None, :] - self._X[None, :, :]) ** 2).sum(axis=2)
        # stable sort: equal distances keep the earliest stored example first
        nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k_neighbors]
        return np.array([_majority(self._y[row]) for row in nearest], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "k_neighbors": self.k_neighbors,
            "ordered": self.ordered,
            "features": [list(e.features) for e in self.examples],
            "labels": [e.label for e in self.examples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KNNModel":
        examples = tuple(LabeledExample(tuple(f), y) for f, y in zip(d["features"], d["labels"]))
        return cls(examples, d["k_neighbors"], d["ordered"])


def fit_knn(examples: Sequence[LabeledExample], k_neighbors: int = 1, *, ordered: bool = True) -> KNNModel:
    """k-nearest-neighbour "training": keep the subsample.

    ``ordered`` keeps the draw order in the canonical form (with-replacement
    subsamples are sequences); otherwise the serialized examples are sorted.
    """
    _require_examples(examples)
    if not 1 <= k_neighbors <= len(examples):
        raise InvalidArgumentError("k_neighbors", f"must lie in [1, {len(examples)}], got {k_neighbors}")
    return KNNModel(tuple(examples), k_neighbors, ordered)


# ---------------------------------------------------------------- majority class

@dataclass(frozen=True)
class MajorityClassModel:
    label: int
    kind: ClassVar[str] = "majority"

    @property
    def canonical_form(self) -> bytes:
        return struct.pack(">q", self.label)

    def predict(self, features) -> int:
        return self.label

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        return np.full(len(X), self.label, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "MajorityClassModel":
        return cls(d["label"])


def fit_majority_class(examples: Sequence[LabeledExample]) -> MajorityClassModel:
    _require_examples(examples)
    return MajorityClassModel(_majority(np.array([e.label for e in examples], dtype=np.int64)))


# ---------------------------------------------------------------- logistic regression

def softmax_loss_and_grad(W: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy plus ``l2/2 * ||W[:-1]||^2`` and its gradient.

    ``X`` carries a trailing column of ones; the matching last row of ``W``
    is the bias and is not regularised. ``Y`` is one-hot.
    """
    logits = X @ W
    logits -= logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    log_probs = logits - log_norm
    m = X.shape[0]
    reg = W[:-1]
    loss = -(Y * log_probs).sum() / m + 0.5 * l2 * float((reg * reg).sum())
    grad = X.T @ (np.exp(log_probs) - Y) / m
    grad[:-1] += l2 * reg
    return float(loss), grad


@dataclass(frozen=True, eq=False)
class LogisticModel:
    classes: tuple[int, ...]
    weights: np.ndarray = field(repr=False)  # (d + 1, len(classes)), last row is the bias
    kind: ClassVar[str] = "logistic"

    @property
    def canonical_form(self) -> bytes:
        q = np.rint(self.weights * 1e9).astype(np.int64)
        header = struct.pack(f">II{len(self.classes)}q", *q.shape, *self.classes)
        return header + q.astype(">i8").tobytes()

    def predict(self, features) -> int:
        return int(self.predict_many(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if len(self.classes) == 1:
            return np.full(len(X), self.classes[0], dtype=np.int64)
        scores = X @ self.weights[:-1] + self.weights[-1]
        return np.asarray(self.classes, dtype=np.int64)[np.argmax(scores, axis=1)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "classes": list(self.classes), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(tuple(d["classes"]), np.array(d["weights"], dtype=np.float64))


def fit_logistic(
    examples: Sequence[LabeledExample],
    epochs: int = 200,
    learning_rate: float = 0.5,
    l2: float = 1e-4,
    init_seed: int = 0,
) -> LogisticModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Only the classes present in the subsample are modelled. The sole random
    input is the weight initialisation, drawn from ``init_seed``.
    """
    _require_examples(examples)
    if epochs < 1:
        raise InvalidArgumentError("epochs", f"must be positive, got {epochs}")
    if not learning_rate > 0:
        raise InvalidArgumentError("learning_rate", f"must be positive, got {learning_rate}")
    if not l2 >= 0:
        raise InvalidArgumentError("l2", f"must be non-negative, got {l2}")
    X, y = _as_arrays(examples)
    if not np.isfinite(X).all():
        raise InvalidArgumentError("features", "non-finite feature value")
    classes = np.unique(y)
    d = X.shape[1]
    if len(classes) == 1:
        return LogisticModel((int(classes[0]),), np.zeros((d + 1, 1)))

    Xb = np.hstack([X, np.ones((len(X), 1))])
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    W = np.random.default_rng(init_seed).normal(0.0, 0.01, size=(d + 1, len(classes)))
    for _ in range(epochs):
        _, grad = softmax_loss_and_grad(W, Xb, Y, l2)
        W -= learning_rate * grad
    return LogisticModel(tuple(int(c) for c in classes), W)


# ---------------------------------------------------------------- learner objects

@dataclass(frozen=True)
class KNNLearner:
    k_neighbors: int = 1
    ordered: bool = True
    # canonical_form is the serialized subsample itself
    releases_subsample: ClassVar[bool] = True

    def __call__(self, examples):
        return fit_knn(examples, self.k_neighbors, ordered=self.ordered)

    @property
    def descriptor(self) -> str:
        return f"knn(k_neighbors={self.k_neighbors},ordered={self.ordered})"


@dataclass(frozen=True)
class MajorityClassLearner:
    def __call__(self, examples):
        return fit_majority_class(examples)

    @property
    def descriptor(self) -> str:
        return "majority"


@dataclass(frozen=True)
class LogisticLearner:
    epochs: int = 200
    learning_rate: float = 0.5
    l2: float = 1e-4
    init_seed: int = 0

    def __call__(self, examples):
        return fit_logistic(examples, self.epochs, self.learning_rate, self.l2, self.init_seed)

    @property
    def descriptor(self) -> str:
        return (
            f"logistic(epochs={self.epochs},learning_rate={self.learning_rate!r},"
            f"l2={self.l2!r},init_seed={self.init_seed})"
        )


MODEL_TYPES = {cls.kind: cls for cls in (KNNModel, MajorityClassModel, LogisticModel)}

Learner = Callable[[Sequence[LabeledExample]], object]


def model_from_dict(d: dict):
    try:
        return MODEL_TYPES[d["kind"]].from_dict(d)
    except KeyError:
        raise InvalidArgumentError("kind", f"unknown model kind {d.get('kind')!r}") from None


def describe(learner) -> str:
    return getattr(learner, "descriptor", None) or repr(learner)


def make_learner(name: str, **params):
    """Build a learner from a CLI-style name and keyword hyperparameters."""
    table = {"knn": KNNLearner, "majority": MajorityClassLearner, "logistic": LogisticLearner}
    if name not in table:
        raise InvalidArgumentError("learner", f"unknown learner {name!r}; choose from {sorted(table)}")
    return table[name](**params)
