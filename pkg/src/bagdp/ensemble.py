"""Bagging ensembles: train N base models on subsamples, predict by vote."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import sampler
from .accountant import BaggingConfig
from .data import as_arrays
from .errors import InvalidArgumentError
from .learners import LabeledExample, describe, model_from_dict

FORMAT_NAME = "bagdp-ensemble"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnsembleModel:
    config: BaggingConfig
    base_models: tuple
    learner_descriptor: str

    def __post_init__(self):
        if len(self.base_models) != self.config.N:
            raise InvalidArgumentError("base_models", f"expected {self.config.N}, got {len(self.base_models)}")

    def predict(self, features) -> int:
        return predict(self, features)

    def predict_many(self, X) -> np.ndarray:
        votes = np.stack([m.predict_many(X) for m in self.base_models])
        return majority_vote(votes)

    def to_dict(self) -> dict:
        c = self.config
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": {"n": c.n, "k": c.k, "N": c.N, "mode": c.mode.value, "seed": c.seed},
            "learner": self.learner_descriptor,
            "base_models": [m.to_dict() for m in self.base_models],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format") != FORMAT_NAME:
            raise InvalidArgumentError("format", f"not a {FORMAT_NAME} document")
        if d.get("version") != FORMAT_VERSION:
            raise InvalidArgumentError("version", f"unsupported version {d.get('version')!r}")
        config = BaggingConfig(**d["config"])
        return cls(config, tuple(model_from_dict(m) for m in d["base_models"]), d["learner"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def majority_vote(votes: np.ndarray) -> np.ndarray:
    """Column-wise plurality of an (N, T) label array; ties go to the smallest label."""
    votes = np.asarray(votes, dtype=np.int64)
    n_models, n_points = votes.shape
    counts = np.zeros((n_points, int(votes.max()) + 1), dtype=np.int64)
    np.add.at(counts, (np.tile(np.arange(n_points), n_models), votes.ravel()), 1)
    return np.argmax(counts, axis=1)


def train(dataset: Sequence[LabeledExample], config: BaggingConfig, learner, workers: int | None = None) -> EnsembleModel:
    """Fit one base model per subsample of a single Bagging draw.

    The dataset is only touched through ``dataset[i]`` for the sampled
    indices. Base models are collected by subsample index, so ``workers``
    affects speed, never the result.
    """
    if len(dataset) != config.n:
        raise InvalidArgumentError("dataset", f"size {len(dataset)} does not match config.n={config.n}")
    subsamples = sampler.sample_all(config)

    def fit(sub):
        return learner([dataset[i] for i in sub.indices])

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            models = tuple(pool.map(fit, subsamples))
    else:
        models = tuple(fit(s) for s in subsamples)
    return EnsembleModel(config, models, describe(learner))


def predict(model: EnsembleModel, features) -> int:
    votes = np.array([[m.predict(features)] for m in model.base_models], dtype=np.int64)
    return int(majority_vote(votes)[0])


def evaluate(model: EnsembleModel, test_set) -> float:
    """Fraction of test examples whose vote matches the label."""
    if len(test_set) == 0:
        raise InvalidArgumentError("test_set", "cannot evaluate on an empty test set")
    X, y = as_arrays(test_set)
    return float(np.mean(model.predict_many(X) == y))
