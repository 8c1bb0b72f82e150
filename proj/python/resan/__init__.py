"""Python bindings for the reinforced self-attention network."""

import json

from ._core import (
    DataError,
    ShapeError,
    bench_sampling,
    content_hash,
    gradcheck,
    masked_softmax,
    reward,
    rss_features,
    rss_log_prob,
    rss_mask,
    rss_sample,
    tokenize,
)
from . import _core

__all__ = [
    "DataError",
    "Model",
    "ShapeError",
    "bench_sampling",
    "content_hash",
    "generate_synthetic",
    "gradcheck",
    "masked_softmax",
    "reward",
    "rss_features",
    "rss_log_prob",
    "rss_mask",
    "rss_sample",
    "tokenize",
    "train",
]


def generate_synthetic(**spec):
    """Synthetic key/value examples as dicts with tokens, label and planted positions."""
    return json.loads(_core._generate_synthetic(json.dumps(spec)))


def train(config=None, checkpoint=None):
    """Trains one model from a run configuration dict and returns the run summary."""
    return json.loads(_core._train(json.dumps(config or {}), checkpoint or ""))


class Model:
    """A trained model loaded from a checkpoint file."""

    def __init__(self, path):
        self._model = _core._Model(str(path))

    @property
    def config(self):
        return json.loads(self._model.config())

    def predict(self, sentence, second="", mode="", seed=0):
        return json.loads(self._model.predict(sentence, second, mode, seed))

    def trace(self, sentence, second="", mode="", seed=0):
        return json.loads(self._model.trace(sentence, second, mode, seed))
