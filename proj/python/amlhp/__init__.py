"""Python bindings for the amlhp header-payload packet classifier."""

import numpy as np

from ._core import (
    Error,
    Model,
    header_vector,
    load_dataset,
    metrics,
    payload_vector,
    synthesize,
    train,
)

__all__ = [
    "Error",
    "Model",
    "features",
    "header_vector",
    "load_dataset",
    "metrics",
    "payload_vector",
    "synthesize",
    "train",
]


def features(byte_array):
    """Scale uint8 bytes to the float32 [0, 1] model inputs."""
    return np.asarray(byte_array, dtype=np.float32) / np.float32(255.0)
