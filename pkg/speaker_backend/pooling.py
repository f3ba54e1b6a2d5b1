"""
Pooling of frame-level feature matrices into fixed-size segment-level vectors
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import softmax

from .errors import DimensionError, DomainError

DEFAULT_EPS = 1e-10


def _as_frames(x: np.ndarray) -> np.ndarray:
    frames = np.asarray(x, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise DimensionError(f"Expected a T x F frame matrix, got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise DomainError("Frame matrix has non-finite entries")
    return frames


@dataclass(frozen=True)
class AttentionParams:
    """
    Channel-shared scalar attention: e_t = v . tanh(W x_t + b) + k . x_t
    """

    W: np.ndarray
    b: np.ndarray
    v: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        hidden, feat = np.shape(self.W)
        if hidden < 1:
            raise DimensionError("Attention hidden size must be >= 1")
        if np.shape(self.b) != (hidden,) or np.shape(self.v) != (hidden,):
            raise DimensionError("Attention b and v must have the hidden size")
        if np.shape(self.k) != (feat,):
            raise DimensionError("Attention k must have the feature size")
        for name in ("W", "b", "v", "k"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"Attention parameter {name} is not finite")

    @property
    def hidden_size(self) -> int:
        return int(np.shape(self.W)[0])

    @classmethod
    def zeros(cls, feat_dim: int, hidden_size: int = 1) -> "AttentionParams":
        return cls(
            W=np.zeros((hidden_size, feat_dim)),
            b=np.zeros(hidden_size),
            v=np.zeros(hidden_size),
            k=np.zeros(feat_dim),
        )

    @classmethod
    def random(
        cls, feat_dim: int, hidden_size: int, rng: np.random.Generator
    ) -> "AttentionParams":
        return cls(
            W=rng.normal(size=(hidden_size, feat_dim)),
            b=rng.normal(size=hidden_size),
            v=rng.normal(size=hidden_size),
            k=rng.normal(size=feat_dim),
        )


def tap(x: np.ndarray) -> np.ndarray:
    """
    Temporal average pooling
    :param x: T x F frame matrix
    :return: F-dimensional mean over frames
    """
    return _as_frames(x).mean(axis=0)


def tsp(x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """
    Temporal statistics pooling, mean concatenated with the standard deviation.
    Variance is the population one (divided by T)
    :param x: T x F frame matrix
    :param eps: Added to the variance before the square root
    :return: 2F-dimensional vector
    """
    frames = _as_frames(x)
    mean = frames.mean(axis=0)
    var = np.mean((frames - mean) ** 2, axis=0)
    return np.concatenate([mean, np.sqrt(var + eps)])


def attention_weights(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    frames = _as_frames(x)
    if frames.shape[1] != params.W.shape[1]:
        raise DimensionError(
            f"Frames have {frames.shape[1]} features, attention expects "
            f"{params.W.shape[1]}"
        )
    energies = np.tanh(frames @ params.W.T + params.b) @ params.v + frames @ params.k
    return softmax(energies)


def asp(
    x: np.ndarray, params: AttentionParams, eps: float = DEFAULT_EPS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Attentive statistics pooling: attention-weighted mean and standard deviation
    :param x: T x F frame matrix
    :param params: Attention parameters
    :param eps: Added to the weighted variance before the square root
    :return: 2F-dimensional pooled vector and the T attention weights
    """
    frames = _as_frames(x)
    alpha = attention_weights(frames, params)
    mean = alpha @ frames
    second = alpha @ frames**2
    var = np.maximum(second - mean**2, 0.0)
    return np.concatenate([mean, np.sqrt(var + eps)]), alpha
