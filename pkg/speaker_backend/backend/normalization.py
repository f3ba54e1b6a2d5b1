import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from ..errors import DimensionError, DomainError
from ..models import EmbeddingSet


class MeanVector(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    count: int = 0

    @field_validator("mean", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim != 1 or not np.all(np.isfinite(array)):
            raise ValueError("Mean must be a finite vector")
        array.setflags(write=False)
        return array

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def compute_mean(embeddings: EmbeddingSet) -> MeanVector:
    """
    Average of all vectors in a set, the domain mean used for normalization
    :param embeddings: Nonempty embedding set
    :return: MeanVector with the number of averaged vectors
    """
    if not len(embeddings):
        raise DomainError("Cannot compute the mean of an empty embedding set")
    return MeanVector(mean=embeddings.matrix().mean(axis=0), count=len(embeddings))


def apply_mean_norm(embeddings: EmbeddingSet, mean: MeanVector) -> EmbeddingSet:
    """
    Subtract a mean vector from every embedding
    :param embeddings: Embeddings to normalize
    :param mean: Mean of matching dimension
    :return: New EmbeddingSet with the same keys
    """
    if not len(embeddings):
        return embeddings
    if mean.dim != embeddings.dim:
        raise DimensionError(
            f"Mean has dimension {mean.dim}, embeddings have {embeddings.dim}"
        )
    return embeddings.with_vectors(embeddings.matrix() - mean.mean)


def length_norm(vectors: np.ndarray) -> np.ndarray:
    """
    Scale every row to norm sqrt(F), the radius Gaussian PLDA expects
    :param vectors: N x F matrix
    :return: Normalized N x F matrix
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("Cannot length-normalize a zero vector")
    return vectors / norms * np.sqrt(vectors.shape[1])


def length_norm_set(embeddings: EmbeddingSet) -> EmbeddingSet:
    if not len(embeddings):
        return embeddings
    return embeddings.with_vectors(length_norm(embeddings.matrix()))
