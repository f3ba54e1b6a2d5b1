from typing import Tuple

import numpy as np
from scipy import linalg

from .errors import ConditioningError, DomainError
from .logger import logger

JITTER_RETRIES = 3


def is_token(value: str) -> bool:
    """
    Check that a key is a nonempty token without whitespace
    :param value: Utterance, recording or speaker key
    :return: True if the key can be written to Kaldi-style text files
    """
    return bool(value) and not any(ch.isspace() for ch in value)


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2


def l2_normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """
    Scale every row of a matrix to unit Euclidean norm
    :param vectors: N x F matrix
    :return: N x F matrix with unit-norm rows
    """
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    zero = np.flatnonzero(norms[:, 0] == 0)
    if zero.size:
        raise DomainError(f"Zero-norm vector at row {int(zero[0])}")
    return vectors / norms


def conditioned_cholesky(
    cov: np.ndarray, name: str = "covariance"
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cholesky-factorize a covariance, adding a growing ridge if it is not
    positive-definite. The ridge starts at 1e-6 * trace / F and doubles on
    every retry.
    :param cov: F x F symmetric matrix
    :param name: Name used in log and error messages
    :return: Lower Cholesky factor and the (possibly regularized) covariance
    """
    try:
        return linalg.cholesky(cov, lower=True), cov
    except linalg.LinAlgError:
        pass

    dim = cov.shape[0]
    ridge = 1e-6 * float(np.trace(cov)) / dim
    if not ridge > 0:
        ridge = 1e-6
    for _ in range(JITTER_RETRIES + 1):
        regularized = cov + ridge * np.eye(dim)
        try:
            factor = linalg.cholesky(regularized, lower=True)
        except linalg.LinAlgError:
            ridge *= 2
            continue
        logger.debug("Regularized %s with ridge %.3g", name, ridge)
        return factor, regularized
    raise ConditioningError(f"The {name} is not positive-definite")


def gaussian_logpdf(deltas: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """
    Log-density of zero-mean Gaussian evaluated at every row of deltas
    :param deltas: N x F matrix of centered observations
    :param cov: F x F positive-definite covariance
    :return: N log-densities
    """
    try:
        factor = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        raise ConditioningError("Covariance is not positive-definite")
    dim = cov.shape[0]
    whitened = linalg.solve_triangular(factor, deltas.T, lower=True)
    log_det = 2 * np.sum(np.log(np.diag(factor)))
    mahalanobis = np.einsum("ij,ij->j", whitened, whitened)
    return -0.5 * (dim * np.log(2 * np.pi) + log_det + mahalanobis)
