"""
Two-covariance PLDA: x = mu + y + e with speaker factor y ~ N(0, sigma_b) and
residual e ~ N(0, sigma_w). EM training, log-likelihood-ratio scoring and
unsupervised adaptation to a new domain.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import linalg

from .. import kaldi_io
from ..errors import (
    DimensionError,
    DomainError,
    FormatError,
    LabelError,
    MissingKeyError,
    NumericError,
)
from ..logger import logger
from ..models import EmbeddingSet, SpeakerMap
from ..utils import conditioned_cholesky, gaussian_logpdf, symmetrize

SYMMETRY_TOL = 1e-9


def _as_matrix(value, name: str, shape: Tuple[int, ...]) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    if array.shape != shape:
        raise ValueError(f"{name} has shape {array.shape}, expected {shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} has non-finite entries")
    return array


class PldaModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mu: np.ndarray
    sigma_b: np.ndarray
    sigma_w: np.ndarray

    @model_validator(mode="before")
    @classmethod
    def _check_invariants(cls, data: Dict) -> Dict:
        mu = np.array(data["mu"], dtype=np.float64)
        if mu.ndim != 1 or mu.shape[0] < 1:
            raise ValueError("PLDA mean must be a nonempty vector")
        dim = mu.shape[0]
        result = {"mu": _as_matrix(mu, "mu", (dim,))}
        for name in ("sigma_b", "sigma_w"):
            matrix = _as_matrix(data[name], name, (dim, dim))
            scale = max(1.0, float(np.max(np.abs(matrix))))
            if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOL * scale:
                raise ValueError(f"{name} is not symmetric")
            result[name] = symmetrize(matrix)

        eigvals = linalg.eigvalsh(result["sigma_b"])
        if eigvals[0] < -SYMMETRY_TOL * max(1.0, float(eigvals[-1])):
            raise ValueError("sigma_b is not positive-semidefinite")
        try:
            linalg.cholesky(result["sigma_w"], lower=True)
        except linalg.LinAlgError:
            raise ValueError("sigma_w is not positive-definite")

        for array in result.values():
            array.setflags(write=False)
        return result

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    def save(self, path: Union[str, Path]):
        kaldi_io.write_plda(self.mu, self.sigma_b, self.sigma_w, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PldaModel":
        mu, sigma_b, sigma_w = kaldi_io.read_plda(path)
        try:
            return cls(mu=mu, sigma_b=sigma_b, sigma_w=sigma_w)
        except pydantic.ValidationError as e:
            raise FormatError(f"Invalid PLDA model {path}: {e.errors()[0]['msg']}")


@dataclass
class PldaTrainResult:
    model: PldaModel
    loglik: List[float] = field(default_factory=list)


@dataclass
class _SpeakerStats:
    counts: np.ndarray  # S
    means: np.ndarray  # S x F
    within_scatter: np.ndarray  # F x F
    total: int


def _speaker_stats(embeddings: EmbeddingSet, spk: SpeakerMap) -> _SpeakerStats:
    groups: Dict[str, List[str]] = {}
    for key in embeddings.keys:
        if key not in spk.mapping:
            raise MissingKeyError(key, "utt2spk")
        groups.setdefault(spk.mapping[key], []).append(key)
    ignored = len(spk) - len(embeddings)
    if ignored > 0:
        logger.info("%d utt2spk entries have no embedding", ignored)
    if len(groups) < 2:
        raise LabelError("PLDA training needs at least two speakers")

    dim = embeddings.dim
    counts = np.empty(len(groups), dtype=int)
    means = np.empty((len(groups), dim))
    within = np.zeros((dim, dim))
    for i, keys in enumerate(groups.values()):
        vectors = embeddings.matrix(keys)
        counts[i] = len(keys)
        means[i] = vectors.mean(axis=0)
        centered = vectors - means[i]
        within += centered.T @ centered
    return _SpeakerStats(
        counts=counts, means=means, within_scatter=within, total=int(counts.sum())
    )


@dataclass
class _Posterior:
    means: np.ndarray  # S x F, E[y_s]
    covs: Dict[int, np.ndarray]  # utterance count -> Cov[y_s]
    loglik: float


def _e_step(
    stats: _SpeakerStats, mu: np.ndarray, sigma_b: np.ndarray, sigma_w: np.ndarray
) -> _Posterior:
    dim = mu.shape[0]
    deltas = stats.means - mu
    post_means = np.empty_like(deltas)
    covs = {}

    w_factor = linalg.cholesky(sigma_w, lower=True)
    w_logdet = 2 * np.sum(np.log(np.diag(w_factor)))
    w_trace = np.trace(linalg.cho_solve((w_factor, True), stats.within_scatter))
    # sum over utterances of log N(x; speaker mean, W), minus the W/n term
    # that integrating the speaker factor reintroduces
    loglik = -0.5 * (stats.total * (dim * np.log(2 * np.pi) + w_logdet) + w_trace)
    loglik -= np.sum(
        -0.5 * (dim * np.log(2 * np.pi) + w_logdet - dim * np.log(stats.counts))
    )

    for count in np.unique(stats.counts):
        rows = np.flatnonzero(stats.counts == count)
        marginal = symmetrize(sigma_b + sigma_w / count)
        gain = linalg.solve(marginal, sigma_b, assume_a="pos").T
        post_means[rows] = deltas[rows] @ gain.T
        covs[int(count)] = symmetrize(sigma_b - gain @ sigma_b)
        loglik += float(np.sum(gaussian_logpdf(deltas[rows], marginal)))

    return _Posterior(means=post_means, covs=covs, loglik=float(loglik))


def _m_step(
    stats: _SpeakerStats, mu: np.ndarray, post: _Posterior
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    num_speakers = len(stats.counts)
    weights = stats.counts[:, None]
    mu = mu + np.sum(weights * (stats.means - mu - post.means), axis=0) / stats.total

    cov_sum = sum(post.covs[int(n)] for n in stats.counts)
    sigma_b = (cov_sum + post.means.T @ post.means) / num_speakers

    residuals = stats.means - mu - post.means
    weighted_cov_sum = sum(int(n) * post.covs[int(n)] for n in stats.counts)
    sigma_w = (
        stats.within_scatter + (weights * residuals).T @ residuals + weighted_cov_sum
    ) / stats.total

    _, sigma_b = conditioned_cholesky(symmetrize(sigma_b), "between covariance")
    _, sigma_w = conditioned_cholesky(symmetrize(sigma_w), "within covariance")
    return mu, sigma_b, sigma_w


def _initial_model(embeddings: EmbeddingSet) -> Tuple[np.ndarray, ...]:
    data = embeddings.matrix()
    mu = data.mean(axis=0)
    total = np.atleast_2d(np.cov(data, rowvar=False, bias=True))
    ridge = 1e-6 * np.trace(total) / embeddings.dim
    start = symmetrize(total / 2 + ridge * np.eye(embeddings.dim))
    _, start = conditioned_cholesky(start, "initial covariance")
    return mu, start, start.copy()


def plda_loglik(model: PldaModel, embeddings: EmbeddingSet, spk: SpeakerMap) -> float:
    """
    Total log-likelihood of the embeddings, grouped by speaker, under the model
    """
    stats = _speaker_stats(embeddings, spk)
    return _e_step(stats, model.mu, model.sigma_b, model.sigma_w).loglik


def plda_train(
    embeddings: EmbeddingSet, spk: SpeakerMap, iters: int = 10
) -> PldaTrainResult:
    """
    Fit a two-covariance PLDA model with EM
    :param embeddings: Training embeddings
    :param spk: Speaker of every training utterance
    :param iters: Number of EM iterations, 0 returns the initialization
    :return: Model and the data log-likelihood before the first and after
        every iteration
    """
    stats = _speaker_stats(embeddings, spk)
    if stats.total <= embeddings.dim:
        logger.warning(
            "Only %d utterances for dimension %d, covariances will be regularized",
            stats.total,
            embeddings.dim,
        )
    mu, sigma_b, sigma_w = _initial_model(embeddings)
    result = PldaTrainResult(model=PldaModel(mu=mu, sigma_b=sigma_b, sigma_w=sigma_w))

    for iteration in range(iters):
        post = _e_step(stats, mu, sigma_b, sigma_w)
        result.loglik.append(post.loglik)
        logger.info("EM iteration %d: log-likelihood %.6f", iteration, post.loglik)
        mu, sigma_b, sigma_w = _m_step(stats, mu, post)

    result.model = PldaModel(mu=mu, sigma_b=sigma_b, sigma_w=sigma_w)
    result.loglik.append(_e_step(stats, mu, sigma_b, sigma_w).loglik)
    return result


class PldaScorer:
    """
    Precomputed quadratic forms for LLR scoring of many trial pairs
    """

    def __init__(self, model: PldaModel):
        self.model = model
        total = model.sigma_b + model.sigma_w
        total_inv = self._inv(total, "total covariance")
        schur = symmetrize(total - model.sigma_b @ total_inv @ model.sigma_b)
        schur_inv = self._inv(schur, "same-speaker covariance")

        self.quad = symmetrize(schur_inv - total_inv)
        self.cross = symmetrize(schur_inv @ model.sigma_b @ total_inv)
        self.offset = -0.5 * (self._logdet(schur) - self._logdet(total))

    @staticmethod
    def _inv(matrix: np.ndarray, name: str) -> np.ndarray:
        try:
            factor = linalg.cho_factor(matrix, lower=True)
        except linalg.LinAlgError:
            raise NumericError(f"PLDA {name} is not positive-definite")
        return symmetrize(linalg.cho_solve(factor, np.eye(matrix.shape[0])))

    @staticmethod
    def _logdet(matrix: np.ndarray) -> float:
        factor = linalg.cholesky(matrix, lower=True)
        return float(2 * np.sum(np.log(np.diag(factor))))

    def score(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        """
        Same-speaker vs different-speaker log-likelihood ratios, row by row
        :param enroll: N x F enrollment embeddings
        :param test: N x F test embeddings
        :return: N scores
        """
        e = np.atleast_2d(enroll) - self.model.mu
        t = np.atleast_2d(test) - self.model.mu
        scores = self.offset - 0.5 * (
            np.einsum("ij,jk,ik->i", e, self.quad, e)
            + np.einsum("ij,jk,ik->i", t, self.quad, t)
            - 2 * np.einsum("ij,jk,ik->i", e, self.cross, t)
        )
        if not np.all(np.isfinite(scores)):
            raise NumericError("PLDA produced non-finite scores")
        return scores


def plda_llr(model: PldaModel, enroll: np.ndarray, test: np.ndarray) -> float:
    """
    log p(enroll, test | same speaker) - log p(enroll, test | different speakers)
    """
    return float(PldaScorer(model).score(enroll, test)[0])


def plda_adapt(
    model: PldaModel, adapt_set: EmbeddingSet, alpha: float, split: float = 0.5
) -> PldaModel:
    """
    Unsupervised adaptation: move the mean to the new domain and add the
    excess variance of the adaptation data, split between the two covariances
    :param model: Out-of-domain model
    :param adapt_set: Unlabeled in-domain embeddings
    :param alpha: Fraction of the excess variance to add, in [0, 1]
    :param split: Share of the added variance going to sigma_b, in [0, 1]
    :return: Adapted model
    """
    if not 0 <= alpha <= 1 or not 0 <= split <= 1:
        raise DomainError(f"alpha {alpha} and split {split} must be in [0, 1]")
    if not len(adapt_set):
        raise LabelError("Adaptation set is empty")
    if adapt_set.dim != model.dim:
        raise DimensionError(
            f"Adaptation set has dimension {adapt_set.dim}, model has {model.dim}"
        )

    data = adapt_set.matrix()
    mean = data.mean(axis=0)
    centered = data - mean
    covariance = centered.T @ centered / len(data)

    excess = symmetrize(covariance - model.sigma_b - model.sigma_w)
    eigvals, eigvecs = linalg.eigh(excess)
    dropped = int(np.sum(eigvals < 0))
    if dropped:
        logger.debug("Ignoring %d directions with negative excess variance", dropped)
    excess = symmetrize((eigvecs * np.maximum(eigvals, 0)) @ eigvecs.T)

    return PldaModel(
        mu=mean,
        sigma_b=model.sigma_b + alpha * split * excess,
        sigma_w=model.sigma_w + alpha * (1 - split) * excess,
    )
