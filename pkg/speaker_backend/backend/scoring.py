import abc
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from ..errors import DimensionError, DomainError
from ..models import EmbeddingSet, ScoreList, TrialList
from ..utils import l2_normalize_rows
from .plda import PldaModel, PldaScorer

DEFAULT_CHUNK_SIZE = 4096


def cosine_score(enroll: np.ndarray, test: np.ndarray) -> float:
    """
    Cosine similarity of two nonzero vectors
    """
    e = np.asarray(enroll, dtype=np.float64)
    t = np.asarray(test, dtype=np.float64)
    norm = np.linalg.norm(e) * np.linalg.norm(t)
    if norm == 0:
        raise DomainError("Cosine score of a zero vector")
    return float(np.clip(e @ t / norm, -1.0, 1.0))


class ScoringBackend:
    name = ""

    @abc.abstractmethod
    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        """
        Score row i of enroll against row i of test
        :param enroll: N x F matrix
        :param test: N x F matrix
        :return: N scores
        """
        raise NotImplementedError


class CosineBackend(ScoringBackend):
    name = "cosine"

    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        e = l2_normalize_rows(enroll)
        t = l2_normalize_rows(test)
        return np.clip(np.einsum("ij,ij->i", e, t), -1.0, 1.0)


class PldaBackend(ScoringBackend):
    name = "plda"

    def __init__(self, model: PldaModel):
        self.scorer = PldaScorer(model)

    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        return self.scorer.score(enroll, test)


def score_trials(
    backend: ScoringBackend,
    enroll_set: EmbeddingSet,
    test_set: EmbeddingSet,
    trials: TrialList,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> ScoreList:
    """
    Score every trial, in trial order. Trials are split into chunks that may be
    scored by several threads; every score depends only on its own pair
    :param backend: Cosine or PLDA backend
    :param enroll_set: Embeddings looked up by the enroll key
    :param test_set: Embeddings looked up by the test key
    :param trials: Trials to score
    :param workers: Number of threads
    :param chunk_size: Trials per chunk
    :return: ScoreList aligned with trials
    """
    if not len(trials):
        return ScoreList()
    if enroll_set.dim != test_set.dim:
        raise DimensionError(
            f"Enroll dim {enroll_set.dim} differs from test dim {test_set.dim}"
        )

    pairs = trials.pairs
    enroll = enroll_set.matrix([e for e, _ in pairs], side="enroll")
    test = test_set.matrix([t for _, t in pairs], side="test")
    bounds = range(0, len(pairs), max(1, chunk_size))

    def _chunk(start: int) -> np.ndarray:
        stop = start + chunk_size
        return backend.score_pairs(enroll[start:stop], test[start:stop])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_chunk, bounds))
    else:
        chunks = [_chunk(start) for start in bounds]
    return ScoreList.from_pairs(pairs, np.concatenate(chunks))


def fuse_scores(
    score_lists: Sequence[ScoreList], weights: Optional[Sequence[float]] = None
) -> ScoreList:
    """
    Weighted sum of several systems' scores, aligned on the first list's pairs
    :param score_lists: One ScoreList per system
    :param weights: One weight per system, equal weights by default
    :return: Fused ScoreList
    """
    if not score_lists:
        raise DimensionError("Nothing to fuse")
    if weights is None:
        weights = [1.0 / len(score_lists)] * len(score_lists)
    if len(weights) != len(score_lists):
        raise DimensionError(
            f"Got {len(weights)} weights for {len(score_lists)} score lists"
        )

    first = score_lists[0].scores
    reference = TrialList.model_validate(
        {"trials": [{"enroll": s.enroll, "test": s.test} for s in first]}
    )
    fused = np.zeros(len(reference))
    aligned: List[np.ndarray] = [scores.lookup(reference) for scores in score_lists]
    for weight, values in zip(weights, aligned):
        fused += weight * values
    return ScoreList.from_pairs(reference.pairs, fused)
