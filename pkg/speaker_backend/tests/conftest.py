from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np
import pytest
from syrupy.extensions.json import JSONSnapshotExtension

from speaker_backend.models import EmbeddingSet, Segment, SpeakerMap


@pytest.fixture
def data_root():
    return (Path(__file__).absolute().parent / "data").absolute()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def json_snapshot(snapshot):
    return snapshot.use_extension(JSONSnapshotExtension)


class TwoCovarianceData:
    """
    Embeddings drawn from x = mu + y + e. Speaker factors are whitened so
    their sample covariance is exactly sigma_b
    """

    def __init__(self, speakers: int = 200, per_speaker: int = 10, seed: int = 7):
        rng = np.random.default_rng(seed)
        self.mu = np.array([1.0, -2.0, 0.5, 3.0])
        self.sigma_b = np.diag([4.0, 2.0, 1.0, 0.5])
        self.sigma_w = np.diag([0.5, 1.0, 0.25, 0.75])
        dim = len(self.mu)

        factors = rng.normal(size=(speakers, dim))
        factors -= factors.mean(axis=0)
        sample_cov = factors.T @ factors / speakers
        factors = factors @ np.linalg.inv(np.linalg.cholesky(sample_cov)).T
        factors = factors @ np.linalg.cholesky(self.sigma_b).T

        items, mapping = [], {}
        for s, factor in enumerate(factors):
            noise = rng.multivariate_normal(np.zeros(dim), self.sigma_w, per_speaker)
            for j, vector in enumerate(self.mu + factor + noise):
                key = f"spk{s:03d}-utt{j:02d}"
                items.append((key, vector))
                mapping[key] = f"spk{s:03d}"
        self.embeddings = EmbeddingSet.from_items(items)
        self.spk = SpeakerMap(mapping=mapping)


@pytest.fixture(scope="session")
def plda_data():
    return TwoCovarianceData()


class StubEmbedder:
    """
    Stand-in for a neural extractor: each subsegment gets the orthonormal
    center of the speaker talking at its midpoint, plus Gaussian noise
    """

    def __init__(self, dim: int = 16, noise: float = 0.05, seed: int = 3):
        self.rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(self.rng.normal(size=(dim, dim)))
        self.centers = q.T
        self.noise = noise

    def embed(
        self, planned: List[Tuple[str, Segment]], speaker_at: Callable[[float], int]
    ) -> EmbeddingSet:
        items = []
        for key, segment in planned:
            center = self.centers[speaker_at((segment.start + segment.end) / 2)]
            items.append(
                (key, center + self.noise * self.rng.normal(size=len(center)))
            )
        return EmbeddingSet.from_items(items)


@pytest.fixture
def stub_embedder():
    return StubEmbedder()
