import numpy as np
import pytest

from speaker_backend.backend import (
    CosineBackend,
    MeanVector,
    PldaBackend,
    PldaModel,
    apply_mean_norm,
    compute_mean,
    cosine_score,
    fuse_scores,
    length_norm,
    length_norm_set,
    plda_llr,
    score_trials,
)
from speaker_backend.errors import DimensionError, DomainError, MissingKeyError
from speaker_backend.models import EmbeddingSet, ScoreList, TrialList


def _trials(pairs) -> TrialList:
    return TrialList.model_validate(
        {"trials": [{"enroll": e, "test": t} for e, t in pairs]}
    )


@pytest.fixture
def enroll_set(rng):
    return EmbeddingSet.from_items(
        (f"e{i:03d}", rng.normal(size=8)) for i in range(50)
    )


@pytest.fixture
def probe_set(rng):
    return EmbeddingSet.from_items(
        (f"t{i:03d}", rng.normal(size=8)) for i in range(80)
    )


@pytest.fixture
def many_trials(rng):
    enroll = rng.integers(0, 50, 10000)
    test = rng.integers(0, 80, 10000)
    return _trials((f"e{e:03d}", f"t{t:03d}") for e, t in zip(enroll, test))


def test_cosine_score_examples():
    assert cosine_score([1, 0], [1, 0]) == 1.0
    assert cosine_score([1, 0], [0, 1]) == 0.0
    assert cosine_score([1, 0], [-1, 0]) == -1.0
    assert cosine_score([1, 0], [1, 1]) == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_score_ignores_scale(rng):
    e, t = rng.normal(size=(2, 10))
    assert cosine_score(3 * e, 0.5 * t) == pytest.approx(cosine_score(e, t))
    assert cosine_score(-e, t) == pytest.approx(-cosine_score(e, t))


def test_cosine_score_of_zero_vector():
    with pytest.raises(DomainError):
        cosine_score([0, 0], [1, 0])


def test_cosine_backend_matches_single_scores(enroll_set, probe_set):
    trials = _trials([("e000", "t000"), ("e001", "t005"), ("e049", "t079")])
    scores = score_trials(CosineBackend(), enroll_set, probe_set, trials)
    assert [(s.enroll, s.test) for s in scores.scores] == trials.pairs
    for score in scores.scores:
        expected = cosine_score(
            enroll_set.get(score.enroll), probe_set.get(score.test)
        )
        assert score.score == pytest.approx(expected, abs=1e-6)


def test_plda_backend_matches_single_llrs(enroll_set, probe_set, rng):
    a = rng.normal(size=(8, 8))
    model = PldaModel(mu=np.zeros(8), sigma_b=a @ a.T, sigma_w=np.eye(8))
    trials = _trials([("e003", "t004"), ("e010", "t010")])
    scores = score_trials(PldaBackend(model), enroll_set, probe_set, trials)
    for score in scores.scores:
        expected = plda_llr(
            model,
            enroll_set.get(score.enroll).astype(np.float64),
            probe_set.get(score.test).astype(np.float64),
        )
        assert score.score == pytest.approx(expected, rel=1e-9)


def test_parallel_scoring_is_identical_to_serial(enroll_set, probe_set, many_trials):
    backend = CosineBackend()
    serial = score_trials(backend, enroll_set, probe_set, many_trials, chunk_size=512)
    parallel = score_trials(
        backend, enroll_set, probe_set, many_trials, workers=4, chunk_size=512
    )
    assert parallel == serial
    rechunked = score_trials(
        backend, enroll_set, probe_set, many_trials, workers=3, chunk_size=77
    )
    assert np.allclose(rechunked.values, serial.values, rtol=0, atol=1e-12)


def test_empty_trial_list(enroll_set, probe_set):
    assert len(score_trials(CosineBackend(), enroll_set, probe_set, TrialList())) == 0


@pytest.mark.parametrize(
    "pair,side", [(("missing", "t000"), "enroll"), (("e000", "missing"), "test")]
)
def test_missing_key_names_its_side(enroll_set, probe_set, pair, side):
    with pytest.raises(MissingKeyError) as exc_info:
        score_trials(CosineBackend(), enroll_set, probe_set, _trials([pair]))
    assert exc_info.value.key == "missing"
    assert exc_info.value.side == side


def test_dimension_mismatch(enroll_set):
    other = EmbeddingSet.from_items([("t000", np.ones(3))])
    with pytest.raises(DimensionError):
        score_trials(CosineBackend(), enroll_set, other, _trials([("e000", "t000")]))


def test_fuse_scores_aligns_on_the_first_list():
    first = ScoreList.from_pairs([("a", "b"), ("c", "d")], [1.0, 2.0])
    second = ScoreList.from_pairs([("c", "d"), ("a", "b")], [10.0, 20.0])

    fused = fuse_scores([first, second], weights=[0.5, 0.25])
    assert [(s.enroll, s.test) for s in fused.scores] == [("a", "b"), ("c", "d")]
    assert fused.values.tolist() == [5.5, 3.5]

    averaged = fuse_scores([first, second])
    assert averaged.values.tolist() == [10.5, 6.0]


def test_fuse_scores_errors():
    first = ScoreList.from_pairs([("a", "b")], [1.0])
    with pytest.raises(DimensionError):
        fuse_scores([])
    with pytest.raises(DimensionError):
        fuse_scores([first], weights=[1.0, 2.0])
    with pytest.raises(MissingKeyError):
        fuse_scores([first, ScoreList.from_pairs([("x", "y")], [1.0])])


def test_mean_normalization_example():
    embeddings = EmbeddingSet.from_items([("a", [1.0, 2.0]), ("b", [3.0, 6.0])])
    mean = compute_mean(embeddings)
    assert mean.mean.tolist() == [2.0, 4.0]
    assert mean.count == 2

    centered = apply_mean_norm(embeddings, mean)
    assert centered.keys == ["a", "b"]
    assert centered.get("a").tolist() == [-1.0, -2.0]
    assert centered.get("b").tolist() == [1.0, 2.0]


def test_mean_normalized_set_is_centered(rng):
    embeddings = EmbeddingSet.from_items(
        (f"utt{i:03d}", rng.normal(loc=3.0, scale=2.0, size=8)) for i in range(100)
    )
    centered = apply_mean_norm(embeddings, compute_mean(embeddings))
    assert np.max(np.abs(centered.matrix().mean(axis=0))) < 1e-6


def test_zero_mean_changes_nothing(enroll_set):
    centered = apply_mean_norm(enroll_set, MeanVector(mean=np.zeros(enroll_set.dim)))
    assert centered == enroll_set


def test_mean_normalization_errors():
    with pytest.raises(DomainError):
        compute_mean(EmbeddingSet())
    embeddings = EmbeddingSet.from_items([("a", [1.0, 2.0])])
    with pytest.raises(DimensionError):
        apply_mean_norm(embeddings, MeanVector(mean=[1.0, 2.0, 3.0]))
    assert len(apply_mean_norm(EmbeddingSet(), MeanVector(mean=[1.0]))) == 0


def test_length_norm_scales_to_sqrt_dim(rng):
    vectors = rng.normal(size=(20, 9)) * rng.uniform(0.1, 10, size=(20, 1))
    normalized = length_norm(vectors)
    assert np.allclose(np.linalg.norm(normalized, axis=1), 3.0)
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    assert np.allclose(normalized / 3.0, unit)

    as_set = length_norm_set(EmbeddingSet.from_items([("a", [3.0, 4.0])]))
    assert np.allclose(as_set.get("a"), np.array([0.6, 0.8]) * np.sqrt(2))


def test_length_norm_of_zero_vector():
    with pytest.raises(DomainError):
        length_norm(np.zeros((1, 4)))
