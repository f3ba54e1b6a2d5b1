import numpy as np
import pydantic
import pytest

from speaker_backend.errors import (
    DimensionError,
    DomainError,
    DuplicateKeyError,
    LabelError,
    MissingKeyError,
)
from speaker_backend.models import (
    Diarization,
    EmbeddingSet,
    ScoreList,
    Segment,
    SpeakerMap,
    Trial,
    TrialLabel,
    TrialList,
)


def test_embedding_set_is_read_only_float32():
    embeddings = EmbeddingSet.from_items([("a", [1.0, 2.0]), ("b", [3.0, 4.0])])
    assert embeddings.dim == 2
    assert embeddings.keys == ["a", "b"]
    assert embeddings.get("a").dtype == np.float32
    with pytest.raises(ValueError):
        embeddings.get("a")[0] = 5.0
    assert embeddings.matrix().dtype == np.float64


def test_embedding_set_rejects_bad_input():
    with pytest.raises(DuplicateKeyError):
        EmbeddingSet.from_items([("a", [1.0]), ("a", [2.0])])
    with pytest.raises(DimensionError):
        EmbeddingSet.from_items([("a", [1.0]), ("b", [1.0, 2.0])])
    with pytest.raises(DomainError):
        EmbeddingSet.from_items([("a", [np.nan])])
    with pytest.raises(pydantic.ValidationError):
        EmbeddingSet.from_items([("a b", [1.0])])


def test_embedding_set_lookup_names_the_side():
    embeddings = EmbeddingSet.from_items([("a", [1.0])])
    with pytest.raises(MissingKeyError, match="enroll.*zzz"):
        embeddings.matrix(["a", "zzz"], side="enroll")


def test_empty_embedding_set():
    embeddings = EmbeddingSet()
    assert len(embeddings) == 0
    assert embeddings.matrix().shape == (0, 0)


def test_trial_list_labels():
    trials = TrialList(
        trials=(
            Trial(enroll="a", test="b", label=TrialLabel.target),
            Trial(enroll="a", test="c", label=TrialLabel.nontarget),
        )
    )
    trials.check_labeled()
    assert trials.target_mask().tolist() == [True, False]

    with pytest.raises(LabelError):
        TrialList(trials=(Trial(enroll="a", test="b"),)).check_labeled()
    with pytest.raises(LabelError):
        TrialList(
            trials=(Trial(enroll="a", test="b", label=TrialLabel.target),)
        ).check_labeled()


def test_score_list_lookup_follows_trial_order():
    scores = ScoreList.from_pairs([("a", "b"), ("a", "c")], [0.5, -1.0])
    trials = TrialList(
        trials=(Trial(enroll="a", test="c"), Trial(enroll="a", test="b"))
    )
    assert scores.lookup(trials).tolist() == [-1.0, 0.5]

    missing = TrialList(trials=(Trial(enroll="x", test="y"),))
    with pytest.raises(MissingKeyError):
        scores.lookup(missing)
    with pytest.raises(pydantic.ValidationError):
        ScoreList.from_pairs([("a", "b")], [float("inf")])


def test_speaker_map_groups_utterances():
    spk = SpeakerMap(mapping={"u1": "s1", "u2": "s2", "u3": "s1"})
    assert spk.speakers() == {"s1": ["u1", "u3"], "s2": ["u2"]}
    assert spk.speaker_of("u2") == "s2"
    with pytest.raises(MissingKeyError):
        spk.speaker_of("u4")


def test_segment_validation():
    assert Segment(recording_id="r", start=1.0, end=2.5).duration == 1.5
    with pytest.raises(pydantic.ValidationError):
        Segment(recording_id="r", start=2.0, end=2.0)
    with pytest.raises(pydantic.ValidationError):
        Segment(recording_id="r", start=-1.0, end=2.0)
    with pytest.raises(pydantic.ValidationError):
        Segment(recording_id="r", start=0.0, end=float("inf"))


def test_diarization_groups_by_recording():
    diarization = Diarization(
        segments=(
            Segment(recording_id="b", start=0, end=1, speaker="x"),
            Segment(recording_id="a", start=0, end=1, speaker="y"),
            Segment(recording_id="b", start=2, end=3, speaker="x"),
        )
    )
    assert diarization.recording_ids == ["a", "b"]
    assert len(diarization.for_recording("b")) == 2
    assert list(diarization.by_recording()) == ["a", "b"]
