"""
Domain types shared by every part of the toolkit. All of them are immutable
after construction; numpy payloads are stored as read-only float32 arrays,
the precision used on disk.
"""

import math
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .errors import (
    DimensionError,
    DomainError,
    DuplicateKeyError,
    LabelError,
    MissingKeyError,
)
from .utils import is_token


def _check_token(value: str, what: str) -> str:
    if not is_token(value):
        raise ValueError(f"{what} must be a nonempty token, got {value!r}")
    return value


class TrialLabel(str, Enum):
    target = "target"
    nontarget = "nontarget"
    unknown = "unknown"


class Trial(BaseModel):
    model_config = ConfigDict(frozen=True)

    enroll: str
    test: str
    label: TrialLabel = TrialLabel.unknown

    @field_validator("enroll", "test")
    @classmethod
    def _keys_are_tokens(cls, value: str) -> str:
        return _check_token(value, "Trial key")


class TrialList(BaseModel):
    model_config = ConfigDict(frozen=True)

    trials: Tuple[Trial, ...] = ()

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def pairs(self) -> List[Tuple[str, str]]:
        return [(t.enroll, t.test) for t in self.trials]

    def check_labeled(self):
        """
        Make sure the list can be used to compute verification metrics: no
        unknown labels, at least one target and one nontarget trial
        """
        labels = {t.label for t in self.trials}
        if TrialLabel.unknown in labels:
            raise LabelError("Trial list contains unlabeled trials")
        if TrialLabel.target not in labels:
            raise LabelError("Trial list contains no target trials")
        if TrialLabel.nontarget not in labels:
            raise LabelError("Trial list contains no nontarget trials")

    def target_mask(self) -> np.ndarray:
        return np.array([t.label == TrialLabel.target for t in self.trials], bool)


class Score(BaseModel):
    model_config = ConfigDict(frozen=True)

    enroll: str
    test: str
    score: float

    @field_validator("enroll", "test")
    @classmethod
    def _keys_are_tokens(cls, value: str) -> str:
        return _check_token(value, "Score key")

    @field_validator("score")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError(f"Score must be finite, got {value}")
        return value


class ScoreList(BaseModel):
    model_config = ConfigDict(frozen=True)

    scores: Tuple[Score, ...] = ()

    def __len__(self) -> int:
        return len(self.scores)

    @classmethod
    def from_pairs(
        cls, pairs: Sequence[Tuple[str, str]], values: Iterable[float]
    ) -> "ScoreList":
        return cls(
            scores=tuple(
                Score(enroll=e, test=t, score=float(v))
                for (e, t), v in zip(pairs, values)
            )
        )

    @property
    def values(self) -> np.ndarray:
        return np.array([s.score for s in self.scores], dtype=np.float64)

    def lookup(self, trials: TrialList) -> np.ndarray:
        """
        Align scores with a trial list
        :param trials: Trials in the order the scores are wanted
        :return: Array of scores, one per trial
        """
        by_pair: Dict[Tuple[str, str], float] = {
            (s.enroll, s.test): s.score for s in self.scores
        }
        values = np.empty(len(trials), dtype=np.float64)
        for i, pair in enumerate(trials.pairs):
            try:
                values[i] = by_pair[pair]
            except KeyError:
                raise MissingKeyError(" ".join(pair), "score")
        return values


class SpeakerMap(BaseModel):
    model_config = ConfigDict(frozen=True)

    mapping: Dict[str, str]

    @field_validator("mapping")
    @classmethod
    def _tokens(cls, value: Dict[str, str]) -> Dict[str, str]:
        for utt, spk in value.items():
            _check_token(utt, "Utterance key")
            _check_token(spk, "Speaker id")
        return value

    def __len__(self) -> int:
        return len(self.mapping)

    def speaker_of(self, utt: str) -> str:
        try:
            return self.mapping[utt]
        except KeyError:
            raise MissingKeyError(utt, "utt2spk")

    def speakers(self) -> Dict[str, List[str]]:
        """
        Group utterances by speaker, keeping first-seen order for both
        """
        grouped: Dict[str, List[str]] = {}
        for utt, spk in self.mapping.items():
            grouped.setdefault(spk, []).append(utt)
        return grouped


class Segment(BaseModel):
    model_config = ConfigDict(frozen=True)

    recording_id: str
    start: float
    end: float
    speaker: str = ""

    @field_validator("recording_id")
    @classmethod
    def _recording_is_token(cls, value: str) -> str:
        return _check_token(value, "Recording id")

    @field_validator("speaker")
    @classmethod
    def _speaker_is_token(cls, value: str) -> str:
        if value:
            _check_token(value, "Speaker")
        return value

    @model_validator(mode="after")
    def _check_times(self) -> "Segment":
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError("Segment times must be finite")
        if self.start < 0:
            raise ValueError(f"Segment start must be >= 0, got {self.start}")
        if self.end <= self.start:
            raise ValueError(f"Segment end {self.end} must exceed start {self.start}")
        return self

    @property
    def duration(self) -> float:
        return self.end - self.start


class Diarization(BaseModel):
    model_config = ConfigDict(frozen=True)

    segments: Tuple[Segment, ...] = ()

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def recording_ids(self) -> List[str]:
        return sorted({s.recording_id for s in self.segments})

    def for_recording(self, recording_id: str) -> List[Segment]:
        return [s for s in self.segments if s.recording_id == recording_id]

    def by_recording(self) -> Dict[str, List[Segment]]:
        grouped: Dict[str, List[Segment]] = {r: [] for r in self.recording_ids}
        for segment in self.segments:
            grouped[segment.recording_id].append(segment)
        return grouped


class EmbeddingSet(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dim: int = 0
    entries: Dict[str, np.ndarray] = {}

    @field_validator("entries", mode="before")
    @classmethod
    def _as_float32(cls, value: Dict[str, Sequence[float]]) -> Dict[str, np.ndarray]:
        converted = {}
        for key, vector in value.items():
            _check_token(key, "Utterance key")
            array = np.array(vector, dtype=np.float32)
            array.setflags(write=False)
            converted[key] = array
        return converted

    @model_validator(mode="after")
    def _check_vectors(self) -> "EmbeddingSet":
        if self.dim < 0:
            raise ValueError("Embedding dimension must be >= 0")
        if self.entries and self.dim == 0:
            raise DimensionError("Nonempty embedding set needs a positive dim")
        for key, vector in self.entries.items():
            if vector.shape != (self.dim,):
                raise DimensionError(
                    f"Embedding {key} has shape {vector.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(vector)):
                raise DomainError(f"Embedding {key} has non-finite components")
        return self

    @classmethod
    def from_items(cls, items: Iterable[Tuple[str, Sequence[float]]]) -> "EmbeddingSet":
        """
        Build a set from (key, vector) pairs, inferring the dimension from the
        first vector
        :param items: Pairs in the order they should be stored
        :return: EmbeddingSet
        """
        entries: Dict[str, np.ndarray] = {}
        dim: Optional[int] = None
        for key, vector in items:
            array = np.asarray(vector, dtype=np.float32)
            if key in entries:
                raise DuplicateKeyError(f"Duplicate key: {key}")
            if dim is None:
                dim = int(array.shape[0]) if array.ndim == 1 else -1
            if array.ndim != 1 or array.shape[0] != dim:
                raise DimensionError(
                    f"Embedding {key} has shape {array.shape}, expected ({dim},)"
                )
            entries[key] = array
        return cls(dim=dim or 0, entries=entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: object) -> bool:
        return key in self.entries

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and list(self.entries) == list(other.entries)
            and all(
                np.array_equal(v, other.entries[k]) for k, v in self.entries.items()
            )
        )

    @property
    def keys(self) -> List[str]:
        return list(self.entries)

    def get(self, key: str, side: str = "") -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingKeyError(key, side)

    def matrix(
        self, keys: Optional[Sequence[str]] = None, side: str = ""
    ) -> np.ndarray:
        """
        Stack embeddings into a float64 matrix
        :param keys: Keys to stack, in order. All entries by default
        :param side: Name of the set, used in lookup errors
        :return: N x dim matrix
        """
        keys = self.keys if keys is None else keys
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.get(k, side) for k in keys]).astype(np.float64)

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingSet":
        """
        Same keys, new vectors (row i replaces the i-th entry)
        """
        return EmbeddingSet.from_items(zip(self.keys, vectors))
