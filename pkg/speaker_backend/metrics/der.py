"""
Diarization error rate on exact time intervals.

Every recording is cut at each reference and hypothesis boundary and at the
edges of the collar zones; each elementary interval between two cuts has a
constant set of reference and hypothesis speakers, so the error terms are
plain duration sums. Reference and hypothesis speakers are matched once per
recording with the assignment maximizing their scored overlap.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import linear_sum_assignment

from ..errors import UndefinedMetricError
from ..logger import logger
from ..models import Diarization, Segment

DEFAULT_COLLAR = 0.25
ADDITIVITY_TOLERANCE = 1e-6

Intervals = List[Tuple[float, float]]


class DerBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    miss_pct: float = Field(ge=0.0)
    fa_pct: float = Field(ge=0.0)
    confusion_pct: float = Field(ge=0.0)
    der_pct: float = Field(ge=0.0)
    scored_speech_seconds: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _check_additivity(self) -> "DerBreakdown":
        total = self.miss_pct + self.fa_pct + self.confusion_pct
        if abs(total - self.der_pct) > ADDITIVITY_TOLERANCE:
            raise ValueError(f"DER {self.der_pct} differs from MISS+FA+SC {total}")
        return self


@dataclass
class _ErrorTime:
    miss: float = 0.0
    fa: float = 0.0
    confusion: float = 0.0
    scored: float = 0.0

    def add(self, other: "_ErrorTime"):
        self.miss += other.miss
        self.fa += other.fa
        self.confusion += other.confusion
        self.scored += other.scored

    def breakdown(self) -> DerBreakdown:
        if self.scored <= 0:
            raise UndefinedMetricError("No scored reference speech")
        miss = 100 * self.miss / self.scored
        fa = 100 * self.fa / self.scored
        confusion = 100 * self.confusion / self.scored
        return DerBreakdown(
            miss_pct=miss,
            fa_pct=fa,
            confusion_pct=confusion,
            der_pct=miss + fa + confusion,
            scored_speech_seconds=self.scored,
        )


def merge_intervals(intervals: Iterable[Tuple[float, float]]) -> Intervals:
    """
    Union of intervals; touching intervals are joined
    """
    merged: Intervals = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def _by_speaker(segments: Iterable[Segment]) -> Dict[str, Intervals]:
    grouped: Dict[str, Intervals] = {}
    for segment in segments:
        grouped.setdefault(segment.speaker, []).append((segment.start, segment.end))
    return {spk: merge_intervals(grouped[spk]) for spk in sorted(grouped)}


class _Membership:
    """
    Point-in-union lookup over sorted disjoint intervals
    """

    def __init__(self, intervals: Intervals):
        self.starts = np.array([s for s, _ in intervals], dtype=np.float64)
        self.ends = np.array([e for _, e in intervals], dtype=np.float64)

    def contains(self, points: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.starts, points, side="right") - 1
        inside = idx >= 0
        inside[inside] = self.ends[idx[inside]] > points[inside]
        return inside


def _recording_error(
    ref: List[Segment], hyp: List[Segment], collar: float, score_overlap: bool
) -> _ErrorTime:
    ref_spk = _by_speaker(ref)
    hyp_spk = _by_speaker(hyp)

    half = collar / 2
    no_score = merge_intervals(
        (b - half, b + half)
        for intervals in ref_spk.values()
        for interval in intervals
        for b in interval
        if collar > 0
    )

    cuts = {b for intervals in ref_spk.values() for iv in intervals for b in iv}
    cuts |= {b for intervals in hyp_spk.values() for iv in intervals for b in iv}
    cuts |= {b for iv in no_score for b in iv}
    edges = np.array(sorted(cuts), dtype=np.float64)
    result = _ErrorTime()
    if len(edges) < 2:
        return result

    mids = (edges[:-1] + edges[1:]) / 2
    durations = np.diff(edges)
    scored = ~_Membership(no_score).contains(mids)
    ref_in = np.array([_Membership(iv).contains(mids) for iv in ref_spk.values()])
    hyp_in = np.array([_Membership(iv).contains(mids) for iv in hyp_spk.values()])
    ref_in = ref_in.reshape(len(ref_spk), len(mids))
    hyp_in = hyp_in.reshape(len(hyp_spk), len(mids))

    n_ref = ref_in.sum(axis=0)
    n_hyp = hyp_in.sum(axis=0)
    if not score_overlap:
        scored &= n_ref < 2
    weight = np.where(scored, durations, 0.0)

    result.scored = float(weight @ n_ref)
    result.miss = float(weight @ np.maximum(n_ref - n_hyp, 0))
    result.fa = float(weight @ np.maximum(n_hyp - n_ref, 0))

    matched = 0.0
    if ref_spk and hyp_spk:
        overlap = (ref_in * weight) @ hyp_in.T.astype(np.float64)
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        matched = float(overlap[rows, cols].sum())
    result.confusion = max(float(weight @ np.minimum(n_ref, n_hyp)) - matched, 0.0)
    return result


def _recording_errors(
    ref: Diarization, hyp: Diarization, collar: float, score_overlap: bool
) -> Dict[str, _ErrorTime]:
    if collar < 0:
        raise ValueError(f"Collar must be >= 0, got {collar}")
    ref_by = ref.by_recording()
    hyp_by = hyp.by_recording()
    errors = {}
    for recording_id in sorted(set(ref_by) | set(hyp_by)):
        errors[recording_id] = _recording_error(
            ref_by.get(recording_id, []),
            hyp_by.get(recording_id, []),
            collar,
            score_overlap,
        )
    return errors


def compute_der_per_recording(
    ref: Diarization,
    hyp: Diarization,
    collar: float = DEFAULT_COLLAR,
    score_overlap: bool = True,
) -> Dict[str, DerBreakdown]:
    """
    DER of each recording that has scored reference speech. Recordings
    without any are left out and only contribute to the total
    """
    breakdowns = {}
    for recording_id, error in _recording_errors(
        ref, hyp, collar, score_overlap
    ).items():
        if error.scored > 0:
            breakdowns[recording_id] = error.breakdown()
        else:
            logger.warning("No scored reference speech in %s", recording_id)
    return breakdowns


def compute_der(
    ref: Diarization,
    hyp: Diarization,
    collar: float = DEFAULT_COLLAR,
    score_overlap: bool = True,
) -> DerBreakdown:
    """
    Diarization error rate over all recordings
    :param ref: Reference diarization
    :param hyp: Hypothesis diarization
    :param collar: Total width of the unscored zone around each reference
        boundary, in seconds
    :param score_overlap: Score regions where several reference speakers talk
    :return: Breakdown in percent of scored reference speech
    """
    total = _ErrorTime()
    for error in _recording_errors(ref, hyp, collar, score_overlap).values():
        total.add(error)
    return total.breakdown()
