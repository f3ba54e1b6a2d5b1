"""
Detection metrics for speaker verification. Both sweep the decision threshold
over every distinct score plus -inf and +inf; a trial is accepted when its
score is >= the threshold.
"""

from typing import NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import LabelError
from ..models import ScoreList, TrialList


class OperatingPoint(NamedTuple):
    value: float
    threshold: float


class DcfParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_target: float = Field(0.01, gt=0.0, lt=1.0)
    c_miss: float = Field(1.0, gt=0.0)
    c_fa: float = Field(1.0, gt=0.0)

    @property
    def normalizer(self) -> float:
        return min(self.c_miss * self.p_target, self.c_fa * (1 - self.p_target))


def _split(scores: ScoreList, trials: TrialList) -> Tuple[np.ndarray, np.ndarray]:
    trials.check_labeled()
    values = scores.lookup(trials)
    mask = trials.target_mask()
    return values[mask], values[~mask]


def _error_rates(
    target: np.ndarray, nontarget: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Miss and false-alarm rates at every sweep threshold
    :return: thresholds, FRR, FAR; FRR is nondecreasing, FAR nonincreasing
    """
    target = np.sort(np.asarray(target, dtype=np.float64))
    nontarget = np.sort(np.asarray(nontarget, dtype=np.float64))
    if not len(target) or not len(nontarget):
        raise LabelError("Need at least one target and one nontarget score")
    thresholds = np.concatenate(
        [[-np.inf], np.unique(np.concatenate([target, nontarget])), [np.inf]]
    )
    frr = np.searchsorted(target, thresholds, side="left") / len(target)
    far = 1.0 - np.searchsorted(nontarget, thresholds, side="left") / len(nontarget)
    return thresholds, frr, far


def eer_from_scores(target: np.ndarray, nontarget: np.ndarray) -> OperatingPoint:
    """
    Equal error rate of raw score arrays.

    The crossing is located on the sweep: when FRR == FAR at some sweep points
    the threshold is the middle of that run, otherwise both rates are linearly
    interpolated between the last point with FRR < FAR and the next one.
    :param target: Scores of same-speaker trials
    :param nontarget: Scores of different-speaker trials
    :return: EER as a fraction in [0, 1] and its threshold
    """
    thresholds, frr, far = _error_rates(target, nontarget)
    diff = frr - far
    # diff starts at -1 and ends at +1, so the crossing is always inside
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        ties = np.flatnonzero(diff == 0)
        threshold = (thresholds[ties[0]] + thresholds[ties[-1]]) / 2
        return OperatingPoint(float(frr[i]), float(threshold))

    lam = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = frr[i - 1] + lam * (frr[i] - frr[i - 1])
    low, high = thresholds[i - 1], thresholds[i]
    if not np.isfinite(low):
        threshold = high
    elif not np.isfinite(high):
        threshold = low
    else:
        threshold = low + lam * (high - low)
    return OperatingPoint(float(eer), float(threshold))


def min_dcf_from_scores(
    target: np.ndarray, nontarget: np.ndarray, params: DcfParams = DcfParams()
) -> OperatingPoint:
    """
    Minimum normalized detection cost of raw score arrays. The lowest threshold
    wins among equal costs
    :param target: Scores of same-speaker trials
    :param nontarget: Scores of different-speaker trials
    :param params: Target prior and error costs
    :return: minDCF and the threshold reaching it
    """
    thresholds, frr, far = _error_rates(target, nontarget)
    dcf = params.c_miss * params.p_target * frr + params.c_fa * (
        1 - params.p_target
    ) * far
    dcf /= params.normalizer
    best = int(np.argmin(dcf))
    return OperatingPoint(float(dcf[best]), float(thresholds[best]))


def compute_eer(scores: ScoreList, trials: TrialList) -> OperatingPoint:
    """
    Equal error rate of a labeled trial list
    :param scores: Scores covering every trial
    :param trials: Fully labeled trials
    :return: EER as a fraction and its threshold
    """
    return eer_from_scores(*_split(scores, trials))


def compute_min_dcf(
    scores: ScoreList, trials: TrialList, params: DcfParams = DcfParams()
) -> OperatingPoint:
    return min_dcf_from_scores(*_split(scores, trials), params)
