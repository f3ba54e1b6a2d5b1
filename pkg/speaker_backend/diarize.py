"""
Spectral-clustering diarization of speech regions with known embeddings.

Speech regions are tiled into overlapping subsegments whose embeddings are
computed elsewhere (``diarize plan`` lists them); the subsegments are then
clustered on a pruned cosine affinity graph and turned back into a hard
segmentation.
"""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from sklearn.cluster import KMeans

from .errors import DegenerateGraphError
from .logger import logger
from .models import Diarization, EmbeddingSet, Segment
from .utils import l2_normalize_rows, symmetrize

ATTENUATION = 0.01

Subsegment = Tuple[str, Segment]


class SubsegmentPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: float = Field(1.5, gt=0.0)
    shift: float = Field(0.75, gt=0.0)
    min_dur: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _shift_within_window(self) -> "SubsegmentPlan":
        if self.shift > self.window:
            raise ValueError(
                f"Shift {self.shift} must not exceed the window {self.window}"
            )
        return self


class ClusterConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_percentile: float = Field(0.95, gt=0.0, le=1.0)
    max_speakers: int = Field(20, ge=1)
    fixed_speakers: Optional[int] = Field(None, ge=1)
    kmeans_restarts: int = Field(10, ge=1)
    seed: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _fixed_within_max(self) -> "ClusterConfig":
        fixed = self.fixed_speakers
        if fixed is not None and fixed > self.max_speakers:
            raise ValueError(
                f"fixed_speakers {fixed} exceeds "
                f"max_speakers {self.max_speakers}"
            )
        return self


_TIME_TOLERANCE = 1e-6


def subsegment_key(recording_id: str, start: float, end: float) -> str:
    return f"{recording_id}-{round(start * 1000):08d}-{round(end * 1000):08d}"


def _tiles(segment: Segment, plan: SubsegmentPlan) -> List[Tuple[float, float]]:
    # i * shift drifts, an end this close to the region end would leave a 0 s tile
    tiles: List[Tuple[float, float]] = []
    i = 0
    while True:
        start = segment.start + i * plan.shift
        end = min(start + plan.window, segment.end)
        if segment.end - end < _TIME_TOLERANCE:
            end = segment.end
        if tiles and end - start < plan.min_dur:
            tiles[-1] = (tiles[-1][0], segment.end)
            break
        tiles.append((start, end))
        if end >= segment.end:
            break
        i += 1
    return tiles


def subsegment(vad: Iterable[Segment], plan: SubsegmentPlan) -> List[Subsegment]:
    """
    Tile speech regions with fixed windows. A trailing piece shorter than
    min_dur is absorbed by the previous tile; a region too short for even
    one such piece still yields a single tile
    :param vad: Speech regions
    :param plan: Window, shift and minimum trailing duration in seconds
    :return: (key, segment) pairs in region order
    """
    planned = []
    for region in vad:
        for start, end in _tiles(region, plan):
            key = subsegment_key(region.recording_id, start, end)
            planned.append(
                (key, Segment(recording_id=region.recording_id, start=start, end=end))
            )
    return planned


def build_affinity(embeddings: np.ndarray) -> np.ndarray:
    """
    Cosine similarity between every pair of rows, with a unit diagonal
    """
    unit = l2_normalize_rows(np.atleast_2d(np.asarray(embeddings, dtype=np.float64)))
    affinity = np.clip(symmetrize(unit @ unit.T), -1.0, 1.0)
    np.fill_diagonal(affinity, 1.0)
    return affinity


def refine_affinity(affinity: np.ndarray, p_percentile: float) -> np.ndarray:
    """
    Keep the largest p_percentile fraction of every row and damp the rest
    by a factor of 100, then symmetrize
    :param affinity: N x N symmetric affinity
    :param p_percentile: Retained fraction of each row, in (0, 1]
    :return: Pruned N x N symmetric affinity
    """
    pruned = np.array(affinity, dtype=np.float64)
    thresholds = np.quantile(pruned, 1.0 - p_percentile, axis=1, keepdims=True)
    pruned[pruned < thresholds] *= ATTENUATION
    return symmetrize(pruned)


def _relabel(labels: np.ndarray) -> np.ndarray:
    order: Dict[int, int] = {}
    for label in labels:
        order.setdefault(int(label), len(order))
    return np.array([order[int(label)] for label in labels], dtype=int)


def _num_speakers(eigenvalues: np.ndarray, cfg: ClusterConfig) -> int:
    n = len(eigenvalues)
    if cfg.fixed_speakers is not None:
        return min(cfg.fixed_speakers, n)
    gaps = np.diff(eigenvalues[: min(cfg.max_speakers, n)])
    if not len(gaps):
        return 1
    return int(np.argmax(gaps)) + 1


def spectral_cluster(
    affinity: np.ndarray,
    cfg: ClusterConfig = ClusterConfig(),
    keys: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, int]:
    """
    Cluster the nodes of an affinity graph.

    Negative affinities are treated as missing edges. The number of clusters
    is forced by cfg.fixed_speakers or taken at the largest gap among the
    smallest max_speakers eigenvalues of the normalized Laplacian. k-means
    runs kmeans_restarts times with seeds seed, seed + 1, ...; the lowest
    inertia wins and ties keep the earlier seed.
    :param affinity: N x N refined affinity
    :param cfg: Clustering options
    :param keys: Node names used in error messages
    :return: Labels in 0..k-1 numbered by first appearance, and k
    """
    weights = np.maximum(np.asarray(affinity, dtype=np.float64), 0.0)
    n = weights.shape[0]
    degree = weights.sum(axis=1)
    isolated = np.flatnonzero(degree <= 0)
    if isolated.size:
        node = keys[isolated[0]] if keys is not None else str(isolated[0])
        raise DegenerateGraphError(f"Subsegment {node} has no affinity to any node")

    scale = 1.0 / np.sqrt(degree)
    laplacian = np.eye(n) - symmetrize(scale[:, None] * weights * scale[None, :])
    eigenvalues, eigenvectors = linalg.eigh(laplacian)
    k = _num_speakers(eigenvalues, cfg)
    logger.debug("Smallest Laplacian eigenvalues: %s", eigenvalues[: k + 1])
    if k == 1:
        return np.zeros(n, dtype=int), 1

    spectral = eigenvectors[:, :k]
    norms = np.linalg.norm(spectral, axis=1, keepdims=True)
    spectral = spectral / np.where(norms > 0, norms, 1.0)

    runs = [
        KMeans(
            n_clusters=k, init="k-means++", n_init=1, random_state=cfg.seed + restart
        ).fit(spectral)
        for restart in range(cfg.kmeans_restarts)
    ]
    # min keeps the first of equal inertias
    best = min(runs, key=lambda kmeans: kmeans.inertia_)
    return _relabel(best.labels_), k


def _owned_pieces(
    region: Segment, tiles: List[Tuple[float, float]]
) -> List[Tuple[float, float]]:
    """
    Split a speech region between its tiles: every instant goes to the tile
    with the nearest center
    """
    centers = [(start + end) / 2 for start, end in tiles]
    cuts = [(a + b) / 2 for a, b in zip(centers, centers[1:])]
    bounds = [region.start] + cuts + [region.end]
    return list(zip(bounds, bounds[1:]))


def diarize_recording(
    vad: Sequence[Segment],
    embeddings: EmbeddingSet,
    plan: SubsegmentPlan = SubsegmentPlan(),
    cfg: ClusterConfig = ClusterConfig(),
) -> Diarization:
    """
    Diarize one recording
    :param vad: Speech regions of the recording
    :param embeddings: Embeddings keyed by subsegment key
    :param plan: Subsegmentation used when the embeddings were extracted
    :param cfg: Clustering options
    :return: Non-overlapping speaker segments named spk00, spk01, ...
    """
    regions = sorted(vad, key=lambda s: (s.start, s.end))
    tiling = [(region, _tiles(region, plan)) for region in regions]
    keys = [
        subsegment_key(region.recording_id, start, end)
        for region, tiles in tiling
        for start, end in tiles
    ]
    if not keys:
        return Diarization()

    matrix = embeddings.matrix(keys, side="embeddings")
    affinity = refine_affinity(build_affinity(matrix), cfg.p_percentile)
    labels, k = spectral_cluster(affinity, cfg, keys)
    logger.info(
        "%s: %d subsegments, %d speakers", regions[0].recording_id, len(keys), k
    )

    merged: List[Segment] = []
    label_iter = iter(labels)
    for region, tiles in tiling:
        for start, end in _owned_pieces(region, tiles):
            speaker = f"spk{next(label_iter):02d}"
            if merged and merged[-1].speaker == speaker and start <= merged[-1].end:
                merged[-1] = merged[-1].model_copy(update={"end": end})
            elif end > start:
                merged.append(
                    Segment(
                        recording_id=region.recording_id,
                        start=start,
                        end=end,
                        speaker=speaker,
                    )
                )
    return Diarization(segments=tuple(merged))


def diarize_recordings(
    vads: Dict[str, List[Segment]],
    embeddings: EmbeddingSet,
    plan: SubsegmentPlan = SubsegmentPlan(),
    cfg: ClusterConfig = ClusterConfig(),
) -> Diarization:
    """
    Diarize several recordings independently, in sorted recording order
    """
    segments: List[Segment] = []
    for recording_id in sorted(vads):
        segments.extend(
            diarize_recording(vads[recording_id], embeddings, plan, cfg).segments
        )
    return Diarization(segments=tuple(segments))
