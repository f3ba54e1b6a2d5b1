"""
Margin-based softmax objectives on cosine logits: plain softmax, A-softmax,
AM-softmax and AAM-softmax, with sub-centers and the inter-topK penalty.
Gradients are analytic; a small gradient-descent trainer runs them on
synthetic pooled embeddings.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import log_softmax, softmax

from .errors import DimensionError, DomainError, TrainingError
from .logger import logger
from .pooling import tap, tsp

_TINY = 1e-12


class MarginVariant(str, Enum):
    softmax = "softmax"
    a_softmax = "a_softmax"
    am_softmax = "am_softmax"
    aam_softmax = "aam_softmax"


class MarginConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: MarginVariant = MarginVariant.aam_softmax
    scale: float = Field(32.0, gt=0)
    margin: float = Field(0.2, ge=0)

    @model_validator(mode="after")
    def _check_margin(self) -> "MarginConfig":
        if self.variant == MarginVariant.aam_softmax and self.margin >= math.pi / 2:
            raise ValueError("AAM-softmax margin must be below pi/2")
        if self.variant == MarginVariant.a_softmax and 0 < self.margin < 1:
            raise ValueError("A-softmax margin is an angle multiplier: 0 or >= 1")
        return self

    @property
    def effective_scale(self) -> float:
        return 1.0 if self.variant == MarginVariant.softmax else self.scale


class SubCenterConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    centers: int = Field(1, ge=1)


class InterTopKConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = Field(0, ge=0)
    margin: float = Field(0.0, ge=0)


@dataclass
class ClassifierHead:
    """
    Class weights, rows c*K .. c*K+K-1 are the K sub-centers of class c
    """

    weights: np.ndarray

    def num_classes(self, sub: SubCenterConfig) -> int:
        rows = self.weights.shape[0]
        if rows % sub.centers:
            raise DimensionError(
                f"Head has {rows} rows, not a multiple of {sub.centers} sub-centers"
            )
        return rows // sub.centers


@dataclass
class LossResult:
    loss: float
    grad_emb: np.ndarray
    grad_head: np.ndarray


@dataclass
class _Forward:
    x_unit: np.ndarray
    x_norm: np.ndarray
    w_unit: np.ndarray
    w_norm: np.ndarray
    row_cosines: np.ndarray  # N x C*K
    best_center: np.ndarray  # N x C
    cosines: np.ndarray  # N x C
    logits: np.ndarray  # N x C
    dlogit_dcos: np.ndarray  # N x C


def init_head(
    num_classes: int, dim: int, sub: SubCenterConfig, seed: int
) -> ClassifierHead:
    """
    Random Gaussian directions scaled to unit norm, one row per sub-center
    """
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=(num_classes * sub.centers, dim))
    weights /= np.linalg.norm(weights, axis=1, keepdims=True)
    return ClassifierHead(weights=weights)


def _target_transform(
    cos: np.ndarray, cfg: MarginConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Margin transform of the target cosine and its derivative w.r.t. the cosine
    """
    m = cfg.margin
    if cfg.variant == MarginVariant.softmax:
        return cos.copy(), np.ones_like(cos)
    if cfg.variant == MarginVariant.am_softmax:
        return cos - m, np.ones_like(cos)

    cos = np.clip(cos, -1.0, 1.0)
    theta = np.arccos(cos)
    sin = np.sin(theta)
    safe_sin = np.maximum(sin, _TINY)

    if cfg.variant == MarginVariant.aam_softmax:
        psi = cos * math.cos(m) - sin * math.sin(m)
        dpsi = math.cos(m) + cos * math.sin(m) / safe_sin
        # beyond pi - m the angle would wrap around; keep the logit monotone
        easy = cos <= math.cos(math.pi - m)
        psi = np.where(easy, cos - m * math.sin(m), psi)
        dpsi = np.where(easy, 1.0, dpsi)
        return psi, dpsi

    mult = m if m >= 1 else 1.0
    n = np.floor(mult * theta / math.pi)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    psi = sign * np.cos(mult * theta) - 2 * n
    dpsi = np.where(
        sin > _TINY, sign * mult * np.sin(mult * theta) / safe_sin, mult * mult
    )
    return psi, dpsi


def _topk_classes(cosines: np.ndarray, target: int, k: int) -> np.ndarray:
    """
    Indices of the k non-target classes with the highest cosine, ties broken
    by the lower class index
    """
    order = np.argsort(-cosines, kind="stable")
    return order[order != target][:k]


def _forward(
    embeddings: np.ndarray,
    targets: np.ndarray,
    head: ClassifierHead,
    cfg: MarginConfig,
    sub: SubCenterConfig,
    itk: InterTopKConfig,
) -> _Forward:
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=int))
    num_classes = head.num_classes(sub)
    if x.shape[1] != head.weights.shape[1]:
        raise DimensionError(
            f"Embedding dim {x.shape[1]} does not match head dim "
            f"{head.weights.shape[1]}"
        )
    if np.any(targets < 0) or np.any(targets >= num_classes):
        raise DimensionError(f"Target class out of range [0, {num_classes})")
    if itk.k >= num_classes:
        raise DimensionError(f"Inter-topK k={itk.k} must be below {num_classes}")

    x_norm = np.linalg.norm(x, axis=1)
    if np.any(x_norm == 0):
        raise DomainError("Zero-norm embedding")
    w_norm = np.linalg.norm(head.weights, axis=1)
    if np.any(w_norm == 0):
        raise DomainError("Zero-norm class weight")
    x_unit = x / x_norm[:, None]
    w_unit = head.weights / w_norm[:, None]

    rows = len(x)
    row_cosines = x_unit @ w_unit.T
    per_class = row_cosines.reshape(rows, num_classes, sub.centers)
    best_center = np.argmax(per_class, axis=2)
    cosines = np.take_along_axis(per_class, best_center[..., None], axis=2)[..., 0]

    scale = cfg.effective_scale
    logits = scale * cosines
    dlogit_dcos = np.full_like(cosines, scale)
    index = np.arange(rows)
    psi, dpsi = _target_transform(cosines[index, targets], cfg)
    logits[index, targets] = scale * psi
    dlogit_dcos[index, targets] = scale * dpsi

    if itk.k and itk.margin:
        for i in range(rows):
            hard = _topk_classes(cosines[i], targets[i], itk.k)
            logits[i, hard] = scale * (cosines[i, hard] + itk.margin)

    return _Forward(
        x_unit=x_unit,
        x_norm=x_norm,
        w_unit=w_unit,
        w_norm=w_norm,
        row_cosines=row_cosines,
        best_center=best_center,
        cosines=cosines,
        logits=logits,
        dlogit_dcos=dlogit_dcos,
    )


def margin_logits(
    emb: np.ndarray,
    head: ClassifierHead,
    cfg: MarginConfig,
    sub: SubCenterConfig,
    target: int,
) -> np.ndarray:
    """
    Logits of one embedding with the margin applied to the target class
    :param emb: F-dimensional embedding, nonzero
    :param head: Classifier weights
    :param cfg: Margin variant, scale and margin
    :param sub: Number of sub-centers per class
    :param target: Target class index
    :return: C logits
    """
    return _forward(emb, [target], head, cfg, sub, InterTopKConfig()).logits[0]


def class_cosines(
    emb: np.ndarray, head: ClassifierHead, sub: SubCenterConfig
) -> np.ndarray:
    """
    Cosines between embeddings and classes (max over sub-centers)
    :return: N x C matrix, or a C-vector for a single embedding
    """
    emb = np.asarray(emb, dtype=np.float64)
    targets = np.zeros(len(np.atleast_2d(emb)), dtype=int)
    fwd = _forward(emb, targets, head, MarginConfig(), sub, InterTopKConfig())
    return fwd.cosines[0] if emb.ndim == 1 else fwd.cosines


def inter_topk_adjust(
    logits: np.ndarray,
    target: int,
    cfg: InterTopKConfig,
    scale: float,
    cosines: np.ndarray,
) -> np.ndarray:
    """
    Raise the logits of the k hardest non-target classes to s * (cos + m')
    :param logits: C logits from margin_logits
    :param target: Target class index, its logit is never changed
    :param cfg: k and extra margin m'
    :param scale: Scale the logits were computed with
    :param cosines: C class cosines behind the logits
    :return: Adjusted copy of the logits
    """
    adjusted = np.array(logits, dtype=np.float64)
    if cfg.k and cfg.margin:
        hard = _topk_classes(np.asarray(cosines), target, cfg.k)
        adjusted[hard] = scale * (np.asarray(cosines)[hard] + cfg.margin)
    return adjusted


def loss_and_grad(
    embeddings: np.ndarray,
    targets: np.ndarray,
    head: ClassifierHead,
    cfg: MarginConfig,
    sub: SubCenterConfig,
    itk: InterTopKConfig,
) -> LossResult:
    """
    Mean cross-entropy over margin-adjusted logits with exact gradients
    :param embeddings: N x F batch, N >= 1
    :param targets: N class indices
    :return: Loss, N x F gradient w.r.t. embeddings, gradient w.r.t. head weights
    """
    fwd = _forward(embeddings, targets, head, cfg, sub, itk)
    rows, num_classes = fwd.logits.shape
    targets = np.atleast_1d(np.asarray(targets, dtype=int))
    index = np.arange(rows)

    log_probs = log_softmax(fwd.logits, axis=1)
    loss = -float(np.mean(log_probs[index, targets]))

    dlogits = softmax(fwd.logits, axis=1)
    dlogits[index, targets] -= 1.0
    dlogits /= rows
    dcos = dlogits * fwd.dlogit_dcos

    # hard max over sub-centers: only the winning row receives gradient
    drow = np.zeros_like(fwd.row_cosines)
    rows_of_class = np.arange(num_classes) * sub.centers + fwd.best_center
    np.put_along_axis(drow, rows_of_class, dcos, axis=1)

    weighted = np.sum(drow * fwd.row_cosines, axis=1)
    grad_emb = drow @ fwd.w_unit - weighted[:, None] * fwd.x_unit
    grad_emb /= fwd.x_norm[:, None]

    weighted_w = np.sum(drow * fwd.row_cosines, axis=0)
    grad_head = drow.T @ fwd.x_unit - weighted_w[:, None] * fwd.w_unit
    grad_head /= fwd.w_norm[:, None]
    return LossResult(loss=loss, grad_emb=grad_emb, grad_head=grad_head)


# Toy training


class Pooling(str, Enum):
    tap = "tap"
    tsp = "tsp"


class ToyTrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(4, ge=2)
    dim: int = Field(8, ge=1)
    per_class: int = Field(50, ge=1)
    frames: int = Field(20, ge=1)
    separation: float = Field(10.0, gt=0)
    pooling: Pooling = Pooling.tap
    lr: float = Field(0.05, gt=0)
    steps: int = Field(500, ge=0)
    seed: int = 1


@dataclass
class ToyDataset:
    embeddings: np.ndarray
    labels: np.ndarray
    num_classes: int


@dataclass
class TrainResult:
    head: ClassifierHead
    losses: List[float] = field(default_factory=list)
    accuracy: float = 0.0


def make_toy_dataset(train: ToyTrainConfig) -> ToyDataset:
    """
    Gaussian clusters of frame sequences around random class centers at
    `separation` standard deviations from the origin, pooled into embeddings
    """
    rng = np.random.default_rng(train.seed)
    centers = rng.normal(size=(train.num_classes, train.dim))
    centers *= train.separation / np.linalg.norm(centers, axis=1, keepdims=True)

    embeddings, labels = [], []
    for label, center in enumerate(centers):
        for _ in range(train.per_class):
            frames = center + rng.normal(size=(train.frames, train.dim))
            pooled = tap(frames) if train.pooling == Pooling.tap else tsp(frames)
            embeddings.append(pooled)
            labels.append(label)
    return ToyDataset(
        embeddings=np.array(embeddings),
        labels=np.array(labels),
        num_classes=train.num_classes,
    )


def predict(
    head: ClassifierHead, embeddings: np.ndarray, sub: SubCenterConfig
) -> np.ndarray:
    return np.argmax(class_cosines(np.atleast_2d(embeddings), head, sub), axis=1)


def accuracy(head: ClassifierHead, data: ToyDataset, sub: SubCenterConfig) -> float:
    return float(np.mean(predict(head, data.embeddings, sub) == data.labels))


def toy_train(
    data: ToyDataset,
    cfg: MarginConfig,
    sub: SubCenterConfig,
    itk: InterTopKConfig,
    lr: float,
    steps: int,
    seed: int,
) -> TrainResult:
    """
    Full-batch gradient descent on the classifier head
    :param data: Labeled embeddings
    :param lr: Learning rate
    :param steps: Number of updates, 0 returns the initial head
    :param seed: Seed of the head initialization
    :return: Trained head, the loss before every update and the final accuracy
    """
    head = init_head(data.num_classes, data.embeddings.shape[1], sub, seed)
    result = TrainResult(head=head)
    for step in range(steps):
        out = loss_and_grad(data.embeddings, data.labels, head, cfg, sub, itk)
        if not np.isfinite(out.loss):
            raise TrainingError(f"Loss diverged at step {step}")
        result.losses.append(out.loss)
        head.weights = head.weights - lr * out.grad_head
        if step % 100 == 0:
            logger.debug("step %d loss %.6f", step, out.loss)

    result.accuracy = accuracy(head, data, sub)
    logger.info("Accuracy after %d steps: %.2f%%", steps, 100 * result.accuracy)
    return result
