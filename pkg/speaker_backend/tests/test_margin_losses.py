import math

import numpy as np
import pydantic
import pytest
from scipy.special import log_softmax

from speaker_backend.errors import DimensionError, DomainError
from speaker_backend.margin_losses import (
    ClassifierHead,
    InterTopKConfig,
    MarginConfig,
    MarginVariant,
    SubCenterConfig,
    ToyTrainConfig,
    accuracy,
    class_cosines,
    init_head,
    inter_topk_adjust,
    loss_and_grad,
    make_toy_dataset,
    margin_logits,
    predict,
    toy_train,
)

ONE_CENTER = SubCenterConfig()
NO_TOPK = InterTopKConfig()

MARGINS = {
    MarginVariant.softmax: lambda rng: 0.0,
    MarginVariant.a_softmax: lambda rng: float(rng.choice([0, 2, 3, 4])),
    MarginVariant.am_softmax: lambda rng: float(rng.uniform(0, 0.4)),
    MarginVariant.aam_softmax: lambda rng: float(rng.uniform(0, 0.5)),
}


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def _numeric_grad(func, value: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        plus, minus = value.copy(), value.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (func(plus) - func(minus)) / (2 * h)
    return grad


def test_margin_free_logits_are_cosines(rng):
    head = init_head(5, 6, ONE_CENTER, seed=3)
    emb = rng.normal(size=6)
    cosines = class_cosines(emb, head, ONE_CENTER)
    for variant in MarginVariant:
        cfg = MarginConfig(variant=variant, scale=1.0, margin=0.0)
        assert np.allclose(margin_logits(emb, head, cfg, ONE_CENTER, 2), cosines)


def test_single_center_matches_plain_head(rng):
    head = init_head(4, 6, SubCenterConfig(centers=1), seed=1)
    emb = rng.normal(size=6)
    w = head.weights / np.linalg.norm(head.weights, axis=1, keepdims=True)
    expected = w @ (emb / np.linalg.norm(emb))
    assert np.allclose(class_cosines(emb, head, ONE_CENTER), expected)


def test_sub_centers_take_the_max(rng):
    sub = SubCenterConfig(centers=3)
    head = init_head(2, 4, sub, seed=2)
    emb = rng.normal(size=4)
    w = head.weights / np.linalg.norm(head.weights, axis=1, keepdims=True)
    per_row = w @ (emb / np.linalg.norm(emb))
    assert np.allclose(class_cosines(emb, head, sub), per_row.reshape(2, 3).max(axis=1))


def test_aam_target_logit():
    head = ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))
    cfg = MarginConfig(variant=MarginVariant.aam_softmax, scale=32, margin=0.2)
    logits = margin_logits(np.array([2.0, 0.0]), head, cfg, ONE_CENTER, 0)
    assert logits[0] == pytest.approx(32 * math.cos(0.2))
    assert logits[0] == pytest.approx(31.362, abs=1e-3)
    assert logits[1] == pytest.approx(0.0)


def test_aam_margin_reduces_target_logit(rng):
    cfg = MarginConfig(variant=MarginVariant.aam_softmax, scale=10, margin=0.3)
    head = ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))
    for theta in rng.uniform(0.01, math.pi / 2 - 0.3, size=20):
        emb = np.array([math.cos(theta), math.sin(theta)])
        logits = margin_logits(emb, head, cfg, ONE_CENTER, 0)
        assert logits[0] < 10 * math.cos(theta)


def test_a_softmax_extension_is_monotone():
    cfg = MarginConfig(variant=MarginVariant.a_softmax, scale=1, margin=4)
    head = ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))
    thetas = np.linspace(0, math.pi, 200)
    embs = [np.array([math.cos(t), math.sin(t)]) for t in thetas]
    targets = [margin_logits(e, head, cfg, ONE_CENTER, 0)[0] for e in embs]
    assert np.all(np.diff(targets) <= 1e-12)
    assert targets[0] == pytest.approx(1.0)


def test_margin_config_validation():
    with pytest.raises(pydantic.ValidationError):
        MarginConfig(scale=0)
    with pytest.raises(pydantic.ValidationError):
        MarginConfig(variant=MarginVariant.aam_softmax, margin=2.0)
    with pytest.raises(pydantic.ValidationError):
        MarginConfig(variant=MarginVariant.a_softmax, margin=0.5)
    with pytest.raises(pydantic.ValidationError):
        SubCenterConfig(centers=0)


def test_inter_topk_adjust():
    cosines = np.array([0.9, 0.5, 0.1])
    itk = InterTopKConfig(k=1, margin=0.1)
    adjusted = inter_topk_adjust(cosines, 0, itk, 1.0, cosines)
    assert np.allclose(adjusted, [0.9, 0.6, 0.1])
    assert np.array_equal(
        inter_topk_adjust(cosines, 0, InterTopKConfig(k=0, margin=0.1), 1.0, cosines),
        cosines,
    )
    assert np.array_equal(
        inter_topk_adjust(cosines, 0, InterTopKConfig(k=2, margin=0.0), 1.0, cosines),
        cosines,
    )
    everyone = inter_topk_adjust(
        cosines, 1, InterTopKConfig(k=2, margin=0.2), 2.0, cosines
    )
    assert np.allclose(everyone, [2.2, 0.5, 0.6])


def test_two_class_softmax_loss():
    head = ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))
    cfg = MarginConfig(variant=MarginVariant.softmax, scale=30, margin=0.3)
    out = loss_and_grad(
        np.array([[3.0, 0.0]]), [0], head, cfg, ONE_CENTER, NO_TOPK
    )
    assert out.loss == pytest.approx(-math.log(math.e / (math.e + 1)))
    assert out.loss == pytest.approx(0.3133, abs=1e-4)


def test_zero_margin_is_plain_cross_entropy(rng):
    for variant in MarginVariant:
        sub = SubCenterConfig(centers=int(rng.choice([1, 3])))
        head = init_head(5, 8, sub, seed=int(rng.integers(100)))
        emb = rng.normal(size=(6, 8))
        targets = rng.integers(0, 5, size=6)
        cfg = MarginConfig(variant=variant, scale=16.0, margin=0.0)
        out = loss_and_grad(emb, targets, head, cfg, sub, InterTopKConfig())

        logits = cfg.effective_scale * class_cosines(emb, head, sub)
        expected = -np.mean(log_softmax(logits, axis=1)[np.arange(6), targets])
        assert out.loss == pytest.approx(expected, abs=1e-9)


def test_identical_batch_equals_single_sample(rng):
    head = init_head(3, 4, ONE_CENTER, seed=5)
    emb = rng.normal(size=4)
    cfg = MarginConfig()
    single = loss_and_grad(emb[None], [1], head, cfg, ONE_CENTER, NO_TOPK)
    batch = loss_and_grad(
        np.tile(emb, (5, 1)), [1] * 5, head, cfg, ONE_CENTER, NO_TOPK
    )
    assert batch.loss == pytest.approx(single.loss, abs=1e-12)


def test_scale_invariance(rng):
    head = init_head(4, 5, ONE_CENTER, seed=9)
    emb = rng.normal(size=(3, 5))
    targets = [0, 1, 3]
    cfg = MarginConfig(variant=MarginVariant.am_softmax, scale=20, margin=0.25)
    base = loss_and_grad(emb, targets, head, cfg, ONE_CENTER, NO_TOPK)
    scaled = loss_and_grad(7.5 * emb, targets, head, cfg, ONE_CENTER, NO_TOPK)
    assert scaled.loss == pytest.approx(base.loss, abs=1e-12)


def test_gradients_match_finite_differences(rng):
    configs = [
        (variant, centers, k)
        for variant in MarginVariant
        for centers in (1, 3)
        for k in (0, 2)
    ]
    for trial in range(100):
        variant, centers, k = configs[trial % len(configs)]
        sub = SubCenterConfig(centers=centers)
        cfg = MarginConfig(
            variant=variant,
            scale=float(rng.uniform(1, 16)),
            margin=MARGINS[variant](rng),
        )
        itk = InterTopKConfig(k=k, margin=float(rng.uniform(0, 0.2)) if k else 0.0)
        head = init_head(5, 6, sub, seed=trial)
        emb = rng.normal(size=(3, 6))
        targets = rng.integers(0, 5, size=3)

        out = loss_and_grad(emb, targets, head, cfg, sub, itk)

        def loss_of_emb(value):
            return loss_and_grad(value, targets, head, cfg, sub, itk).loss

        def loss_of_head(value):
            return loss_and_grad(
                emb, targets, ClassifierHead(weights=value), cfg, sub, itk
            ).loss

        assert _relative_error(out.grad_emb, _numeric_grad(loss_of_emb, emb)) < 1e-4
        numeric_head = _numeric_grad(loss_of_head, head.weights)
        assert _relative_error(out.grad_head, numeric_head) < 1e-4


def test_invalid_inputs():
    head = init_head(3, 4, ONE_CENTER, seed=1)
    cfg = MarginConfig()
    with pytest.raises(DomainError):
        margin_logits(np.zeros(4), head, cfg, ONE_CENTER, 0)
    with pytest.raises(DimensionError):
        margin_logits(np.ones(4), head, cfg, ONE_CENTER, 3)
    with pytest.raises(DimensionError):
        margin_logits(np.ones(5), head, cfg, ONE_CENTER, 0)
    with pytest.raises(DimensionError):
        loss_and_grad(np.ones((1, 4)), [0], head, cfg, ONE_CENTER, InterTopKConfig(k=3))
    with pytest.raises(DimensionError):
        head.num_classes(SubCenterConfig(centers=2))


def test_toy_training_separates_clusters():
    train = ToyTrainConfig(num_classes=4, dim=8, steps=500)
    data = make_toy_dataset(train)
    cfg = MarginConfig(variant=MarginVariant.aam_softmax, scale=30, margin=0.2)
    result = toy_train(
        data, cfg, ONE_CENTER, NO_TOPK, train.lr, train.steps, train.seed
    )
    assert len(result.losses) == 500
    assert result.losses[-1] < result.losses[0]
    assert result.accuracy == 1.0
    assert accuracy(result.head, data, ONE_CENTER) == 1.0
    first = predict(result.head, data.embeddings[0], ONE_CENTER)
    assert first.tolist() == [data.labels[0]]


def test_toy_training_is_deterministic():
    data = make_toy_dataset(ToyTrainConfig(steps=50, pooling="tsp"))
    assert data.embeddings.shape == (200, 16)
    sub = SubCenterConfig(centers=2)
    args = (data, MarginConfig(), sub, InterTopKConfig(k=1, margin=0.1))
    first = toy_train(*args, lr=0.05, steps=50, seed=4)
    second = toy_train(*args, lr=0.05, steps=50, seed=4)
    assert first.losses == second.losses
    assert np.array_equal(first.head.weights, second.head.weights)


def test_zero_steps_keeps_the_initial_head():
    data = make_toy_dataset(ToyTrainConfig())
    result = toy_train(
        data, MarginConfig(), ONE_CENTER, NO_TOPK, lr=0.05, steps=0, seed=1
    )
    assert result.losses == []
    initial = init_head(4, 8, ONE_CENTER, 1)
    assert np.array_equal(result.head.weights, initial.weights)
