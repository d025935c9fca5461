import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avseg.avsc import (AudioHead, PotentialInstance, audio_forward, category_filter, category_masks,
                        compose_backward, compose_batch, compose_batch_backward, compose_localization,
                        highest_confidence_instance, infer,
                        instance_sounding_masks, potential_instances, score_filter, validate_audio_distribution)
from avseg.exceptions import CategoryError, ShapeMismatchError, SimplexViolationError, ThresholdError, ValidationError
from avseg.mask.core import MaskShape
from avseg.matching.matcher import InstancePrediction
from tests.conftest import left_half, one_hot_scores, top_half


def _pred(k, category, confidence, mask):
    return InstancePrediction(one_hot_scores(k, category, confidence), np.asarray(mask, dtype=np.float64))


def _bias_head(biases, mode='independent', input_dim=3):
    """权重全为 0 的单层音频头，输出只由偏置决定"""
    head = AudioHead.zeros(input_dim, (), len(biases), mode)
    head.biases[-1] = np.asarray(biases, dtype=np.float64)
    return head


def test_zero_head_outputs():
    emb = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(audio_forward(AudioHead.zeros(3, (5,), 4, 'simplex'), emb), [0.25] * 4)
    np.testing.assert_allclose(audio_forward(AudioHead.zeros(3, (5,), 4, 'independent'), emb), [0.5] * 4)


def test_head_matches_layer_oracle(rng):
    head = AudioHead.create(4, (6, 5), 3, 'simplex', rng)
    emb = rng.normal(size=4)
    x = emb
    for w, b in zip(head.weights[:-1], head.biases[:-1]):
        x = np.tanh(w @ x + b)
    logits = head.weights[-1] @ x + head.biases[-1]
    expected = np.exp(logits - logits.max())
    np.testing.assert_allclose(audio_forward(head, emb), expected / expected.sum(), rtol=1e-12)

    head.mode = 'independent'
    np.testing.assert_allclose(audio_forward(head, emb), 1.0 / (1.0 + np.exp(-logits)), rtol=1e-12)


def test_head_validation(rng):
    with pytest.raises(ShapeMismatchError):
        audio_forward(AudioHead.create(4, (3,), 2, rng=rng), np.zeros(5))
    with pytest.raises(ShapeMismatchError):
        AudioHead([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)])
    with pytest.raises(ValidationError):
        AudioHead.zeros(3, (), 2, mode='softmax')
    with pytest.raises(ValidationError):
        audio_forward(AudioHead.zeros(2, (), 2), np.array([np.nan, 0.0]))


def test_head_parameters_round_trip(rng):
    head = AudioHead.create(4, (3,), 2, rng=rng)
    flat = head.get_parameters()
    probe = head.copy()
    probe.set_parameters(flat * 2.0)
    np.testing.assert_allclose(probe.get_parameters(), flat * 2.0)
    np.testing.assert_allclose(head.get_parameters(), flat)
    with pytest.raises(ShapeMismatchError):
        probe.set_parameters(flat[:-1])


def test_probability_gradients_shape(rng):
    head = AudioHead.create(4, (3,), 2, rng=rng)
    grads = head.probability_gradients(rng.normal(size=4))
    assert len(grads) == 2
    assert head.flatten_grads(grads[0]).shape == head.get_parameters().shape


@settings(max_examples=50)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_simplex_output_sums_to_one(emb):
    head = AudioHead.create(3, (4,), 5, 'simplex', np.random.default_rng(1))
    probs = audio_forward(head, np.array(emb))
    assert abs(probs.sum() - 1.0) <= 1e-6
    validate_audio_distribution(probs, 'simplex')


def test_validate_audio_distribution():
    validate_audio_distribution([0.9, 0.9], 'independent')
    with pytest.raises(SimplexViolationError):
        validate_audio_distribution([0.9, 0.9], 'simplex')
    with pytest.raises(SimplexViolationError):
        validate_audio_distribution([1.2, 0.1])


def test_category_filter():
    mask = np.zeros((2, 2))
    no_obj = [_pred(2, 2, 0.9, mask) for _ in range(3)]
    assert category_filter(no_obj) == []
    objects = [_pred(2, 0, 0.9, mask), _pred(2, 1, 0.8, mask)]
    assert [id(p) for p in category_filter(objects)] == [id(p) for p in objects]
    mixed = [objects[0], no_obj[0], objects[1], no_obj[1], _pred(2, 0, 0.7, mask)]
    assert [id(p) for p in category_filter(mixed)] == [id(mixed[i]) for i in (0, 2, 4)]


def test_score_filter_keeps_best_per_category():
    a, b = left_half(), top_half()
    kept = score_filter([_pred(3, 1, 0.6, b), _pred(3, 1, 0.9, a)])
    assert len(kept) == 1
    assert kept[0].confidence == pytest.approx(0.9)
    assert kept[0].source_index == 1
    np.testing.assert_array_equal(kept[0].mask, a)
    distinct = score_filter([_pred(3, 2, 0.9, a), _pred(3, 0, 0.8, b)])
    assert [inst.category for inst in distinct] == [0, 2]
    np.testing.assert_array_equal(distinct[0].one_hot, [1, 0, 0])


def test_score_filter_ties_keep_lower_index():
    kept = score_filter([_pred(2, 0, 0.7, left_half()), _pred(2, 0, 0.7, top_half())])
    assert kept[0].source_index == 0


def test_score_filter_group_max(rng):
    preds = []
    for i in range(6):
        preds.append(_pred(3, i % 3, float(rng.uniform(0.4, 0.99)), rng.random((4, 4))))
    kept = score_filter(preds, 0.5)
    for inst in kept:
        group = [i for i in range(6) if i % 3 == inst.category]
        best = max(group, key=lambda i: preds[i].scores[inst.category])
        assert inst.source_index == best
        np.testing.assert_array_equal(inst.mask, (preds[best].mask >= 0.5).astype(np.uint8))
    assert len(kept) == 3


def test_score_filter_threshold_range():
    with pytest.raises(ThresholdError):
        score_filter([], 1.0)


def test_potential_instances_keep_query_indices():
    mask = left_half()
    preds = [_pred(2, 2, 0.9, mask), _pred(2, 1, 0.8, mask), _pred(2, 2, 0.9, mask), _pred(2, 0, 0.6, mask)]
    instances = potential_instances(preds)
    assert [(inst.category, inst.source_index) for inst in instances] == [(0, 3), (1, 1)]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_score_filter_output_properties(seed):
    rng = np.random.default_rng(seed)
    k = 4
    preds = []
    for _ in range(8):
        s = rng.random(k + 1) + 0.01
        preds.append(InstancePrediction(s / s.sum(), rng.random((3, 3))))
    kept = potential_instances(preds)
    categories = [inst.category for inst in kept]
    assert len(kept) <= k
    assert len(set(categories)) == len(categories)
    assert all(c < k for c in categories)
    assert all(inst.one_hot.sum() == 1 for inst in kept)


def _instance(category, mask, k=3):
    return PotentialInstance(category=category, mask=np.asarray(mask, dtype=np.uint8), confidence=1.0, num_classes=k)


def test_compose_examples():
    a = left_half()
    np.testing.assert_allclose(compose_localization([_instance(0, a)], [0.7, 0.1, 0.2]), 0.7 * a)
    np.testing.assert_array_equal(compose_localization([], [0.5] * 3, shape=MaskShape(4, 4)), np.zeros((4, 4)))
    b = 1 - a
    b[2:, :] = 0
    S = compose_localization([_instance(0, a), _instance(2, b)], [0.9, 0.0, 0.1])
    np.testing.assert_allclose(S, 0.9 * a + 0.1 * b)


def test_compose_errors():
    with pytest.raises(ValidationError):
        compose_localization([], [0.5, 0.5])
    with pytest.raises(CategoryError):
        compose_localization([_instance(1, left_half()), _instance(1, top_half())], [0.5] * 3)
    with pytest.raises(ShapeMismatchError):
        compose_localization([_instance(0, left_half()), _instance(1, np.ones((2, 2)))], [0.5] * 3)


def test_compose_clamps_overlap():
    S = compose_localization([_instance(0, left_half()), _instance(1, top_half())], [0.8, 0.8, 0.0])
    assert S.max() == 1.0
    assert S[0, 0] == 1.0


def test_compose_linear_and_monotone(rng):
    instances = [_instance(c, (rng.random((5, 5)) < 0.5)) for c in range(3)]
    p = rng.uniform(0.0, 0.15, size=3)
    np.testing.assert_allclose(compose_localization(instances, 2 * p), 2 * compose_localization(instances, p))
    for k in range(3):
        raised = p.copy()
        raised[k] += 0.3
        assert (compose_localization(instances, raised) >= compose_localization(instances, p)).all()


def test_compose_backward_matches_batch(rng):
    instances = [_instance(c, (rng.random((4, 4)) < 0.5)) for c in (0, 2)]
    audio = np.array([0.4, 0.2, 0.3])
    grad_S = rng.normal(size=(4, 4))
    expected = compose_backward(instances, audio, grad_S)
    masks = category_masks(instances, 3, MaskShape(4, 4))[None]
    S, active = compose_batch(masks, audio[None])
    np.testing.assert_allclose(S[0].reshape(4, 4), compose_localization(instances, audio))
    np.testing.assert_allclose(compose_batch_backward(masks, active, grad_S.reshape(1, -1))[0], expected)


def test_infer_silent_audio():
    preds = [_pred(2, 0, 0.9, left_half()), _pred(2, 1, 0.9, 1 - left_half())]
    S, mask = infer(preds, _bias_head([-50.0, -50.0]), np.zeros(3))
    assert S.max() < 1e-10
    assert not mask.any()


def test_infer_single_instance_full_probability():
    preds = [_pred(2, 1, 0.9, top_half()), _pred(2, 2, 0.9, left_half())]
    _, mask = infer(preds, _bias_head([0.0, 50.0]), np.zeros(3))
    np.testing.assert_array_equal(mask, top_half())


def test_infer_two_instances_suppresses_silent():
    a = left_half()
    preds = [_pred(2, 0, 0.9, a), _pred(2, 1, 0.9, 1 - a)]
    probs = np.array([0.95, 0.02])
    head = _bias_head(np.log(probs / (1 - probs)))
    S, mask = infer(preds, head, np.zeros(3), decision_threshold=0.5)
    np.testing.assert_allclose(S, 0.95 * a + 0.02 * (1 - a))
    np.testing.assert_array_equal(mask, a)


def test_infer_errors():
    preds = [_pred(2, 0, 0.9, left_half())]
    with pytest.raises(ThresholdError):
        infer(preds, _bias_head([0.0, 0.0]), np.zeros(3), decision_threshold=1.0)
    with pytest.raises(ShapeMismatchError):
        infer(preds, _bias_head([0.0, 0.0, 0.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        infer([], _bias_head([0.0, 0.0]), np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 0.49), min_size=3, max_size=3), st.integers(0, 2 ** 16))
def test_low_audio_with_disjoint_masks_is_silent(probs, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=(5, 5))
    preds = [_pred(3, c, 0.9, (labels == c)) for c in range(3)]
    probs = np.clip(np.array(probs), 1e-6, 0.49)
    head = _bias_head(np.log(probs / (1 - probs)))
    _, mask = infer(preds, head, np.zeros(3))
    assert not mask.any()


def test_highest_confidence_instance():
    a, b = left_half(), top_half()
    preds = [_pred(2, 0, 0.6, a), _pred(2, 1, 0.8, b)]
    np.testing.assert_array_equal(highest_confidence_instance(preds), b)
    empty = highest_confidence_instance([_pred(2, 2, 0.9, a)])
    assert empty.shape == (4, 4) and not empty.any()


def test_instance_sounding_masks():
    instances = [_instance(0, left_half()), _instance(1, top_half())]
    kept = instance_sounding_masks(instances, [0.9, 0.2, 0.0])
    assert [inst.category for inst in kept] == [0]
