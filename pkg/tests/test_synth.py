import dataclasses

import numpy as np
import pytest

from avseg.data_utils.synth import (SceneSpec, TrainingView, category_basis, category_histogram, generate,
                                    training_view)
from avseg.exceptions import InfeasibleSceneError
from avseg.mask.core import MaskShape, union_all


def _spec(**kwargs):
    values = dict(seed=7, shape=MaskShape(16, 16), num_classes=6, embedding_dim=8)
    values.update(kwargs)
    return SceneSpec(**values)


def _assert_same(a, b):
    assert a.sounding_categories == b.sounding_categories
    np.testing.assert_array_equal(a.audio_embedding, b.audio_embedding)
    np.testing.assert_array_equal(a.frame, b.frame)
    np.testing.assert_array_equal(a.M_gt, b.M_gt)
    assert [g.category for g in a.all_instances] == [g.category for g in b.all_instances]


def test_single_instance_scenes():
    samples = generate(_spec(instance_count_range=(1, 1), sounding_count_range=(1, 1)), 20)
    assert all(len(s.gts) == 1 and len(s.all_instances) == 1 for s in samples)


def test_same_seed_is_bit_identical():
    spec = _spec(instance_count_range=(1, 3))
    for a, b in zip(generate(spec, 10), generate(spec, 10)):
        _assert_same(a, b)


def test_streams_differ():
    spec = _spec()
    a, b = generate(spec, 5, stream=0), generate(spec, 5, stream=1)
    assert any(not np.array_equal(x.audio_embedding, y.audio_embedding) for x, y in zip(a, b))


def test_category_histogram_reproducible():
    spec = _spec(seed=7, num_classes=6)
    first = category_histogram(generate(spec, 100), 6)
    second = category_histogram(generate(spec, 100), 6)
    np.testing.assert_array_equal(first, second)
    assert first.sum() == 100
    assert (first > 0).all()


@pytest.mark.parametrize('overlap', [False, True])
def test_sample_invariants(overlap):
    spec = _spec(instance_count_range=(2, 4), sounding_count_range=(1, 2), overlap_allowed=overlap)
    for s in generate(spec, 30):
        np.testing.assert_array_equal(s.M_gt, union_all([g.mask for g in s.gts]))
        assert s.sounding_categories == tuple(g.category for g in s.gts)
        categories = [g.category for g in s.all_instances]
        assert len(set(categories)) == len(categories)
        assert set(s.sounding_categories) <= set(categories)
        assert 2 <= len(categories) <= 4
        assert all(g.mask.any() for g in s.all_instances)
        stacked = np.stack([g.mask for g in s.all_instances]).sum(axis=0)
        assert stacked.max() <= 1
        assert s.frame.shape == (7, 16, 16)


def test_embedding_is_sum_of_basis_without_noise():
    spec = _spec(embedding_noise=0.0, sounding_count_range=(1, 2), instance_count_range=(2, 3))
    basis = category_basis(spec)
    np.testing.assert_allclose(basis @ basis.T, np.eye(6), atol=1e-12)
    for s in generate(spec, 10):
        np.testing.assert_allclose(s.audio_embedding, basis[list(s.sounding_categories)].sum(axis=0))


def test_silent_categories_reuse_sounding_ones():
    spec = _spec(instance_count_range=(2, 2), sounding_count_range=(1, 1), silent_reuse_prob=1.0)
    samples = generate(spec, 20)
    assert any(s.silent_reused for s in samples)
    seen = set()
    for s in samples:
        if s.silent_reused:
            assert set(s.silent_categories) & seen
        seen.update(s.sounding_categories)


def test_infeasible_specs():
    with pytest.raises(InfeasibleSceneError):
        generate(_spec(num_classes=2, instance_count_range=(3, 3)), 1)
    with pytest.raises(InfeasibleSceneError, match='最多 4 个实例'):
        _spec(num_classes=3, instance_count_range=(1, 4)).check()
    with pytest.raises(InfeasibleSceneError):
        generate(_spec(instance_count_range=(1, 1), sounding_count_range=(2, 2)), 1)
    with pytest.raises(InfeasibleSceneError):
        generate(_spec(), 0)
    with pytest.raises(InfeasibleSceneError):
        generate(_spec(embedding_dim=3), 1)
    with pytest.raises(InfeasibleSceneError):
        generate(_spec(shape_palette=('triangle',)), 1)


def test_training_view_hides_all_instances():
    names = {f.name for f in dataclasses.fields(TrainingView)}
    assert 'all_instances' not in names
    sample = generate(_spec(), 1)[0]
    view = training_view(sample)
    assert not hasattr(view, 'all_instances')
    assert view.gts is sample.gts
