import copy
import os

import numpy as np
import pytest
import yaml

from avseg import trainer as trainer_module
from avseg.data_utils.reader import parse_manifest
from avseg.exceptions import TrainingDivergenceError, ValidationError
from avseg.loss.base import LossValue, LossWeights
from avseg.trainer import ToyTrainer, evaluate_model, save_trace, train_stage1, train_stage2
from avseg.utils.checkpoint import checkpoint_bytes
from tests.conftest import SMALL_CONFIGS

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'configs')


@pytest.fixture
def toy():
    return ToyTrainer(copy.deepcopy(SMALL_CONFIGS))


@pytest.fixture
def views(toy):
    return [trainer_module.training_view(s) for s in toy.setup_data()[0]]


def test_zero_steps_leave_model_unchanged(toy, views):
    model = toy.init_model()
    after1, trace1 = train_stage1(model, views, LossWeights(), 0.5, 0)
    after2, trace2 = train_stage2(model, views, LossWeights(), 0.5, 0)
    assert trace1 == [] and trace2 == []
    np.testing.assert_array_equal(after1.decoder_parameters(), model.decoder_parameters())
    np.testing.assert_array_equal(after2.head.get_parameters(), model.head.get_parameters())


def test_stage1_updates_decoder_only(toy, views):
    model = toy.init_model()
    trained, trace = train_stage1(model, views, LossWeights(), 0.5, 3)
    assert [t['step'] for t in trace] == [0, 1, 2]
    assert set(trace[0]) == {'step', 'stage', 'mask_cls', 'soas', 'total'}
    assert all(np.isfinite(t['total']) for t in trace)
    assert not np.array_equal(trained.decoder_parameters(), model.decoder_parameters())
    np.testing.assert_array_equal(trained.head.get_parameters(), model.head.get_parameters())


def test_stage2_updates_head_only(toy, views):
    model = toy.init_model()
    # 所有查询都输出全图掩码并归为类别 0，保证存在潜在实例
    model.mask_bias[:] = 50.0
    model.cls_bias[0] = 50.0
    trained, trace = train_stage2(model, views, LossWeights(), 0.5, 3, batch_mode='per_sample')
    assert [t['stage'] for t in trace] == [2, 2, 2]
    assert not np.array_equal(trained.head.get_parameters(), model.head.get_parameters())
    np.testing.assert_array_equal(trained.decoder_parameters(), model.decoder_parameters())


def test_schedule_validation(toy, views):
    model = toy.init_model()
    with pytest.raises(ValidationError):
        train_stage1(model, views, LossWeights(), 0.0, 1)
    with pytest.raises(ValidationError):
        train_stage2(model, views, LossWeights(), 0.1, 1, batch_mode='mini_batch')
    with pytest.raises(ValidationError):
        train_stage1(model, [], LossWeights(), 0.1, 1)


def test_divergence_aborts(toy, views, monkeypatch):
    def broken(preds, gts, sigma, w):
        zeros = np.zeros((len(preds),) + preds[0].mask.shape)
        return LossValue(float('nan'), {'mask_logits': zeros, 'class_logits': np.zeros((len(preds), 4))},
                         terms={'mask_cls': float('nan'), 'soas': 0.0})

    monkeypatch.setattr(trainer_module, 'segmentation_loss', broken)
    with pytest.raises(TrainingDivergenceError):
        train_stage1(toy.init_model(), views, LossWeights(), 0.5, 2)


def test_training_is_deterministic(tmp_path):
    reports, blobs = [], []
    for run in range(2):
        toy = ToyTrainer(copy.deepcopy(SMALL_CONFIGS))
        reports.append(toy.train(trace_path=str(tmp_path / f'trace{run}.yml')))
        blobs.append(checkpoint_bytes(toy.model))
    assert reports[0] == reports[1]
    assert blobs[0] == blobs[1]
    assert (tmp_path / 'trace0.yml').read_bytes() == (tmp_path / 'trace1.yml').read_bytes()


def test_trace_document(tmp_path):
    path = str(tmp_path / 'out' / 'trace.yml')
    save_trace(path, [{'step': 0, 'stage': 1, 'total': np.float64(1.5)}])
    with open(path, encoding='utf-8') as f:
        assert yaml.safe_load(f) == [{'step': 0, 'stage': 1, 'total': 1.5}]


def test_evaluate_requires_model(toy):
    with pytest.raises(ValidationError):
        toy.evaluate()


def test_evaluate_model_baseline_and_counts(toy):
    toy.train()
    samples = toy.setup_data()[1]
    with_avsc = evaluate_model(toy.model, samples)
    without = evaluate_model(toy.model, samples, use_avsc=False)
    assert with_avsc.report.frame_count == len(samples)
    assert with_avsc.instance_count == without.instance_count
    assert 0.0 <= without.report.mean_jaccard <= 1.0


def test_robustness_reports(toy):
    toy.train()
    reports = toy.robustness()
    assert set(reports) == {'silent', 'unmatching', 'original'}
    assert reports['silent'].silent_count == reports['silent'].frame_count
    assert reports['unmatching'].recognition_accuracy is not None
    assert reports['original'].frame_count == 4


def test_export_artifacts(tmp_path, toy):
    toy.train()
    toy.export(str(tmp_path))
    assert sorted(os.listdir(tmp_path / 'pred_masks')) == [f'{i:04d}.pgm' for i in range(4)]
    manifest = parse_manifest(str(tmp_path / 'frames' / '0000_pred.yml'))
    assert len(manifest.predictions) == 4
    gt = parse_manifest(str(tmp_path / 'frames' / '0000_gt.yml'))
    assert gt.num_classes == 3
    assert (tmp_path / 'model.avsm').exists()
    assert (tmp_path / 'maps' / '0003.sasl').exists()


def test_ablate_validation(toy):
    with pytest.raises(ValidationError):
        toy.ablate([{'name': 'only'}])
    with pytest.raises(ValidationError):
        toy.ablate([{'name': 'a'}, {'name': 'a'}])
    with pytest.raises(ValidationError):
        toy.ablate([{'name': 'a'}, {'name': 'b', 'lambda_dice': 0.0}])


def test_ablate_identical_variants(toy):
    results = toy.ablate([{'name': 'a'}, {'name': 'b'}])
    assert results['a'] == results['b']
    assert set(results['a']) == {'mean_jaccard', 'mean_fscore', 'instance_count'}


@pytest.mark.slow
def test_single_source_acceptance():
    toy = ToyTrainer(os.path.join(CONFIG_DIR, 'single_source.yml'))
    report = toy.train()
    assert report.mean_jaccard >= 0.8
    assert report.mean_fscore >= 0.8
    totals = [t['total'] for t in toy.trace if t['stage'] == 1]
    windows = [np.mean(totals[i:i + 50]) for i in range(0, len(totals) - 49, 50)]
    assert all(b <= a for a, b in zip(windows, windows[1:]))
    reports = toy.robustness()
    assert reports['silent'].recognition_accuracy >= 0.9
    assert reports['unmatching'].recognition_accuracy >= 0.6


@pytest.mark.slow
def test_multi_source_ablation_trends():
    toy = ToyTrainer(os.path.join(CONFIG_DIR, 'multi_source.yml'))
    results = toy.ablate()
    assert results['full']['mean_jaccard'] > results['no_avsc']['mean_jaccard']
    assert results['full']['instance_count'] > results['no_soas']['instance_count']
    assert results['full']['mean_jaccard'] >= results['no_soas']['mean_jaccard']
