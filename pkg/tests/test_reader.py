import os

import numpy as np
import pytest

from avseg.data_utils.reader import (GroundTruthManifest, PredictionManifest, export_ground_truth,
                                     export_predictions, parse_manifest, serialize_manifest)
from avseg.exceptions import (CategoryError, MalformedDocumentError, MissingManifestError, MissingMaskFileError,
                              ShapeMismatchError, SimplexViolationError, ValidationError)
from avseg.matching.matcher import GroundTruthSegment
from avseg.utils.serialization import write_pgm, write_sasl
from tests.conftest import left_half, random_gt, random_prediction, top_half


def _write(path, text):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return str(path)


def test_prediction_round_trip(tmp_path, rng):
    preds = [random_prediction(rng, 3, shape=(5, 7)) for _ in range(4)]
    path = export_predictions(str(tmp_path), '0000', preds)
    manifest = parse_manifest(path)
    assert isinstance(manifest, PredictionManifest)
    assert manifest.num_classes == 3
    with open(path, encoding='utf-8') as f:
        assert serialize_manifest(manifest) == f.read()
    for parsed, original in zip(manifest.predictions, preds):
        np.testing.assert_allclose(parsed.scores, original.scores, rtol=1e-12)
        np.testing.assert_allclose(parsed.mask, original.mask.astype(np.float32))


def test_ground_truth_round_trip(tmp_path):
    gts = [GroundTruthSegment(0, left_half()), GroundTruthSegment(2, top_half())]
    path = export_ground_truth(str(tmp_path), 'f', gts, num_classes=3)
    manifest = parse_manifest(path)
    assert isinstance(manifest, GroundTruthManifest)
    assert [s.category for s in manifest.segments] == [0, 2]
    np.testing.assert_array_equal(manifest.segments[1].mask, top_half())
    with open(path, encoding='utf-8') as f:
        assert serialize_manifest(manifest) == f.read()


def test_manifest_round_trip_random_frames(tmp_path):
    rng = np.random.default_rng(99)
    for case in range(50):
        k = int(rng.integers(1, 6))
        shape = tuple(int(v) for v in rng.integers(2, 10, size=2))
        preds = [random_prediction(rng, k, shape=shape) for _ in range(int(rng.integers(1, 7)))]
        gts = [random_gt(rng, int(c), shape=shape) for c in rng.choice(k, size=int(rng.integers(1, k + 1)),
                                                                       replace=False)]
        stem = f'{case:04d}'
        pred_path = export_predictions(str(tmp_path), stem, preds)
        gt_path = export_ground_truth(str(tmp_path), stem, gts, num_classes=k)
        pred_manifest, gt_manifest = parse_manifest(pred_path), parse_manifest(gt_path)
        for path, manifest in ((pred_path, pred_manifest), (gt_path, gt_manifest)):
            with open(path, encoding='utf-8') as f:
                assert serialize_manifest(manifest) == f.read()
        for parsed, original in zip(pred_manifest.predictions, preds):
            np.testing.assert_allclose(parsed.scores, original.scores / original.scores.sum(), rtol=1e-12)
            np.testing.assert_array_equal(parsed.mask, original.mask.astype(np.float32))
        for parsed, original in zip(gt_manifest.segments, gts):
            assert parsed.category == original.category
            np.testing.assert_array_equal(parsed.mask, original.mask)


def test_simplex_violation_names_entry(tmp_path):
    write_sasl(str(tmp_path / 'q.sasl'), np.full((2, 2), 0.5))
    path = _write(tmp_path / 'p.yml', 'kind: prediction\nnum_classes: 2\nentries:\n'
                                      '  - {class_scores: [0.5, 0.25, 0.25], mask_path: q.sasl}\n'
                                      '  - {class_scores: [0.4, 0.2, 0.2], mask_path: q.sasl}\n')
    with pytest.raises(SimplexViolationError, match=r'entries\[1\]'):
        parse_manifest(path)


@pytest.mark.parametrize('bad', [np.nan, np.inf, -0.25, 1.5])
def test_invalid_soft_mask_names_entry(tmp_path, bad):
    mask = np.full((3, 3), 0.5)
    mask[1, 2] = bad
    write_sasl(str(tmp_path / 'good.sasl'), np.full((3, 3), 0.5))
    write_sasl(str(tmp_path / 'bad.sasl'), mask)
    path = _write(tmp_path / 'p.yml', 'kind: prediction\nnum_classes: 1\nentries:\n'
                                      '  - {class_scores: [0.5, 0.5], mask_path: good.sasl}\n'
                                      '  - {class_scores: [0.5, 0.5], mask_path: bad.sasl}\n')
    with pytest.raises(ValidationError, match=r'entries\[1\]'):
        parse_manifest(path)


def test_missing_mask_file_names_path(tmp_path):
    path = _write(tmp_path / 'g.yml', 'kind: ground_truth\nentries:\n  - {category: 0, mask_path: nowhere.pgm}\n')
    with pytest.raises(MissingMaskFileError, match='nowhere.pgm'):
        parse_manifest(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingManifestError):
        parse_manifest(str(tmp_path / 'absent.yml'))


@pytest.mark.parametrize('text', [
    'kind: prediction\nnum_classes: 2\nentries: [\n',
    '- 1\n- 2\n',
    'kind: prediction\nnum_classes: 2\nentries: []\nextra: 1\n',
    'kind: other\nentries: []\n',
    'kind: prediction\nnum_classes: 2\nentries: [{class_scores: [1.0, 0.0, 0.0]}]\n',
    'kind: prediction\nnum_classes: 2\nentries: [{class_scores: [1.0, 0.0], mask_path: q.sasl}]\n',
    'kind: prediction\nnum_classes: 0\nentries: []\n',
])
def test_malformed_documents(tmp_path, text):
    write_sasl(str(tmp_path / 'q.sasl'), np.full((2, 2), 0.5))
    with pytest.raises(MalformedDocumentError):
        parse_manifest(_write(tmp_path / 'm.yml', text))


def test_yaml_error_reports_line(tmp_path):
    path = _write(tmp_path / 'm.yml', 'kind: prediction\nnum_classes: 2\nentries: [\n')
    with pytest.raises(MalformedDocumentError, match='行'):
        parse_manifest(path)


def test_ground_truth_violations(tmp_path):
    write_pgm(str(tmp_path / 'a.pgm'), left_half())
    write_pgm(str(tmp_path / 'empty.pgm'), np.zeros((4, 4), dtype=np.uint8))
    write_pgm(str(tmp_path / 'small.pgm'), np.ones((2, 2), dtype=np.uint8))
    cases = [
        ('entries: [{category: 3, mask_path: a.pgm}]\nnum_classes: 3\n', CategoryError),
        ('entries: [{category: 0, mask_path: empty.pgm}]\n', CategoryError),
        ('entries: [{category: 0, mask_path: a.pgm}, {category: 1, mask_path: small.pgm}]\n', ShapeMismatchError),
    ]
    for i, (body, error) in enumerate(cases):
        path = _write(tmp_path / f'g{i}.yml', 'kind: ground_truth\n' + body)
        with pytest.raises(error):
            parse_manifest(path)


def test_mask_paths_resolve_against_manifest_dir(tmp_path):
    sub = tmp_path / 'nested'
    os.makedirs(sub)
    write_pgm(str(sub / 'a.pgm'), left_half())
    path = _write(sub / 'g.yml', 'kind: ground_truth\nentries: [{category: 1, mask_path: a.pgm}]\n')
    manifest = parse_manifest(path)
    assert manifest.num_classes is None
    np.testing.assert_array_equal(manifest.segments[0].mask, left_half())
