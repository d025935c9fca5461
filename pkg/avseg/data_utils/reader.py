"""
预测清单与真值清单(YAML)的读取、校验和写出

预测清单：
    kind: prediction
    num_classes: 3
    entries:
      - class_scores: [0.7, 0.1, 0.1, 0.1]
        mask_path: q0.sasl

真值清单：
    kind: ground_truth
    num_classes: 3
    entries:
      - category: 0
        mask_path: g0.pgm

mask_path 为相对清单文件所在目录的路径。
"""
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import yaml

from avseg.exceptions import (CategoryError, MalformedDocumentError, MissingManifestError, MissingMaskFileError,
                              ShapeMismatchError, SimplexViolationError, ValidationError)
from avseg.mask.core import as_soft_mask
from avseg.matching.matcher import SIMPLEX_TOL, GroundTruthSegment, InstancePrediction, validate_class_scores
from avseg.utils.serialization import read_mask_file, read_pgm, write_pgm, write_sasl

PREDICTION_KIND = 'prediction'
GROUND_TRUTH_KIND = 'ground_truth'
_TOP_KEYS = {'kind', 'num_classes', 'entries'}
_ENTRY_KEYS = {PREDICTION_KIND: {'class_scores', 'mask_path'}, GROUND_TRUTH_KIND: {'category', 'mask_path'}}


@dataclass
class PredictionEntry:
    class_scores: List[float]
    mask_path: str


@dataclass
class GroundTruthEntry:
    category: int
    mask_path: str


@dataclass
class PredictionManifest:
    num_classes: int
    entries: List[PredictionEntry]
    base_dir: str = ''
    predictions: List[InstancePrediction] = field(default_factory=list, repr=False)


@dataclass
class GroundTruthManifest:
    num_classes: Optional[int]
    entries: List[GroundTruthEntry]
    base_dir: str = ''
    segments: List[GroundTruthSegment] = field(default_factory=list, repr=False)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _load_document(path):
    if not os.path.isfile(path):
        raise MissingManifestError(f'清单文件不存在：{path}')
    with open(path, 'r', encoding='utf-8') as f:
        try:
            doc = yaml.safe_load(f.read())
        except yaml.YAMLError as e:
            line = getattr(getattr(e, 'problem_mark', None), 'line', None)
            where = f'第 {line + 1} 行' if line is not None else ''
            raise MalformedDocumentError(f'{path} {where}无法解析：{e}')
    if not isinstance(doc, dict):
        raise MalformedDocumentError(f'{path} 的顶层必须是映射')
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise MalformedDocumentError(f'{path} 包含未知字段：{sorted(unknown)}')
    if doc.get('kind') not in _ENTRY_KEYS:
        raise MalformedDocumentError(f'{path} 的 kind 必须是 {sorted(_ENTRY_KEYS)} 之一')
    if not isinstance(doc.get('entries'), list):
        raise MalformedDocumentError(f'{path} 的 entries 必须是列表')
    return doc


def _check_entry(path, kind, index, entry):
    if not isinstance(entry, dict):
        raise MalformedDocumentError(f'{path} 的 entries[{index}] 必须是映射')
    keys = set(entry)
    if keys != _ENTRY_KEYS[kind]:
        raise MalformedDocumentError(f'{path} 的 entries[{index}] 字段应为 {sorted(_ENTRY_KEYS[kind])}，'
                                     f'实际为 {sorted(keys)}')
    if not isinstance(entry['mask_path'], str) or not entry['mask_path']:
        raise MalformedDocumentError(f'{path} 的 entries[{index}].mask_path 必须是非空字符串')


def _mask_file(base_dir, mask_path):
    full = mask_path if os.path.isabs(mask_path) else os.path.join(base_dir, mask_path)
    if not os.path.isfile(full):
        raise MissingMaskFileError(f'掩码文件不存在：{full}')
    return full


def _parse_prediction(path, doc, base_dir) -> PredictionManifest:
    k = doc.get('num_classes')
    if not _is_int(k) or k < 1:
        raise MalformedDocumentError(f'{path} 的 num_classes 必须是正整数')
    entries, preds = [], []
    for index, entry in enumerate(doc['entries']):
        _check_entry(path, PREDICTION_KIND, index, entry)
        scores = entry['class_scores']
        if not isinstance(scores, list) or not all(_is_number(v) for v in scores):
            raise MalformedDocumentError(f'{path} 的 entries[{index}].class_scores 必须是数值列表')
        if len(scores) != k + 1:
            raise MalformedDocumentError(f'{path} 的 entries[{index}].class_scores 长度为 {len(scores)}，'
                                         f'应为 K+1={k + 1}')
        try:
            scores = validate_class_scores(scores)
        except SimplexViolationError as e:
            raise SimplexViolationError(f'{path} 的 entries[{index}] 单纯形约束不满足：{e}')
        mask = read_mask_file(_mask_file(base_dir, entry['mask_path']))
        try:
            mask = as_soft_mask(mask)
        except ValidationError as e:
            raise ValidationError(f'{path} 的 entries[{index}] 掩码不合法：{e}')
        entries.append(PredictionEntry([float(v) for v in scores], entry['mask_path']))
        preds.append(InstancePrediction(scores, mask))
    _check_shapes(path, [p.mask for p in preds])
    return PredictionManifest(num_classes=k, entries=entries, base_dir=base_dir, predictions=preds)


def _parse_ground_truth(path, doc, base_dir) -> GroundTruthManifest:
    k = doc.get('num_classes')
    if k is not None and (not _is_int(k) or k < 1):
        raise MalformedDocumentError(f'{path} 的 num_classes 必须是正整数')
    entries, segments = [], []
    for index, entry in enumerate(doc['entries']):
        _check_entry(path, GROUND_TRUTH_KIND, index, entry)
        category = entry['category']
        if not _is_int(category) or category < 0 or (k is not None and category >= k):
            raise CategoryError(f'{path} 的 entries[{index}].category={category!r} 超出类别范围')
        mask = read_pgm(_mask_file(base_dir, entry['mask_path']))
        if not mask.any():
            raise CategoryError(f'{path} 的 entries[{index}] 真值掩码为空')
        entries.append(GroundTruthEntry(int(category), entry['mask_path']))
        segments.append(GroundTruthSegment(int(category), mask))
    _check_shapes(path, [s.mask for s in segments])
    return GroundTruthManifest(num_classes=k, entries=entries, base_dir=base_dir, segments=segments)


def _check_shapes(path, masks):
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise ShapeMismatchError(f'{path} 中的掩码尺寸不一致：{sorted(shapes)}')


def parse_manifest(path):
    """读取并校验清单文件

    :param path: 清单文件路径
    :return: PredictionManifest 或 GroundTruthManifest
    """
    doc = _load_document(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    if doc['kind'] == PREDICTION_KIND:
        return _parse_prediction(path, doc, base_dir)
    return _parse_ground_truth(path, doc, base_dir)


def serialize_manifest(manifest) -> str:
    """把清单转换为规范化的 YAML 文本"""
    if isinstance(manifest, PredictionManifest):
        doc = {'kind': PREDICTION_KIND, 'num_classes': int(manifest.num_classes),
               'entries': [{'class_scores': [float(v) for v in e.class_scores], 'mask_path': e.mask_path}
                           for e in manifest.entries]}
    elif isinstance(manifest, GroundTruthManifest):
        doc = {'kind': GROUND_TRUTH_KIND,
               'entries': [{'category': int(e.category), 'mask_path': e.mask_path} for e in manifest.entries]}
        if manifest.num_classes is not None:
            doc['num_classes'] = int(manifest.num_classes)
    else:
        raise ValidationError(f'不支持的清单类型：{type(manifest).__name__}')
    return yaml.safe_dump(doc, sort_keys=True, allow_unicode=True)


def write_manifest(path, manifest):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(serialize_manifest(manifest))


def export_predictions(directory, stem, preds: Sequence[InstancePrediction]) -> str:
    """把一帧的查询预测写成 SASL 掩码和预测清单，返回清单路径"""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, pred in enumerate(preds):
        name = f'{stem}_q{i}.sasl'
        write_sasl(os.path.join(directory, name), pred.mask)
        scores = np.asarray(pred.scores, dtype=np.float64)
        scores = scores / scores.sum()
        if abs(scores.sum() - 1.0) > SIMPLEX_TOL:
            raise SimplexViolationError(f'第 {i} 个查询的类别分数无法归一化')
        entries.append(PredictionEntry([float(v) for v in scores], name))
    path = os.path.join(directory, f'{stem}_pred.yml')
    write_manifest(path, PredictionManifest(num_classes=preds[0].num_classes, entries=entries))
    return path


def export_ground_truth(directory, stem, gts: Sequence[GroundTruthSegment], num_classes=None) -> str:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for j, gt in enumerate(gts):
        name = f'{stem}_gt{j}.pgm'
        write_pgm(os.path.join(directory, name), gt.mask)
        entries.append(GroundTruthEntry(gt.category, name))
    path = os.path.join(directory, f'{stem}_gt.yml')
    write_manifest(path, GroundTruthManifest(num_classes=num_classes, entries=entries))
    return path
