"""
类别过滤器与分数过滤器：从 N 个查询中得到潜在实例掩码集合 q_r
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from avseg.exceptions import ThresholdError
from avseg.mask.core import binarize
from avseg.matching.matcher import InstancePrediction


@dataclass
class PotentialInstance:
    category: int
    mask: np.ndarray
    confidence: float
    num_classes: int
    # 来源查询的下标
    source_index: int = -1

    @property
    def one_hot(self) -> np.ndarray:
        vec = np.zeros(self.num_classes, dtype=np.uint8)
        vec[self.category] = 1
        return vec


def _argmax(pred: InstancePrediction) -> int:
    # np.argmax 在并列时返回最小下标
    return int(np.argmax(pred.scores))


def category_filter(preds: Sequence[InstancePrediction]) -> List[InstancePrediction]:
    """去掉 argmax 落在 no-object 类上的预测，保持原有顺序"""
    return [p for p in preds if _argmax(p) < p.num_classes]


def score_filter(preds: Sequence[InstancePrediction], threshold: float = 0.5,
                 indices: Sequence[int] = None) -> List[PotentialInstance]:
    """每个类别只保留置信度最高的一个预测，并把其掩码二值化

    :param preds: 已经过类别过滤的预测
    :param threshold: 掩码二值化阈值
    :param indices: 预测在原始查询列表中的下标，默认为 0..len-1
    :return: 按类别升序排列的潜在实例
    """
    if not 0.0 < threshold < 1.0:
        raise ThresholdError(f'掩码二值化阈值必须位于 (0, 1)，当前为 {threshold}')
    indices = list(range(len(preds))) if indices is None else list(indices)
    best = {}
    for index, pred in zip(indices, preds):
        category = _argmax(pred)
        if category >= pred.num_classes:
            continue
        confidence = float(pred.scores[category])
        # 严格大于：并列时保留下标更小的预测
        if category not in best or confidence > best[category][0]:
            best[category] = (confidence, index, pred)
    return [PotentialInstance(category=c, mask=binarize(pred.mask, threshold), confidence=conf,
                              num_classes=pred.num_classes, source_index=index)
            for c, (conf, index, pred) in sorted(best.items())]


def potential_instances(preds: Sequence[InstancePrediction], threshold: float = 0.5) -> List[PotentialInstance]:
    """类别过滤 + 分数过滤，保留原始查询下标"""
    kept = [(i, p) for i, p in enumerate(preds) if _argmax(p) < p.num_classes]
    return score_filter([p for _, p in kept], threshold, indices=[i for i, _ in kept])
