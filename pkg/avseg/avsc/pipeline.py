"""
AVSC 推理流程：类别过滤 → 分数过滤 → 音频头 → 定位图合成 → 决策阈值
"""
from typing import List, Sequence, Tuple

import numpy as np

from avseg.avsc.audio_head import AudioHead, audio_forward
from avseg.avsc.filters import PotentialInstance, potential_instances
from avseg.avsc.localization import compose_localization
from avseg.exceptions import ShapeMismatchError, ThresholdError, ValidationError
from avseg.mask.core import MaskShape, binarize
from avseg.matching.matcher import InstancePrediction


def _frame_shape(preds: Sequence[InstancePrediction]) -> MaskShape:
    if len(preds) == 0:
        raise ValidationError('预测列表为空')
    shapes = {p.mask.shape for p in preds}
    if len(shapes) > 1:
        raise ShapeMismatchError(f'预测掩码尺寸不一致：{sorted(shapes)}')
    return MaskShape.of(preds[0].mask)


def _check_decision(decision_threshold):
    if not 0.0 < decision_threshold < 1.0:
        raise ThresholdError(f'决策阈值必须位于 (0, 1)，当前为 {decision_threshold}')


def infer(preds: Sequence[InstancePrediction], head: AudioHead, emb, threshold: float = 0.5,
          decision_threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """单帧推理

    :param preds: N 个查询的预测
    :param head: 音频头
    :param emb: 音频嵌入
    :param threshold: 潜在实例掩码的二值化阈值
    :param decision_threshold: 定位图的决策阈值
    :return: (定位图 S_asl, 最终发声掩码)
    """
    _check_decision(decision_threshold)
    shape = _frame_shape(preds)
    instances = potential_instances(preds, threshold)
    audio = audio_forward(head, emb)
    if audio.size != preds[0].num_classes:
        raise ShapeMismatchError(f'音频头输出 {audio.size} 类，预测为 {preds[0].num_classes} 类')
    S = compose_localization(instances, audio, shape=shape)
    return S, binarize(S, decision_threshold)


def highest_confidence_instance(preds: Sequence[InstancePrediction], threshold: float = 0.5) -> np.ndarray:
    """不使用 AVSC 时的基线：只输出置信度最高的一个实例掩码，没有实例时输出空掩码"""
    shape = _frame_shape(preds)
    instances = potential_instances(preds, threshold)
    if not instances:
        return np.zeros((shape.height, shape.width), dtype=np.uint8)
    # max 在并列时返回第一个，即类别更小者
    best = max(instances, key=lambda inst: inst.confidence)
    return best.mask.copy()


def instance_sounding_masks(instances: Sequence[PotentialInstance], audio,
                            decision_threshold: float = 0.5) -> List[PotentialInstance]:
    """实例级输出：加权后仍能通过决策阈值的潜在实例"""
    _check_decision(decision_threshold)
    audio = np.asarray(audio, dtype=np.float64)
    return [inst for inst in instances
            if inst.mask.any() and min(float(audio[inst.category]), 1.0) >= decision_threshold]
