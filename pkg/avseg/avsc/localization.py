"""
音频语义感知定位图 S_asl = clip(Σ_j p_a[c_j]·m_j, 0, 1)
"""
from typing import Sequence

import numpy as np

from avseg.exceptions import CategoryError, ShapeMismatchError, ValidationError
from avseg.mask.core import MaskShape


def _instance_stack(instances, shape: MaskShape = None):
    if len(instances) == 0:
        if shape is None:
            raise ValidationError('实例列表为空时必须给出定位图尺寸')
        return np.zeros((0, shape.height, shape.width)), np.zeros(0, dtype=np.int64)
    shapes = {inst.mask.shape for inst in instances}
    if len(shapes) > 1:
        raise ShapeMismatchError(f'潜在实例掩码尺寸不一致：{sorted(shapes)}')
    if shape is not None and (shape.height, shape.width) not in shapes:
        raise ShapeMismatchError(f'潜在实例掩码尺寸 {shapes.pop()} 与定位图尺寸不一致')
    categories = np.array([inst.category for inst in instances], dtype=np.int64)
    if np.unique(categories).size != categories.size:
        raise CategoryError(f'潜在实例的类别重复：{categories.tolist()}')
    masks = np.stack([inst.mask for inst in instances]).astype(np.float64)
    return masks, categories


def _raw_map(masks, categories, audio):
    audio = np.asarray(audio, dtype=np.float64)
    if categories.size and categories.max() >= audio.size:
        raise CategoryError(f'实例类别 {int(categories.max())} 超出音频分布长度 {audio.size}')
    return np.tensordot(audio[categories], masks, axes=1)


def compose_localization(instances: Sequence, audio, shape: MaskShape = None) -> np.ndarray:
    """按音频类别概率对潜在实例掩码加权求和并截断到 [0, 1]

    :param instances: PotentialInstance 列表，类别互不相同
    :param audio: 长度为 K 的音频分布
    :param shape: 实例列表为空时的定位图尺寸
    :return: 定位图 (H, W)
    """
    masks, categories = _instance_stack(instances, shape)
    return np.clip(_raw_map(masks, categories, audio), 0.0, 1.0)


def compose_backward(instances: Sequence, audio, grad_S, shape: MaskShape = None) -> np.ndarray:
    """由 dL/dS 得到 dL/dp_a，被截断的像素不传梯度"""
    masks, categories = _instance_stack(instances, shape)
    audio = np.asarray(audio, dtype=np.float64)
    raw = _raw_map(masks, categories, audio)
    active = ((raw >= 0.0) & (raw <= 1.0)).astype(np.float64)
    grad = np.zeros_like(audio)
    for k, m in zip(categories, masks):
        grad[k] += float(np.sum(grad_S * active * m))
    return grad


def category_masks(instances: Sequence, num_classes: int, shape: MaskShape) -> np.ndarray:
    """把潜在实例整理成 (K, H*W) 的按类别掩码矩阵，缺失的类别全为 0"""
    out = np.zeros((num_classes, shape.size))
    for inst in instances:
        out[inst.category] = inst.mask.reshape(-1)
    return out


def compose_batch(masks_by_category: np.ndarray, probs: np.ndarray):
    """批量合成定位图

    :param masks_by_category: (n, K, P) 按类别排列的二值掩码
    :param probs: (n, K) 音频分布
    :return: 截断后的定位图 (n, P) 与截断前的有效位置 (n, P)
    """
    raw = np.einsum('nk,nkp->np', probs, masks_by_category)
    active = ((raw >= 0.0) & (raw <= 1.0)).astype(np.float64)
    return np.clip(raw, 0.0, 1.0), active


def compose_batch_backward(masks_by_category: np.ndarray, active: np.ndarray, grad_S: np.ndarray) -> np.ndarray:
    return np.einsum('np,nkp->nk', grad_S * active, masks_by_category)
