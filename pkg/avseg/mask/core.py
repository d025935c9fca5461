"""
掩码表示与集合运算 - 所有分割计算的基本单元

二值掩码使用 uint8 数组(取值 0/1)，软掩码使用 float64 数组(取值 [0,1])，
像素按行优先存储，原点在左上角。
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

from avseg.exceptions import ShapeMismatchError, ThresholdError, ValidationError

BinaryMask = npt.NDArray[np.uint8]
SoftMask = npt.NDArray[np.float64]
MaskLogits = npt.NDArray[np.float64]


@dataclass(frozen=True)
class MaskShape:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError(f'掩码尺寸必须为正数，当前为 {self.height}x{self.width}')

    @property
    def size(self) -> int:
        return self.height * self.width

    @classmethod
    def of(cls, arr: np.ndarray) -> "MaskShape":
        if arr.ndim != 2:
            raise ValidationError(f'掩码必须是二维数组，当前维度：{arr.ndim}')
        return cls(int(arr.shape[0]), int(arr.shape[1]))


def as_binary_mask(arr) -> BinaryMask:
    """校验并转换为二值掩码"""
    arr = np.asarray(arr)
    MaskShape.of(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError('二值掩码的像素只能为 0 或 1')
    return arr.astype(np.uint8)


def as_soft_mask(arr) -> SoftMask:
    """校验并转换为软掩码"""
    arr = np.asarray(arr, dtype=np.float64)
    MaskShape.of(arr)
    if not np.isfinite(arr).all():
        raise ValidationError('软掩码包含非有限值')
    if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValidationError('软掩码的像素必须位于 [0, 1]')
    return arr


def as_mask_logits(arr) -> MaskLogits:
    arr = np.asarray(arr, dtype=np.float64)
    MaskShape.of(arr)
    if not np.isfinite(arr).all():
        raise ValidationError('掩码 logits 包含非有限值')
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f'掩码尺寸不一致：{a.shape} vs {b.shape}')


def area(m: BinaryMask) -> int:
    return int(np.count_nonzero(m))


def soft_intersection(a: SoftMask, b: SoftMask) -> float:
    check_same_shape(a, b)
    return float(np.sum(np.multiply(a, b, dtype=np.float64)))


def soft_union(a: SoftMask, b: SoftMask) -> float:
    # 概率松弛：a + b - ab，在二值输入上与集合基数一致
    check_same_shape(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sum(a + b - a * b))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """交并比，两个空掩码约定为 1.0"""
    check_same_shape(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def union_all(masks: Sequence[BinaryMask]) -> BinaryMask:
    if len(masks) == 0:
        raise ValidationError('union_all 需要至少一个掩码')
    out = np.zeros_like(np.asarray(masks[0]), dtype=bool)
    for m in masks:
        check_same_shape(out, np.asarray(m))
        out |= np.asarray(m, dtype=bool)
    return out.astype(np.uint8)


def complement(m: BinaryMask) -> BinaryMask:
    return (1 - np.asarray(m, dtype=np.uint8)).astype(np.uint8)


def binarize(m: SoftMask, threshold: float) -> BinaryMask:
    """阈值化，边界取等(像素值 >= threshold 记为 1)"""
    if not 0.0 < threshold < 1.0:
        raise ThresholdError(f'阈值必须位于 (0, 1)，当前为 {threshold}')
    return (np.asarray(m) >= threshold).astype(np.uint8)
