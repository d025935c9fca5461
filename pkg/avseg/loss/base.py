from dataclasses import dataclass, field
from typing import Dict

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    lambda_focal: float = 20.0
    lambda_dice: float = 1.0
    lambda_soas: float = 1.0
    no_object_weight: float = 0.1
    gamma: float = 2.0
    alpha: float = 0.25
    eps: float = 1e-6

    def __post_init__(self):
        from avseg.exceptions import ValidationError
        for name in ('lambda_focal', 'lambda_dice', 'lambda_soas', 'no_object_weight', 'gamma', 'alpha'):
            if getattr(self, name) < 0:
                raise ValidationError(f'损失权重 {name} 不能为负数')
        if self.eps <= 0:
            raise ValidationError('eps 必须大于 0')

    def replace(self, **kwargs) -> "LossWeights":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(kwargs)
        return LossWeights(**values)


@dataclass
class LossValue:
    value: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    # 复合损失的各个分项
    terms: Dict[str, float] = field(default_factory=dict)
    no_foreground: bool = False


def sigmoid_backward(grad_prob, prob):
    """p = sigmoid(x) 时把 dL/dp 换算成 dL/dx"""
    return grad_prob * prob * (1.0 - prob)


def softmax_backward(grad_prob, prob):
    """p = softmax(z)(最后一维) 时把 dL/dp 换算成 dL/dz"""
    inner = np.sum(grad_prob * prob, axis=-1, keepdims=True)
    return prob * (grad_prob - inner)


def interior(p, eps):
    """截断到 [eps, 1-eps] 后仍可导的位置，边界上梯度为 0"""
    return ((p > eps) & (p < 1.0 - eps)).astype(np.float64)
