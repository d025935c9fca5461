"""
按帧条件化的玩具查询解码器 + 音频头

查询 i 在像素 x 处的掩码 logit 为 u_i·frame(x) + β_i；
类别 logits 为 W·pool_i + b，pool_i 是查询 i 二值化掩码(≥0.5)区域内的平均外观，反传时视为常数。
"""
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import expit, softmax

from avseg.avsc.audio_head import AudioHead
from avseg.exceptions import ShapeMismatchError, ValidationError
from avseg.matching.matcher import InstancePrediction

# 原型初始化时对应类别通道的权重与掩码偏置
PROTOTYPE_GAIN = 4.0
PROTOTYPE_BIAS = -2.0
POOL_THRESHOLD = 0.5


@dataclass
class ToyModel:
    prototypes: np.ndarray
    mask_bias: np.ndarray
    cls_weight: np.ndarray
    cls_bias: np.ndarray
    head: AudioHead

    def __post_init__(self):
        n, c = self.prototypes.shape
        if self.mask_bias.shape != (n,):
            raise ShapeMismatchError(f'掩码偏置形状 {self.mask_bias.shape} 应为 ({n},)')
        if self.cls_weight.ndim != 2 or self.cls_weight.shape[1] != c:
            raise ShapeMismatchError(f'类别权重形状 {self.cls_weight.shape} 与通道数 {c} 不匹配')
        if self.cls_bias.shape != (self.cls_weight.shape[0],):
            raise ShapeMismatchError(f'类别偏置形状 {self.cls_bias.shape} 错误')
        if self.head.num_classes != self.num_classes:
            raise ShapeMismatchError(f'音频头输出 {self.head.num_classes} 类，解码器为 {self.num_classes} 类')

    @classmethod
    def create(cls, num_queries, num_classes, embedding_dim, hidden_sizes=(32,), mode='independent', rng=None):
        """查询 i 初始时偏向类别通道 1 + i mod K"""
        rng = rng if rng is not None else np.random.default_rng(0)
        if num_queries < 1 or num_classes < 1:
            raise ValidationError('查询数量和类别数必须为正数')
        channels = num_classes + 1
        prototypes = 0.1 * rng.normal(size=(num_queries, channels))
        for i in range(num_queries):
            prototypes[i, 1 + i % num_classes] += PROTOTYPE_GAIN
        mask_bias = np.full(num_queries, PROTOTYPE_BIAS)
        cls_weight = 0.1 * rng.normal(size=(num_classes + 1, channels))
        cls_bias = np.zeros(num_classes + 1)
        head = AudioHead.create(embedding_dim, hidden_sizes, num_classes, mode, rng)
        return cls(prototypes, mask_bias, cls_weight, cls_bias, head)

    @property
    def num_queries(self) -> int:
        return self.prototypes.shape[0]

    @property
    def channels(self) -> int:
        return self.prototypes.shape[1]

    @property
    def num_classes(self) -> int:
        return self.cls_weight.shape[0] - 1

    def copy(self) -> "ToyModel":
        return ToyModel(self.prototypes.copy(), self.mask_bias.copy(), self.cls_weight.copy(),
                        self.cls_bias.copy(), self.head.copy())

    def forward(self, frame):
        """单帧前向

        :param frame: (C, H, W) 视觉帧
        :return: dict，包含 mask_logits (N,H,W)、masks、class_logits (N,K+1)、probs、pools (N,C)
        """
        frame = np.asarray(frame, dtype=np.float64)
        if frame.ndim != 3 or frame.shape[0] != self.channels:
            raise ShapeMismatchError(f'视觉帧形状 {frame.shape} 与通道数 {self.channels} 不匹配')
        mask_logits = np.einsum('nc,chw->nhw', self.prototypes, frame) + self.mask_bias[:, None, None]
        masks = expit(mask_logits)
        # 外观只在二值化后的掩码区域内取平均，区域为空时为零向量
        support = (masks >= POOL_THRESHOLD).astype(np.float64)
        area = support.sum(axis=(1, 2))
        pools = np.einsum('nhw,chw->nc', support, frame) / np.maximum(area, 1.0)[:, None]
        class_logits = pools @ self.cls_weight.T + self.cls_bias
        probs = softmax(class_logits, axis=-1)
        return {'mask_logits': mask_logits, 'masks': masks, 'class_logits': class_logits, 'probs': probs,
                'pools': pools}

    def predictions(self, frame, outputs=None) -> List[InstancePrediction]:
        outputs = outputs if outputs is not None else self.forward(frame)
        return [InstancePrediction(p, m) for p, m in zip(outputs['probs'], outputs['masks'])]

    def backward(self, frame, outputs, grad_mask_logits, grad_class_logits):
        """把 logits 上的梯度链式传到 (u, β, W, b)"""
        frame = np.asarray(frame, dtype=np.float64)
        return {
            'prototypes': np.einsum('nhw,chw->nc', grad_mask_logits, frame),
            'mask_bias': grad_mask_logits.sum(axis=(1, 2)),
            'cls_weight': grad_class_logits.T @ outputs['pools'],
            'cls_bias': grad_class_logits.sum(axis=0),
        }

    def apply_gradients(self, grads, lr):
        self.prototypes -= lr * grads['prototypes']
        self.mask_bias -= lr * grads['mask_bias']
        self.cls_weight -= lr * grads['cls_weight']
        self.cls_bias -= lr * grads['cls_bias']

    def decoder_parameters(self) -> np.ndarray:
        return np.concatenate([self.prototypes.ravel(), self.mask_bias, self.cls_weight.ravel(), self.cls_bias])


def build_model(configs, rng=None) -> ToyModel:
    d = configs.dataset_conf
    head_conf = configs.model_conf.audio_head
    return ToyModel.create(num_queries=int(configs.model_conf.num_queries), num_classes=int(d.num_classes),
                           embedding_dim=int(d.embedding_dim), hidden_sizes=list(head_conf.hidden_sizes),
                           mode=head_conf.mode, rng=rng)
