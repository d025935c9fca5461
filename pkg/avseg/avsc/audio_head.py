"""
音频头：把音频嵌入映射为各类别的发声概率 P_a

隐藏层使用 tanh，输出层在 simplex 模式下做 softmax，在 independent 模式下逐类 sigmoid。
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import expit, softmax

from avseg.exceptions import ShapeMismatchError, SimplexViolationError, ValidationError

HEAD_MODES = ('simplex', 'independent')


@dataclass
class AudioHead:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    mode: str = 'independent'
    _layout: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in HEAD_MODES:
            raise ValidationError(f'音频头模式 {self.mode} 不存在，可选：{HEAD_MODES}')
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ValidationError('音频头的权重与偏置层数必须一致且至少一层')
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatchError(f'第 {i} 层形状错误：W{w.shape}, b{b.shape}')
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatchError(f'第 {i} 层输入维度 {w.shape[1]} 与上一层输出 '
                                         f'{self.weights[i - 1].shape[0]} 不匹配')
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self._layout = tuple(w.shape for w in self.weights)

    @classmethod
    def create(cls, input_dim, hidden_sizes, num_classes, mode='independent', rng=None) -> "AudioHead":
        """随机初始化，权重方差 1/fan_in，偏置为 0"""
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [input_dim] + list(hidden_sizes) + [num_classes]
        weights = [rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)) for d_in, d_out in zip(dims, dims[1:])]
        biases = [np.zeros(d_out) for d_out in dims[1:]]
        return cls(weights, biases, mode)

    @classmethod
    def zeros(cls, input_dim, hidden_sizes, num_classes, mode='independent') -> "AudioHead":
        dims = [input_dim] + list(hidden_sizes) + [num_classes]
        return cls([np.zeros((d_out, d_in)) for d_in, d_out in zip(dims, dims[1:])],
                   [np.zeros(d_out) for d_out in dims[1:]], mode)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self):
        return [(w.shape[1], w.shape[0]) for w in self.weights]

    def copy(self) -> "AudioHead":
        return AudioHead([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.mode)

    def forward(self, emb, return_cache=False):
        """前向计算

        :param emb: 形状 (D,) 或 (n, D) 的音频嵌入
        :param return_cache: 是否返回反向传播需要的中间结果
        :return: 概率 (K,) 或 (n, K)；return_cache 为 True 时额外返回 cache
        """
        emb = np.asarray(emb, dtype=np.float64)
        single = emb.ndim == 1
        x = emb[None, :] if single else emb
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeMismatchError(f'音频嵌入维度 {emb.shape} 与音频头输入维度 {self.input_dim} 不匹配')
        activations = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = np.tanh(x @ w.T + b)
            activations.append(x)
        logits = x @ self.weights[-1].T + self.biases[-1]
        probs = softmax(logits, axis=-1) if self.mode == 'simplex' else expit(logits)
        out = probs[0] if single else probs
        if return_cache:
            return out, {'activations': activations, 'probs': probs, 'single': single}
        return out

    def backward(self, cache, grad_probs):
        """由 dL/dP_a 反传得到各层参数的梯度(向量-雅可比积)"""
        probs = cache['probs']
        g = np.asarray(grad_probs, dtype=np.float64).reshape(probs.shape)
        if self.mode == 'simplex':
            g = probs * (g - np.sum(g * probs, axis=-1, keepdims=True))
        else:
            g = g * probs * (1.0 - probs)
        activations = cache['activations']
        grad_w, grad_b = [None] * len(self.weights), [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = activations[layer]
            grad_w[layer] = g.T @ a_in
            grad_b[layer] = g.sum(axis=0)
            if layer > 0:
                g = (g @ self.weights[layer]) * (1.0 - a_in ** 2)
        return {'weights': grad_w, 'biases': grad_b}

    def probability_gradients(self, emb):
        """每个输出概率对全部参数的梯度，返回长度为 K 的列表"""
        _, cache = self.forward(emb, return_cache=True)
        grads = []
        for k in range(self.num_classes):
            unit = np.zeros(self.num_classes)
            unit[k] = 1.0
            grads.append(self.backward(cache, unit))
        return grads

    def get_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)])

    def set_parameters(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for i, shape in enumerate(self._layout):
            size = shape[0] * shape[1]
            self.weights[i] = flat[offset:offset + size].reshape(shape).copy()
            offset += size
            self.biases[i] = flat[offset:offset + shape[0]].copy()
            offset += shape[0]
        if offset != flat.size:
            raise ShapeMismatchError(f'参数长度 {flat.size} 与音频头需要的 {offset} 不一致')

    @staticmethod
    def flatten_grads(grads) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                               for w, b in zip(grads['weights'], grads['biases'])])


def audio_forward(head: AudioHead, emb) -> np.ndarray:
    """音频头前向，返回 AudioDistribution(长度为 K 的概率向量)"""
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 1:
        raise ShapeMismatchError(f'音频嵌入必须是一维向量，当前形状：{emb.shape}')
    if not np.isfinite(emb).all():
        raise ValidationError('音频嵌入包含非有限值')
    return head.forward(emb)


def validate_audio_distribution(probs, mode='independent') -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or not np.isfinite(probs).all() or probs.min() < 0.0 or probs.max() > 1.0:
        raise SimplexViolationError('音频分布的每一项必须位于 [0, 1]')
    if mode == 'simplex' and abs(probs.sum() - 1.0) > 1e-6:
        raise SimplexViolationError(f'simplex 模式下音频分布之和为 {probs.sum():.8f}')
    return probs
