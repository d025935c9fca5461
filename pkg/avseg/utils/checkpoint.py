"""
AVSM 模型文件(全部小端)：

    "AVSM" | u32 version | u32 N | u32 C | u32 K | u32 D | u32 L | L×(u32 in, u32 out) | u8 mode
    | f64 prototypes N×C | f64 mask_bias N | f64 cls_weight (K+1)×C | f64 cls_bias K+1
    | 每层 f64 W (out×in) 与 f64 b (out)
"""
import os
import struct

import numpy as np
from loguru import logger

from avseg.avsc.audio_head import AudioHead
from avseg.exceptions import FormatError, MissingMaskFileError, ShapeMismatchError
from avseg.models.toy import ToyModel

AVSM_MAGIC = b'AVSM'
AVSM_VERSION = 1
_HEADER = struct.Struct('<4sIIIIII')
_LAYER = struct.Struct('<II')
_MODES = {'simplex': 0, 'independent': 1}


def _blocks(model: ToyModel):
    yield model.prototypes
    yield model.mask_bias
    yield model.cls_weight
    yield model.cls_bias
    for w, b in zip(model.head.weights, model.head.biases):
        yield w
        yield b


def checkpoint_bytes(model: ToyModel) -> bytes:
    head = model.head
    parts = [_HEADER.pack(AVSM_MAGIC, AVSM_VERSION, model.num_queries, model.channels, model.num_classes,
                          head.input_dim, len(head.weights))]
    parts += [_LAYER.pack(d_in, d_out) for d_in, d_out in head.layer_dims]
    parts.append(struct.pack('<B', _MODES[head.mode]))
    parts += [np.ascontiguousarray(block, dtype='<f8').tobytes() for block in _blocks(model)]
    return b''.join(parts)


def save_checkpoint(path, model: ToyModel):
    """保存模型

    :param path: 模型文件路径
    :param model: 需要保存的 ToyModel
    """
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(checkpoint_bytes(model))
    logger.info(f'已保存模型：{path}')


class _Cursor:
    def __init__(self, data, offset):
        self.data, self.offset = data, offset

    def take(self, shape):
        count = int(np.prod(shape))
        end = self.offset + 8 * count
        if end > len(self.data):
            raise FormatError('AVSM 参数数据长度不足')
        arr = np.frombuffer(self.data, dtype='<f8', count=count, offset=self.offset).reshape(shape)
        self.offset = end
        return arr.astype(np.float64)


def load_checkpoint(path) -> ToyModel:
    if not os.path.isfile(path):
        raise MissingMaskFileError(f'模型文件不存在：{path}')
    with open(path, 'rb') as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise FormatError(f'{path} 的 AVSM 头部不完整')
    magic, version, n, c, k, d, layers = _HEADER.unpack_from(data)
    if magic != AVSM_MAGIC:
        raise FormatError(f'{path} 的魔数错误：{magic!r}')
    if version != AVSM_VERSION:
        raise FormatError(f'{path} 的版本 {version} 不受支持')
    if min(n, c, k, d, layers) < 1:
        raise FormatError(f'{path} 的维度头部非法')
    offset = _HEADER.size
    if len(data) < offset + layers * _LAYER.size + 1:
        raise FormatError(f'{path} 的层结构不完整')
    dims = [_LAYER.unpack_from(data, offset + i * _LAYER.size) for i in range(layers)]
    offset += layers * _LAYER.size
    mode_code = data[offset]
    modes = {v: m for m, v in _MODES.items()}
    if mode_code not in modes:
        raise FormatError(f'{path} 的音频头模式编码 {mode_code} 非法')
    cursor = _Cursor(data, offset + 1)
    prototypes = cursor.take((n, c))
    mask_bias = cursor.take((n,))
    cls_weight = cursor.take((k + 1, c))
    cls_bias = cursor.take((k + 1,))
    weights, biases = [], []
    for d_in, d_out in dims:
        weights.append(cursor.take((d_out, d_in)))
        biases.append(cursor.take((d_out,)))
    if cursor.offset != len(data):
        raise FormatError(f'{path} 末尾有 {len(data) - cursor.offset} 个多余字节')
    try:
        head = AudioHead(weights, biases, modes[mode_code])
        model = ToyModel(prototypes, mask_bias, cls_weight, cls_bias, head)
    except ShapeMismatchError as e:
        raise FormatError(f'{path} 的层结构不一致：{e}')
    if head.input_dim != d:
        raise FormatError(f'{path} 的嵌入维度 {d} 与第一层输入 {head.input_dim} 不一致')
    logger.info(f'成功加载模型：{path}')
    return model


def load_head(path) -> AudioHead:
    """infer 子命令只需要音频头"""
    return load_checkpoint(path).head
