"""
二进制格式读写：PGM(P5) 二值掩码与 SASL 定位图

SASL 布局(小端)：4 字节魔数 "SASL" | uint32 H | uint32 W | H*W 个 float32(行优先)
"""
import os
import struct

import numpy as np
import yaml

from avseg.exceptions import FormatError, MalformedDocumentError, MissingMaskFileError
from avseg.mask.core import as_binary_mask

SASL_MAGIC = b'SASL'
_SASL_HEADER = struct.Struct('<4sII')


def _check_exists(path):
    if not os.path.isfile(path):
        raise MissingMaskFileError(f'文件不存在：{path}')


def _pgm_tokens(data: bytes, count: int):
    """读取 PGM 头部的前 count 个字段，跳过 # 注释，返回字段和像素起始位置"""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError('PGM 头部不完整')
        if data[pos:pos + 1] == b'#':
            end = data.find(b'\n', pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # 头部与像素之间只有一个空白字符
    return tokens, pos + 1


def read_pgm(path):
    """读取 P5 格式的 PGM，像素值 >= 128 记为 1

    :param path: 文件路径
    :return: 二值掩码 (H, W) uint8
    """
    _check_exists(path)
    with open(path, 'rb') as f:
        data = f.read()
    tokens, pos = _pgm_tokens(data, 4)
    if tokens[0] != b'P5':
        raise FormatError(f'{path} 不是 P5 格式的 PGM')
    try:
        width, height, max_value = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise FormatError(f'{path} 的 PGM 头部无法解析')
    if width < 1 or height < 1 or not 0 < max_value < 65536:
        raise FormatError(f'{path} 的 PGM 尺寸或最大值非法')
    if max_value < 256:
        pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos) \
            if len(data) - pos >= width * height else None
        threshold = 128
    else:
        pixels = np.frombuffer(data, dtype='>u2', count=width * height, offset=pos) \
            if len(data) - pos >= 2 * width * height else None
        threshold = 128 * 256
    if pixels is None:
        raise FormatError(f'{path} 的像素数据长度不足')
    return (pixels.reshape(height, width) >= threshold).astype(np.uint8)


def write_pgm(path, mask):
    mask = as_binary_mask(mask)
    height, width = mask.shape
    header = f'P5\n{width} {height}\n255\n'.encode('ascii')
    with open(path, 'wb') as f:
        f.write(header)
        f.write((mask * 255).astype(np.uint8).tobytes())


def read_sasl(path):
    _check_exists(path)
    with open(path, 'rb') as f:
        data = f.read()
    if len(data) < _SASL_HEADER.size:
        raise FormatError(f'{path} 的 SASL 头部不完整')
    magic, height, width = _SASL_HEADER.unpack_from(data)
    if magic != SASL_MAGIC:
        raise FormatError(f'{path} 的魔数错误：{magic!r}')
    if height < 1 or width < 1:
        raise FormatError(f'{path} 的尺寸非法：{height}x{width}')
    expected = _SASL_HEADER.size + 4 * height * width
    if len(data) != expected:
        raise FormatError(f'{path} 的长度为 {len(data)}，应为 {expected}')
    values = np.frombuffer(data, dtype='<f4', offset=_SASL_HEADER.size)
    return values.reshape(height, width).astype(np.float64)


def write_sasl(path, values):
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError(f'SASL 只能保存二维数组，当前维度：{values.ndim}')
    height, width = values.shape
    with open(path, 'wb') as f:
        f.write(_SASL_HEADER.pack(SASL_MAGIC, height, width))
        f.write(np.ascontiguousarray(values, dtype='<f4').tobytes())


def read_mask_file(path):
    """根据扩展名读取掩码：.pgm 为二值掩码，.sasl 为软掩码"""
    if str(path).lower().endswith('.pgm'):
        return read_pgm(path).astype(np.float64)
    return read_sasl(path)


def read_embedding(path):
    """音频嵌入文件：YAML 数组，例如 [0.1, 0.0, 1.2]"""
    _check_exists(path)
    with open(path, 'r', encoding='utf-8') as f:
        try:
            values = yaml.safe_load(f.read())
        except yaml.YAMLError as e:
            raise MalformedDocumentError(f'{path} 无法解析：{e}')
    if not isinstance(values, list) or not values \
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise MalformedDocumentError(f'{path} 必须是非空的数值数组')
    emb = np.asarray(values, dtype=np.float64)
    if not np.isfinite(emb).all():
        raise MalformedDocumentError(f'{path} 包含非有限值')
    return emb


def write_embedding(path, embedding):
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump([float(v) for v in np.asarray(embedding, dtype=np.float64)], f,
                       default_flow_style=True)
