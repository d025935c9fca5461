"""
运行配置：默认值、YAML 读取、严格校验(拒绝未知字段)
"""
import copy
import os

import yaml

from avseg.exceptions import ConfigError
from avseg.utils.utils import dict_to_object

DEFAULT_CONFIGS = {
    # 唯一的随机种子，数据生成与参数初始化都由它派生
    'seed': 0,
    'dataset_conf': {
        'height': 32,
        'width': 32,
        'num_classes': 6,
        'instance_count_range': [1, 2],
        'sounding_count_range': [1, 1],
        'shape_palette': ['rectangle', 'ellipse'],
        'overlap_allowed': False,
        # 静音实例复用其他样本发声类别的概率
        'silent_reuse_prob': 0.5,
        'embedding_dim': 16,
        'embedding_noise': 0.1,
        'visual_noise': 0.1,
        'train_samples': 200,
        'test_samples': 50,
    },
    'model_conf': {
        'num_queries': 12,
        'audio_head': {
            # simplex 或 independent
            'mode': 'independent',
            'hidden_sizes': [32],
        },
    },
    'loss_conf': {
        'lambda_focal': 20.0,
        'lambda_dice': 1.0,
        'lambda_soas': 1.0,
        'no_object_weight': 0.1,
        'focal_gamma': 2.0,
        'focal_alpha': 0.25,
        'eps': 1.0e-6,
    },
    'optimizer_conf': {
        'stage1_lr': 0.5,
        'stage1_steps': 300,
        'stage2_lr': 0.05,
        'stage2_steps': 2000,
        # full_batch 或 per_sample
        'batch_mode': 'full_batch',
    },
    'infer_conf': {
        'mask_threshold': 0.5,
        'decision_threshold': 0.5,
        'use_avsc': True,
    },
    'train_conf': {
        'log_interval': 50,
    },
}

_CHOICES = {
    'dataset_conf.shape_palette': {'rectangle', 'ellipse'},
    'model_conf.audio_head.mode': {'simplex', 'independent'},
    'optimizer_conf.batch_mode': {'full_batch', 'per_sample'},
}


def _merge(default, user, prefix=''):
    merged = copy.deepcopy(default)
    if not isinstance(user, dict):
        raise ConfigError(f'配置 {prefix or "<root>"} 必须是映射')
    for key, value in user.items():
        path = f'{prefix}.{key}' if prefix else str(key)
        if key not in default:
            raise ConfigError(f'未知的配置字段：{path}')
        if isinstance(default[key], dict):
            merged[key] = _merge(default[key], value, path)
        else:
            merged[key] = value
    return merged


def _number(configs, path, low=None, high=None, integer=False, low_open=False, high_open=False):
    node = configs
    for part in path.split('.'):
        node = node[part]
    kinds = (int,) if integer else (int, float)
    if isinstance(node, bool) or not isinstance(node, kinds):
        raise ConfigError(f'配置字段 {path} 必须是{"整数" if integer else "数值"}，当前为 {node!r}')
    if low is not None and (node <= low if low_open else node < low):
        raise ConfigError(f'配置字段 {path}={node} 超出范围')
    if high is not None and (node >= high if high_open else node > high):
        raise ConfigError(f'配置字段 {path}={node} 超出范围')


def _range_pair(configs, path, low, high):
    section, key = path.split('.')
    pair = configs[section][key]
    if not isinstance(pair, list) or len(pair) != 2 \
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair):
        raise ConfigError(f'配置字段 {path} 必须是两个整数 [min, max]')
    if not low <= pair[0] <= pair[1] <= high:
        raise ConfigError(f'配置字段 {path}={pair} 必须满足 {low} <= min <= max <= {high}')


def validate_configs(configs):
    """检查每个字段的取值范围，出错时抛出 ConfigError"""
    _number(configs, 'seed', 0, integer=True)
    d = 'dataset_conf'
    _number(configs, f'{d}.height', 1, integer=True)
    _number(configs, f'{d}.width', 1, integer=True)
    _number(configs, f'{d}.num_classes', 1, integer=True)
    k = configs[d]['num_classes']
    _range_pair(configs, f'{d}.instance_count_range', 1, k)
    _range_pair(configs, f'{d}.sounding_count_range', 1, k)
    if configs[d]['sounding_count_range'][0] > configs[d]['instance_count_range'][1]:
        raise ConfigError('发声实例数量下限不能超过实例数量上限')
    _number(configs, f'{d}.silent_reuse_prob', 0, 1)
    _number(configs, f'{d}.embedding_dim', k, integer=True)
    _number(configs, f'{d}.embedding_noise', 0)
    _number(configs, f'{d}.visual_noise', 0)
    _number(configs, f'{d}.train_samples', 1, integer=True)
    _number(configs, f'{d}.test_samples', 1, integer=True)
    if not isinstance(configs[d]['overlap_allowed'], bool):
        raise ConfigError('配置字段 dataset_conf.overlap_allowed 必须是布尔值')
    max_sounding = configs[d]['sounding_count_range'][1]
    _number(configs, 'model_conf.num_queries', max_sounding, integer=True, low_open=True)
    hidden = configs['model_conf']['audio_head']['hidden_sizes']
    if not isinstance(hidden, list) or not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1
                                               for h in hidden):
        raise ConfigError('配置字段 model_conf.audio_head.hidden_sizes 必须是正整数列表')
    for key in ('lambda_focal', 'lambda_dice', 'lambda_soas', 'no_object_weight', 'focal_gamma'):
        _number(configs, f'loss_conf.{key}', 0)
    _number(configs, 'loss_conf.focal_alpha', 0, 1)
    _number(configs, 'loss_conf.eps', 0, 0.5, low_open=True, high_open=True)
    _number(configs, 'optimizer_conf.stage1_lr', 0, low_open=True)
    _number(configs, 'optimizer_conf.stage2_lr', 0, low_open=True)
    _number(configs, 'optimizer_conf.stage1_steps', 0, integer=True)
    _number(configs, 'optimizer_conf.stage2_steps', 0, integer=True)
    _number(configs, 'infer_conf.mask_threshold', 0, 1, low_open=True, high_open=True)
    _number(configs, 'infer_conf.decision_threshold', 0, 1, low_open=True, high_open=True)
    if not isinstance(configs['infer_conf']['use_avsc'], bool):
        raise ConfigError('配置字段 infer_conf.use_avsc 必须是布尔值')
    _number(configs, 'train_conf.log_interval', 1, integer=True)
    for path, choices in _CHOICES.items():
        node = configs
        for part in path.split('.'):
            node = node[part]
        values = node if isinstance(node, list) else [node]
        if not values or any(v not in choices for v in values):
            raise ConfigError(f'配置字段 {path}={node!r} 必须取自 {sorted(choices)}')


def build_configs(user_configs=None):
    """把用户配置合并到默认值上并校验，返回可以用属性访问的 Dict"""
    configs = _merge(DEFAULT_CONFIGS, user_configs or {})
    validate_configs(configs)
    return dict_to_object(configs)


def load_configs(configs):
    """读取配置

    :param configs: 配置文件路径、字典或者 None(全部使用默认值)
    :return: 校验后的配置 Dict
    """
    if isinstance(configs, str):
        if not os.path.isfile(configs):
            raise ConfigError(f'配置文件不存在：{configs}')
        with open(configs, 'r', encoding='utf-8') as f:
            try:
                configs = yaml.load(f.read(), Loader=yaml.FullLoader)
            except yaml.YAMLError as e:
                raise ConfigError(f'配置文件无法解析：{e}')
    return build_configs(configs)
