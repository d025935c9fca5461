import numpy as np
import pytest

from avseg.matching.matcher import GroundTruthSegment, InstancePrediction


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def left_half(n=4):
    m = np.zeros((n, n), dtype=np.uint8)
    m[:, :n // 2] = 1
    return m


def top_half(n=4):
    m = np.zeros((n, n), dtype=np.uint8)
    m[:n // 2, :] = 1
    return m


def one_hot_scores(k, category, confidence=1.0):
    """长度为 K+1 的类别分数，category 处为 confidence，其余平分"""
    scores = np.full(k + 1, (1.0 - confidence) / k)
    scores[category] = confidence
    return scores


def random_scores(rng, k):
    s = rng.random(k + 1) + 0.01
    return s / s.sum()


def random_prediction(rng, k, shape=(6, 6)):
    return InstancePrediction(random_scores(rng, k), rng.random(shape))


def random_gt(rng, category, shape=(6, 6)):
    mask = (rng.random(shape) < 0.4).astype(np.uint8)
    mask[0, 0] = 1
    return GroundTruthSegment(category, mask)


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='运行需要完整训练的验收测试')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='需要 --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


SMALL_CONFIGS = {
    'seed': 3,
    'dataset_conf': {'height': 12, 'width': 12, 'num_classes': 3, 'embedding_dim': 6,
                     'train_samples': 6, 'test_samples': 4},
    'model_conf': {'num_queries': 4, 'audio_head': {'hidden_sizes': [8]}},
    'optimizer_conf': {'stage1_steps': 4, 'stage2_steps': 4},
    'train_conf': {'log_interval': 2},
}
