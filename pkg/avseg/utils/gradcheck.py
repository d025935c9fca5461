"""
解析梯度与中心有限差分的对比
"""
from typing import Callable, Dict

import numpy as np
from scipy.special import expit, softmax

from avseg.avsc.audio_head import AudioHead
from avseg.avsc.filters import PotentialInstance
from avseg.avsc.localization import compose_backward, compose_localization
from avseg.loss.avc import avc_loss
from avseg.loss.base import LossWeights
from avseg.loss.mask_losses import dice_loss, focal_loss
from avseg.loss.set_losses import mask_cls_loss, soas_loss
from avseg.matching.matcher import CostWeights, GroundTruthSegment, InstancePrediction, match

GRAD_TOLERANCE = 1e-4
# 相对误差只统计绝对值大于该值的分量
MAGNITUDE_FLOOR = 1e-8
STEP = 1e-4


def numerical_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """五点中心差分"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        values = []
        for offset in (2 * h, h, -h, -2 * h):
            x.flat[i] = orig + offset
            values.append(fun(x))
        x.flat[i] = orig
        grad.flat[i] = (-values[0] + 8.0 * values[1] - 8.0 * values[2] + values[3]) / (12.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = MAGNITUDE_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    keep = scale > floor
    if not keep.any():
        return 0.0
    return float(np.max(np.abs(analytic - numeric)[keep] / scale[keep]))


def random_problem(rng, height=6, width=6, num_queries=4, num_classes=3, num_gts=2):
    """随机生成一组 logits 与真值，真值类别互不相同"""
    mask_logits = rng.normal(size=(num_queries, height, width))
    class_logits = rng.normal(size=(num_queries, num_classes + 1))
    gts = []
    for c in rng.choice(num_classes, size=num_gts, replace=False):
        mask = (rng.random((height, width)) < 0.4).astype(np.uint8)
        mask[rng.integers(height), rng.integers(width)] = 1
        gts.append(GroundTruthSegment(int(c), mask))
    return mask_logits, class_logits, gts


def _predictions(mask_logits, class_logits):
    masks = expit(mask_logits)
    probs = softmax(class_logits, axis=-1)
    return [InstancePrediction(p, m) for p, m in zip(probs, masks)]


def check_focal(rng, weights: LossWeights) -> float:
    pred = rng.uniform(0.1, 0.9, size=(6, 6))
    gt = (rng.random((6, 6)) < 0.5).astype(np.uint8)
    analytic = focal_loss(pred, gt, weights.gamma, weights.alpha, weights.eps).grads['pred']
    numeric = numerical_gradient(lambda x: focal_loss(x, gt, weights.gamma, weights.alpha, weights.eps).value, pred)
    return max_relative_error(analytic, numeric)


def check_dice(rng, weights: LossWeights) -> float:
    pred = rng.uniform(0.1, 0.9, size=(6, 6))
    gt = (rng.random((6, 6)) < 0.5).astype(np.uint8)
    analytic = dice_loss(pred, gt, weights.eps).grads['pred']
    numeric = numerical_gradient(lambda x: dice_loss(x, gt, weights.eps).value, pred)
    return max_relative_error(analytic, numeric)


def check_mask_cls(rng, weights: LossWeights) -> float:
    mask_logits, class_logits, gts = random_problem(rng)
    sigma = match(_predictions(mask_logits, class_logits), gts, CostWeights.from_loss_weights(weights))
    result = mask_cls_loss(_predictions(mask_logits, class_logits), gts, sigma, weights)
    num_masks = numerical_gradient(
        lambda x: mask_cls_loss(_predictions(x, class_logits), gts, sigma, weights).value, mask_logits)
    num_cls = numerical_gradient(
        lambda x: mask_cls_loss(_predictions(mask_logits, x), gts, sigma, weights).value, class_logits)
    return max(max_relative_error(result.grads['mask_logits'], num_masks),
               max_relative_error(result.grads['class_logits'], num_cls))


def check_soas(rng, weights: LossWeights) -> float:
    mask_logits, class_logits, gts = random_problem(rng)
    sigma = match(_predictions(mask_logits, class_logits), gts, CostWeights.from_loss_weights(weights))
    result = soas_loss(_predictions(mask_logits, class_logits), sigma, gts, weights.eps)
    numeric = numerical_gradient(
        lambda x: soas_loss(_predictions(x, class_logits), sigma, gts, weights.eps).value, mask_logits)
    return max_relative_error(result.grads['mask_logits'], numeric)


def check_avc(rng, weights: LossWeights) -> float:
    S = rng.uniform(0.05, 0.95, size=(6, 6))
    gt = (rng.random((6, 6)) < 0.5).astype(np.uint8)
    analytic = avc_loss(S, gt, weights.eps).grads['S']
    numeric = numerical_gradient(lambda x: avc_loss(x, gt, weights.eps).value, S)
    return max_relative_error(analytic, numeric)


def _disjoint_instances(rng, num_classes, height=6, width=6):
    labels = rng.integers(0, num_classes + 1, size=(height, width))
    instances = []
    for c in range(num_classes):
        mask = (labels == c).astype(np.uint8)
        if mask.any():
            instances.append(PotentialInstance(category=c, mask=mask, confidence=1.0, num_classes=num_classes))
    return instances


def check_audio_head(rng, weights: LossWeights, mode='independent', embedding_dim=6, hidden_sizes=(5,),
                     num_classes=3) -> float:
    """L_avc(compose(q_r, head(emb)), M_gt) 对音频头全部参数的梯度"""
    head = AudioHead.create(embedding_dim, hidden_sizes, num_classes, mode, rng)
    emb = rng.normal(size=embedding_dim)
    instances = _disjoint_instances(rng, num_classes)
    gt = (rng.random((6, 6)) < 0.5).astype(np.uint8)
    probs, cache = head.forward(emb, return_cache=True)
    S = compose_localization(instances, probs)
    grad_S = avc_loss(S, gt, weights.eps).grads['S']
    analytic = head.flatten_grads(head.backward(cache, compose_backward(instances, probs, grad_S)))
    probe = head.copy()

    def objective(flat):
        probe.set_parameters(flat)
        return avc_loss(compose_localization(instances, probe.forward(emb)), gt, weights.eps).value

    numeric = numerical_gradient(objective, head.get_parameters())
    return max_relative_error(analytic, numeric)


CHECKS = {
    'focal': check_focal,
    'dice': check_dice,
    'mask_cls': check_mask_cls,
    'soas': check_soas,
    'avc': check_avc,
    'audio_head_independent': lambda rng, w: check_audio_head(rng, w, 'independent'),
    'audio_head_simplex': lambda rng, w: check_audio_head(rng, w, 'simplex'),
}


def run_gradcheck(seed: int = 0, trials: int = 20, weights: LossWeights = LossWeights()) -> Dict[str, float]:
    """每种损失在 trials 个随机实例上的最大相对误差"""
    rng = np.random.default_rng(seed)
    return {name: max(check(rng, weights) for _ in range(trials)) for name, check in CHECKS.items()}
