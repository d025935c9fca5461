"""
集合级别的分割损失：L_mask_cls、静音物体感知损失 L_soas 以及两者之和 L_sn

预测的软掩码视为 sigmoid(mask_logits)，类别分数视为 softmax(class_logits)，
因此返回的 logits 梯度只依赖于概率本身。
"""
from typing import Sequence

import numpy as np
from loguru import logger

from avseg.exceptions import MatchingError
from avseg.loss.base import LossValue, LossWeights, sigmoid_backward
from avseg.loss.mask_losses import mask_loss
from avseg.mask.core import union_all
from avseg.matching.matcher import GroundTruthSegment, InstancePrediction, MatchingIndex


def _stack(preds: Sequence[InstancePrediction]):
    probs = np.stack([p.scores for p in preds]).astype(np.float64)
    masks = np.stack([p.mask for p in preds]).astype(np.float64)
    return probs, masks


def _neg_log(p, eps):
    """-log p 及其对 logits 的梯度系数(被截断时为 0)"""
    if p < eps:
        return -np.log(eps), 0.0
    return -np.log(p), 1.0


def mask_cls_loss(preds: Sequence[InstancePrediction], gts: Sequence[GroundTruthSegment],
                  sigma: MatchingIndex, w: LossWeights = LossWeights()) -> LossValue:
    """匹配对上的交叉熵 + 掩码损失，未匹配预测施加权重为 w_noobj 的 no-object 交叉熵"""
    if len(preds) == 0:
        return LossValue(0.0, {})
    sigma.validate(len(preds), len(gts))
    probs, masks = _stack(preds)
    no_object = probs.shape[1] - 1
    grad_cls = np.zeros_like(probs)
    grad_masks = np.zeros_like(masks)
    ce_total, mask_total, noobj_total = 0.0, 0.0, 0.0

    for gt_index, pred_index in sigma.pairs:
        gt = gts[gt_index]
        if gt.category >= no_object:
            raise MatchingError(f'真值类别 {gt.category} 与预测的类别数 {no_object} 不一致')
        p = probs[pred_index]
        ce, active = _neg_log(p[gt.category], w.eps)
        ce_total += ce
        # d(-log softmax(z)[c]) / dz = p - onehot(c)
        onehot = np.zeros_like(p)
        onehot[gt.category] = 1.0
        grad_cls[pred_index] += active * (p - onehot)

        ml = mask_loss(masks[pred_index], gt.mask, w)
        mask_total += ml.value
        grad_masks[pred_index] += ml.grads['pred']

    for pred_index in sigma.unmatched:
        p = probs[pred_index]
        ce, active = _neg_log(p[no_object], w.eps)
        noobj_total += w.no_object_weight * ce
        onehot = np.zeros_like(p)
        onehot[no_object] = 1.0
        grad_cls[pred_index] += w.no_object_weight * active * (p - onehot)

    value = ce_total + mask_total + noobj_total
    grads = {
        'masks': grad_masks,
        'mask_logits': sigmoid_backward(grad_masks, masks),
        'class_logits': grad_cls,
    }
    return LossValue(value, grads, terms={'ce': ce_total, 'mask': mask_total, 'no_object': noobj_total})


def soas_loss(preds: Sequence[InstancePrediction], sigma: MatchingIndex,
              gts: Sequence[GroundTruthSegment], eps: float = 1e-6) -> LossValue:
    """静音物体感知损失：未匹配(no-object)掩码与前景并集的软 IoU 之和"""
    if len(preds) == 0:
        return LossValue(0.0, {})
    probs, masks = _stack(preds)
    zero = {'masks': np.zeros_like(masks), 'mask_logits': np.zeros_like(masks)}
    if len(gts) == 0:
        logger.warning('没有前景真值，静音物体感知损失按 0 处理')
        return LossValue(0.0, zero, no_foreground=True)
    sigma.validate(len(preds), len(gts))
    if not sigma.unmatched:
        return LossValue(0.0, zero)

    fg = union_all([g.mask for g in gts]).astype(np.float64)
    fg_area = float(fg.sum())
    grad_masks = np.zeros_like(masks)
    value = 0.0
    for i in sigma.unmatched:
        m = masks[i]
        inter = float(np.sum(m * fg))
        union = float(m.sum()) + fg_area - inter + eps
        value += inter / union
        # d(inter)/dm = fg, d(union)/dm = 1 - fg
        grad_masks[i] = (fg * union - inter * (1.0 - fg)) / union ** 2
    return LossValue(value, {'masks': grad_masks, 'mask_logits': sigmoid_backward(grad_masks, masks)})


def segmentation_loss(preds: Sequence[InstancePrediction], gts: Sequence[GroundTruthSegment],
                      sigma: MatchingIndex, w: LossWeights = LossWeights()) -> LossValue:
    """L_sn = L_mask_cls + λ_soas·L_soas"""
    cls_part = mask_cls_loss(preds, gts, sigma, w)
    soas_part = soas_loss(preds, sigma, gts, w.eps)
    if not cls_part.grads:
        return LossValue(0.0, {}, terms={'mask_cls': 0.0, 'soas': 0.0})
    grads = {
        'masks': cls_part.grads['masks'] + w.lambda_soas * soas_part.grads['masks'],
        'mask_logits': cls_part.grads['mask_logits'] + w.lambda_soas * soas_part.grads['mask_logits'],
        'class_logits': cls_part.grads['class_logits'],
    }
    value = cls_part.value + w.lambda_soas * soas_part.value
    return LossValue(value, grads, terms={'mask_cls': cls_part.value, 'soas': soas_part.value},
                     no_foreground=soas_part.no_foreground)
