"""
掩码损失：focal、dice 及其加权和，梯度均对软掩码求导
"""
import numpy as np

from avseg.loss.base import LossValue, LossWeights, interior
from avseg.mask.core import check_same_shape


def focal_loss(pred, gt, gamma=2.0, alpha=0.25, eps=1e-6) -> LossValue:
    """α 平衡的二值 focal 损失，像素平均

    :param pred: 软掩码，先截断到 [eps, 1-eps]
    :param gt: 二值真值掩码
    :return: LossValue，grads['pred'] 为 dL/dpred
    """
    check_same_shape(pred, gt)
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    p = np.clip(pred, eps, 1.0 - eps)
    p_t = np.where(y > 0.5, p, 1.0 - p)
    alpha_t = np.where(y > 0.5, alpha, 1.0 - alpha)
    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    loss = -alpha_t * one_minus ** gamma * log_pt

    if gamma == 0:
        d_pt = -alpha_t / p_t
    else:
        d_pt = alpha_t * (gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus ** gamma / p_t)
    sign = np.where(y > 0.5, 1.0, -1.0)
    grad = d_pt * sign * interior(pred, eps) / p.size
    return LossValue(float(loss.mean()), {'pred': grad})


def dice_loss(pred, gt, eps=1e-6) -> LossValue:
    check_same_shape(pred, gt)
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    inter = float(np.sum(pred * y))
    denom = float(pred.sum() + y.sum()) + eps
    numer = 2.0 * inter + eps
    grad = -(2.0 * y * denom - numer) / denom ** 2
    return LossValue(1.0 - numer / denom, {'pred': grad})


def mask_loss(pred, gt, w: LossWeights = LossWeights()) -> LossValue:
    """λ_f·focal + λ_d·dice"""
    focal = focal_loss(pred, gt, w.gamma, w.alpha, w.eps)
    dice = dice_loss(pred, gt, w.eps)
    value = w.lambda_focal * focal.value + w.lambda_dice * dice.value
    grad = w.lambda_focal * focal.grads['pred'] + w.lambda_dice * dice.grads['pred']
    return LossValue(value, {'pred': grad}, terms={'focal': focal.value, 'dice': dice.value})
