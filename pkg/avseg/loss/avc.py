import numpy as np

from avseg.loss.base import LossValue, interior
from avseg.mask.core import check_same_shape


def avc_loss(S, M_gt, eps=1e-6) -> LossValue:
    """音视频对应损失：定位图 S_asl 与真值掩码之间的逐像素 BCE(像素平均)

    :param S: 定位图，截断到 [eps, 1-eps]
    :param M_gt: 二值真值掩码
    :return: LossValue，grads['S'] 为 dL/dS
    """
    check_same_shape(S, M_gt)
    S = np.asarray(S, dtype=np.float64)
    y = np.asarray(M_gt, dtype=np.float64)
    s = np.clip(S, eps, 1.0 - eps)
    loss = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))
    grad = (-y / s + (1.0 - y) / (1.0 - s)) * interior(S, eps) / s.size
    return LossValue(float(loss.mean()), {'S': grad})
