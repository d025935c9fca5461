from loguru import logger

from .avc import avc_loss
from .base import LossValue, LossWeights, sigmoid_backward, softmax_backward
from .mask_losses import dice_loss, focal_loss, mask_loss
from .set_losses import mask_cls_loss, segmentation_loss, soas_loss

__all__ = ['build_loss_weights', 'LossValue', 'LossWeights', 'focal_loss', 'dice_loss', 'mask_loss',
           'mask_cls_loss', 'soas_loss', 'segmentation_loss', 'avc_loss', 'sigmoid_backward',
           'softmax_backward']


def build_loss_weights(configs):
    loss_conf = configs.loss_conf
    weights = LossWeights(lambda_focal=float(loss_conf.lambda_focal),
                          lambda_dice=float(loss_conf.lambda_dice),
                          lambda_soas=float(loss_conf.lambda_soas),
                          no_object_weight=float(loss_conf.no_object_weight),
                          gamma=float(loss_conf.focal_gamma),
                          alpha=float(loss_conf.focal_alpha),
                          eps=float(loss_conf.eps))
    logger.info(f'成功创建损失权重：{weights}')
    return weights
