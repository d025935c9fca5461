from .core import (MaskShape, BinaryMask, SoftMask, MaskLogits, as_binary_mask, as_soft_mask,
                   as_mask_logits, check_same_shape, area, soft_intersection, soft_union, iou,
                   union_all, complement, binarize)

__all__ = ['MaskShape', 'BinaryMask', 'SoftMask', 'MaskLogits', 'as_binary_mask', 'as_soft_mask',
           'as_mask_logits', 'check_same_shape', 'area', 'soft_intersection', 'soft_union', 'iou',
           'union_all', 'complement', 'binarize']
