from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from avseg.exceptions import ValidationError
from avseg.mask.core import binarize, check_same_shape

BETA2 = 0.3
SWEEP_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


# F-score，β² 默认 0.3，precision 与 recall 同为 0 时为 0
def fscore(precision, recall, beta2=BETA2):
    denom = beta2 * precision + recall
    if denom <= 0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


@dataclass
class FrameEval:
    jaccard: float
    precision: float
    recall: float
    fscore: float
    predicted_empty: bool
    intersection: int = field(default=0, repr=False)
    union: int = field(default=0, repr=False)
    pred_area: int = field(default=0, repr=False)
    gt_area: int = field(default=0, repr=False)


def _ratio(num, denom):
    # 分母为空时约定为 1，保证正确的"静音"输出得满分
    return 1.0 if denom == 0 else num / denom


def frame_eval(pred, gt, beta2=BETA2) -> FrameEval:
    check_same_shape(np.asarray(pred), np.asarray(gt))
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    inter = int(np.count_nonzero(pred & gt))
    union = int(np.count_nonzero(pred | gt))
    pred_area, gt_area = int(np.count_nonzero(pred)), int(np.count_nonzero(gt))
    precision = _ratio(inter, pred_area)
    recall = _ratio(inter, gt_area)
    return FrameEval(jaccard=_ratio(inter, union), precision=precision, recall=recall,
                     fscore=fscore(precision, recall, beta2), predicted_empty=pred_area == 0,
                     intersection=inter, union=union, pred_area=pred_area, gt_area=gt_area)


@dataclass
class DatasetReport:
    mean_jaccard: float
    mean_fscore: float
    micro_jaccard: float
    micro_fscore: float
    # 没有静音帧时为 None
    silent_miou: Optional[float]
    recognition_accuracy: Optional[float]
    frame_count: int
    mean_precision: float = 0.0
    mean_recall: float = 0.0
    silent_count: int = 0


def dataset_eval(frames: Sequence[Tuple[np.ndarray, np.ndarray]], beta2=BETA2) -> DatasetReport:
    """整个数据集的评估

    :param frames: (预测掩码, 真值掩码) 列表
    :param beta2: F-score 的 β²
    :return: DatasetReport，宏平均按帧，微平均按像素累加
    """
    if len(frames) == 0:
        raise ValidationError('评估至少需要一帧')
    evals, silent_bg, silent_ok = [], [], []
    for pred, gt in frames:
        ev = frame_eval(pred, gt, beta2)
        evals.append(ev)
        if ev.gt_area == 0:
            total = int(np.asarray(gt).size)
            silent_bg.append((total - ev.pred_area) / total)
            silent_ok.append(1.0 if ev.predicted_empty else 0.0)
    inter = sum(e.intersection for e in evals)
    union = sum(e.union for e in evals)
    micro_p = _ratio(inter, sum(e.pred_area for e in evals))
    micro_r = _ratio(inter, sum(e.gt_area for e in evals))
    return DatasetReport(mean_jaccard=float(np.mean([e.jaccard for e in evals])),
                         mean_fscore=float(np.mean([e.fscore for e in evals])),
                         micro_jaccard=_ratio(inter, union),
                         micro_fscore=fscore(micro_p, micro_r, beta2),
                         silent_miou=float(np.mean(silent_bg)) if silent_bg else None,
                         recognition_accuracy=float(np.mean(silent_ok)) if silent_ok else None,
                         frame_count=len(evals),
                         mean_precision=float(np.mean([e.precision for e in evals])),
                         mean_recall=float(np.mean([e.recall for e in evals])),
                         silent_count=len(silent_ok))


@dataclass
class SweepReport:
    reports: List[Tuple[float, DatasetReport]]
    best_threshold: float


def threshold_sweep(maps: Sequence[np.ndarray], gts: Sequence[np.ndarray], thresholds=SWEEP_THRESHOLDS,
                    beta2=BETA2) -> SweepReport:
    """对软定位图按多个阈值二值化后分别评估，返回 J 最高的阈值(并列取较小者)"""
    if len(maps) != len(gts):
        raise ValidationError(f'定位图数量 {len(maps)} 与真值数量 {len(gts)} 不一致')
    if len(thresholds) == 0:
        raise ValidationError('至少需要一个阈值')
    reports = []
    for tau in thresholds:
        frames = [(binarize(m, tau), g) for m, g in zip(maps, gts)]
        reports.append((float(tau), dataset_eval(frames, beta2)))
    best = max(reports, key=lambda item: (item[1].mean_jaccard, -item[0]))
    return SweepReport(reports=reports, best_threshold=best[0])
