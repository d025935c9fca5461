"""
预测查询与真值片段之间的二分匹配

代价沿用 MaskFormer 的约定：-p[c_gt] + λ_f·focal + λ_d·dice，
匈牙利算法求解 N_gt×N 的矩形指派问题。
"""
import itertools
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from avseg.exceptions import CategoryError, MatchingError, ShapeMismatchError, SimplexViolationError
from avseg.mask.core import as_binary_mask, as_soft_mask, area

SIMPLEX_TOL = 1e-6


def validate_class_scores(probs) -> np.ndarray:
    """K+1 维类别分数，最后一维是 no-object 类"""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 2:
        raise SimplexViolationError(f'类别分数必须是长度至少为 2 的向量，当前形状：{probs.shape}')
    if not np.isfinite(probs).all() or probs.min() < 0.0 or probs.max() > 1.0:
        raise SimplexViolationError('类别分数的每一项必须位于 [0, 1]')
    if abs(probs.sum() - 1.0) > SIMPLEX_TOL:
        raise SimplexViolationError(f'类别分数之和为 {probs.sum():.8f}，不在单纯形上')
    return probs


@dataclass
class InstancePrediction:
    scores: np.ndarray
    mask: np.ndarray

    @classmethod
    def create(cls, scores, mask) -> "InstancePrediction":
        return cls(validate_class_scores(scores), as_soft_mask(mask))

    @property
    def num_classes(self) -> int:
        """真实类别数 K(不含 no-object)"""
        return self.scores.size - 1


@dataclass
class GroundTruthSegment:
    category: int
    mask: np.ndarray

    @classmethod
    def create(cls, category, mask, num_classes=None) -> "GroundTruthSegment":
        mask = as_binary_mask(mask)
        if isinstance(category, bool) or not isinstance(category, (int, np.integer)) or category < 0:
            raise CategoryError(f'真值类别必须是非负整数，当前为 {category!r}')
        if num_classes is not None and category >= num_classes:
            raise CategoryError(f'真值类别 {category} 超出范围 [0, {num_classes - 1}]')
        if area(mask) == 0:
            raise CategoryError(f'类别 {category} 的真值掩码为空')
        return cls(int(category), mask)


@dataclass(frozen=True)
class CostWeights:
    class_weight: float = 1.0
    focal_weight: float = 20.0
    dice_weight: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.25
    eps: float = 1e-6

    @classmethod
    def from_loss_weights(cls, w) -> "CostWeights":
        return cls(class_weight=1.0, focal_weight=w.lambda_focal, dice_weight=w.lambda_dice,
                   gamma=w.gamma, alpha=w.alpha, eps=w.eps)


@dataclass
class MatchingIndex:
    # (gt_index, prediction_index)，按 gt 下标排序
    pairs: List[Tuple[int, int]]
    unmatched: List[int]
    total_cost: float = 0.0
    num_predictions: int = field(default=0, repr=False)

    def prediction_for(self, gt_index: int) -> int:
        return dict(self.pairs)[gt_index]

    def validate(self, num_predictions: int, num_gts: int):
        gt_ids = [g for g, _ in self.pairs]
        pred_ids = [p for _, p in self.pairs]
        if sorted(gt_ids) != list(range(num_gts)):
            raise MatchingError(f'匹配结果必须覆盖全部 {num_gts} 个真值')
        if len(set(pred_ids)) != len(pred_ids):
            raise MatchingError('同一个预测被匹配了多次')
        covered = sorted(pred_ids + list(self.unmatched))
        if covered != list(range(num_predictions)):
            raise MatchingError(f'匹配与未匹配集合必须恰好覆盖 {num_predictions} 个预测')


def _check_inputs(preds: Sequence[InstancePrediction], gts: Sequence[GroundTruthSegment]):
    if len(gts) > 0 and len(preds) == 0:
        raise MatchingError('存在真值但预测列表为空')
    if len(preds) < len(gts):
        raise MatchingError(f'预测数量 N={len(preds)} 小于真值数量 N_gt={len(gts)}')
    shapes = {p.mask.shape for p in preds} | {g.mask.shape for g in gts}
    if len(shapes) > 1:
        raise ShapeMismatchError(f'掩码尺寸不一致：{sorted(shapes)}')
    for g in gts:
        for p in preds[:1]:
            if g.category >= p.num_classes:
                raise CategoryError(f'真值类别 {g.category} 超出预测的类别数 {p.num_classes}')


def pair_cost(pred: InstancePrediction, gt: GroundTruthSegment, weights: CostWeights = CostWeights()) -> float:
    """单个预测与单个真值的匹配代价"""
    from avseg.loss.mask_losses import focal_loss, dice_loss
    if pred.mask.shape != gt.mask.shape:
        raise ShapeMismatchError(f'掩码尺寸不一致：{pred.mask.shape} vs {gt.mask.shape}')
    if not 0 <= gt.category < pred.num_classes:
        raise CategoryError(f'真值类别 {gt.category} 超出范围 [0, {pred.num_classes - 1}]')
    focal = focal_loss(pred.mask, gt.mask, weights.gamma, weights.alpha, weights.eps).value
    dice = dice_loss(pred.mask, gt.mask, weights.eps).value
    return (-weights.class_weight * float(pred.scores[gt.category])
            + weights.focal_weight * focal + weights.dice_weight * dice)


def cost_matrix(preds: Sequence[InstancePrediction], gts: Sequence[GroundTruthSegment],
                weights: CostWeights = CostWeights()) -> np.ndarray:
    """向量化计算 N_gt×N 的代价矩阵，逐项与 pair_cost 一致"""
    if len(gts) == 0:
        return np.zeros((0, len(preds)))
    eps, gamma, alpha = weights.eps, weights.gamma, weights.alpha
    probs = np.stack([p.scores for p in preds])
    soft = np.stack([p.mask.reshape(-1) for p in preds])
    target = np.stack([g.mask.reshape(-1) for g in gts]).astype(np.float64)
    n_pixels = soft.shape[1]

    p = np.clip(soft, eps, 1.0 - eps)
    # 每个像素作为正样本/负样本时的 focal 项
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p ** gamma * np.log(1.0 - p)
    focal = (target @ pos.T + (1.0 - target) @ neg.T) / n_pixels

    inter = target @ soft.T
    total = target.sum(axis=1)[:, None] + soft.sum(axis=1)[None, :]
    dice = 1.0 - (2.0 * inter + eps) / (total + eps)

    cls_cost = -probs[:, [g.category for g in gts]].T
    return weights.class_weight * cls_cost + weights.focal_weight * focal + weights.dice_weight * dice


def _assignment_cost(cost: np.ndarray, cols) -> float:
    return float(sum(cost[j, i] for j, i in enumerate(cols)))


def _canonical_assignment(cost: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """在所有最优解中选出字典序最小的一个(预测下标小者优先，其次真值下标小者优先)

    逐行固定前缀，只需尝试比当前解更小的列；若强制该列后总代价不变，则采用新解。
    """
    best = _assignment_cost(cost, cols)
    tol = 1e-9 * max(1.0, abs(best))
    cols = np.array(cols, dtype=np.int64)
    row_min = cost.min(axis=1)
    for j in range(cost.shape[0]):
        # 下界：已固定前缀 + 当前候选 + 其余各行的最小值
        prefix = float(cost[np.arange(j), cols[:j]].sum())
        bound = prefix + cost[j] + row_min[j + 1:].sum()
        for i in np.nonzero(bound[:cols[j]] <= best + tol)[0]:
            if i in cols[:j]:
                continue
            trial = cost.copy()
            for gj, gi in list(enumerate(cols[:j])) + [(j, i)]:
                keep = trial[gj, gi]
                trial[gj, :] = np.inf
                trial[:, gi] = np.inf
                trial[gj, gi] = keep
            try:
                rows, trial_cols = linear_sum_assignment(trial)
            except ValueError:
                continue
            trial_cols = trial_cols[np.argsort(rows)]
            if _assignment_cost(cost, trial_cols) - best <= tol:
                cols = trial_cols.astype(np.int64)
                break
    return cols


def solve_assignment(cost: np.ndarray) -> np.ndarray:
    """返回每个真值(行)对应的预测(列)下标，并列最优时取字典序最小者"""
    if cost.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    rows, cols = linear_sum_assignment(cost)
    return _canonical_assignment(cost, cols[np.argsort(rows)])


def match(preds: Sequence[InstancePrediction], gts: Sequence[GroundTruthSegment],
          weights: CostWeights = CostWeights()) -> MatchingIndex:
    """二分匹配，得到匹配索引 σ

    :param preds: N 个预测实例
    :param gts: N_gt 个真值片段，要求 N >= N_gt
    :param weights: 代价权重
    :return: MatchingIndex
    """
    _check_inputs(preds, gts)
    cost = cost_matrix(preds, gts, weights)
    cols = solve_assignment(cost)
    pairs = [(j, int(i)) for j, i in enumerate(cols)]
    matched = set(int(i) for i in cols)
    unmatched = [i for i in range(len(preds)) if i not in matched]
    return MatchingIndex(pairs=pairs, unmatched=unmatched, total_cost=_assignment_cost(cost, cols),
                         num_predictions=len(preds))


def brute_force_match(cost: np.ndarray) -> Tuple[float, Tuple[int, ...]]:
    """穷举所有单射，返回最小总代价与对应的列下标，仅用于小规模校验"""
    n_gt, n = cost.shape
    best_cost, best_cols = np.inf, ()
    for cols in itertools.permutations(range(n), n_gt):
        total = _assignment_cost(cost, cols)
        if total < best_cost:
            best_cost, best_cols = total, cols
    return (0.0 if n_gt == 0 else best_cost), best_cols
