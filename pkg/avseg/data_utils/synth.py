"""
合成数据生成器：矩形/椭圆实例、发声与静音类别、音频嵌入以及渲染后的视觉帧

所有随机性都来自 SceneSpec.seed，同一个种子生成的样本逐位一致。
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger

from avseg.exceptions import InfeasibleSceneError
from avseg.mask.core import MaskShape, union_all
from avseg.matching.matcher import GroundTruthSegment

SHAPE_KINDS = ('rectangle', 'ellipse')
# 单个实例的放置尝试次数
PLACEMENT_ATTEMPTS = 100
SCENE_ATTEMPTS = 20


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    shape: MaskShape
    num_classes: int
    instance_count_range: Tuple[int, int] = (1, 2)
    sounding_count_range: Tuple[int, int] = (1, 1)
    shape_palette: Tuple[str, ...] = SHAPE_KINDS
    overlap_allowed: bool = False
    silent_reuse_prob: float = 0.5
    embedding_dim: int = 16
    embedding_noise: float = 0.1
    visual_noise: float = 0.1

    @classmethod
    def from_configs(cls, configs) -> "SceneSpec":
        d = configs.dataset_conf
        return cls(seed=int(configs.seed), shape=MaskShape(int(d.height), int(d.width)),
                   num_classes=int(d.num_classes),
                   instance_count_range=tuple(d.instance_count_range),
                   sounding_count_range=tuple(d.sounding_count_range),
                   shape_palette=tuple(d.shape_palette), overlap_allowed=bool(d.overlap_allowed),
                   silent_reuse_prob=float(d.silent_reuse_prob), embedding_dim=int(d.embedding_dim),
                   embedding_noise=float(d.embedding_noise), visual_noise=float(d.visual_noise))

    @property
    def channels(self) -> int:
        return self.num_classes + 1

    def check(self):
        lo, hi = self.instance_count_range
        s_lo, s_hi = self.sounding_count_range
        k = self.num_classes
        if not 1 <= lo <= hi:
            raise InfeasibleSceneError(f'实例数量范围非法：{self.instance_count_range}')
        if hi > k:
            raise InfeasibleSceneError(f'每个场景最多 {hi} 个实例，但只有 {k} 个类别')
        if not 1 <= s_lo <= s_hi:
            raise InfeasibleSceneError(f'发声实例数量范围非法：{self.sounding_count_range}')
        if s_lo > hi:
            raise InfeasibleSceneError(f'发声实例数量下限 {s_lo} 超过了实例数量上限')
        if self.embedding_dim < k:
            raise InfeasibleSceneError(f'嵌入维度 {self.embedding_dim} 小于类别数 {k}，无法构造正交基')
        if not self.shape_palette or any(s not in SHAPE_KINDS for s in self.shape_palette):
            raise InfeasibleSceneError(f'形状类型必须取自 {SHAPE_KINDS}')


@dataclass
class SyntheticSample:
    index: int
    # 只包含发声实例
    gts: List[GroundTruthSegment]
    # 发声 + 静音实例，只给测试用的 oracle 读取
    all_instances: List[GroundTruthSegment]
    audio_embedding: np.ndarray
    sounding_categories: Tuple[int, ...]
    M_gt: np.ndarray
    frame: np.ndarray
    silent_reused: bool = False

    @property
    def silent_categories(self) -> Tuple[int, ...]:
        return tuple(sorted({g.category for g in self.all_instances} - set(self.sounding_categories)))


@dataclass
class TrainingView:
    """训练器能看到的全部字段"""
    frame: np.ndarray
    gts: List[GroundTruthSegment]
    audio_embedding: np.ndarray
    M_gt: np.ndarray = field(repr=False)


def training_view(sample: SyntheticSample) -> TrainingView:
    return TrainingView(frame=sample.frame, gts=sample.gts, audio_embedding=sample.audio_embedding,
                        M_gt=sample.M_gt)


def category_basis(spec: SceneSpec) -> np.ndarray:
    """每个类别一个正交的嵌入基向量，返回 (K, D)"""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    q, _ = np.linalg.qr(rng.normal(size=(spec.embedding_dim, spec.embedding_dim)))
    return q[:, :spec.num_classes].T.copy()


def make_embedding(basis: np.ndarray, categories: Sequence[int], noise: float, rng) -> np.ndarray:
    emb = basis[list(categories)].sum(axis=0) if len(categories) else np.zeros(basis.shape[1])
    return emb + noise * rng.normal(size=basis.shape[1])


def _render(kind, shape: MaskShape, rng) -> np.ndarray:
    side = min(shape.height, shape.width)
    lo = max(1, side // 6)
    hi = max(lo, side // 2)
    h = int(rng.integers(lo, hi + 1))
    w = int(rng.integers(lo, hi + 1))
    top = int(rng.integers(0, shape.height - h + 1))
    left = int(rng.integers(0, shape.width - w + 1))
    mask = np.zeros((shape.height, shape.width), dtype=np.uint8)
    if kind == 'rectangle':
        mask[top:top + h, left:left + w] = 1
        return mask
    yy, xx = np.mgrid[0:shape.height, 0:shape.width]
    cy, cx = top + (h - 1) / 2.0, left + (w - 1) / 2.0
    ry, rx = max(h / 2.0, 0.5), max(w / 2.0, 0.5)
    mask[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = 1
    if not mask.any():
        mask[int(round(cy)), int(round(cx))] = 1
    return mask


def _place(spec: SceneSpec, count: int, rng) -> List[np.ndarray]:
    """放置 count 个实例，返回可见区域掩码(后放置的实例遮挡先放置的)"""
    for _ in range(SCENE_ATTEMPTS):
        masks = []
        occupied = np.zeros((spec.shape.height, spec.shape.width), dtype=bool)
        for _ in range(count):
            for _ in range(PLACEMENT_ATTEMPTS):
                kind = spec.shape_palette[int(rng.integers(len(spec.shape_palette)))]
                mask = _render(kind, spec.shape, rng)
                if spec.overlap_allowed or not (occupied & mask.astype(bool)).any():
                    break
            else:
                break
            masks.append(mask)
            occupied |= mask.astype(bool)
        if len(masks) < count:
            continue
        visible = []
        for i, m in enumerate(masks):
            later = masks[i + 1:]
            covered = union_all(later).astype(bool) if later else np.zeros_like(m, dtype=bool)
            visible.append((m.astype(bool) & ~covered).astype(np.uint8))
        if all(v.any() for v in visible):
            return visible
    raise InfeasibleSceneError(f'无法在 {spec.shape.height}x{spec.shape.width} 的画面中放置 {count} 个实例')


def render_frame(instances: Sequence[GroundTruthSegment], spec: SceneSpec, rng) -> np.ndarray:
    """视觉帧 (K+1, H, W)：第 0 通道为物体性，第 1+c 通道为类别 c 的外观"""
    frame = np.zeros((spec.channels, spec.shape.height, spec.shape.width))
    for inst in instances:
        frame[0] += inst.mask
        frame[1 + inst.category] += inst.mask
    np.clip(frame, 0.0, 1.0, out=frame)
    if spec.visual_noise > 0:
        frame += spec.visual_noise * rng.normal(size=frame.shape)
    return frame


def generate(spec: SceneSpec, count: int, stream: int = 0) -> List[SyntheticSample]:
    """生成合成样本

    :param spec: 场景设置
    :param count: 样本数量
    :param stream: 随机流编号，训练集与测试集使用不同的编号
    :return: SyntheticSample 列表
    """
    if count < 1:
        raise InfeasibleSceneError(f'样本数量必须大于 0，当前为 {count}')
    spec.check()
    basis = category_basis(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1 + stream]))
    k = spec.num_classes
    seen_sounding = set()
    samples = []
    for index in range(count):
        n_inst = int(rng.integers(spec.instance_count_range[0], spec.instance_count_range[1] + 1))
        n_inst = max(n_inst, spec.sounding_count_range[0])
        n_sound = int(rng.integers(spec.sounding_count_range[0], min(spec.sounding_count_range[1], n_inst) + 1))
        sounding = [int(c) for c in rng.choice(k, size=n_sound, replace=False)]
        used = set(sounding)
        silent, reused = [], False
        for _ in range(n_inst - n_sound):
            candidates = sorted(seen_sounding - used)
            if candidates and rng.random() < spec.silent_reuse_prob:
                category = int(candidates[int(rng.integers(len(candidates)))])
                reused = True
            else:
                remaining = sorted(set(range(k)) - used)
                category = int(remaining[int(rng.integers(len(remaining)))])
            silent.append(category)
            used.add(category)
        seen_sounding.update(sounding)
        masks = _place(spec, n_inst, rng)
        categories = sounding + silent
        all_instances = [GroundTruthSegment(category=c, mask=m) for c, m in zip(categories, masks)]
        gts = sorted(all_instances[:n_sound], key=lambda g: g.category)
        emb = make_embedding(basis, sounding, spec.embedding_noise, rng)
        frame = render_frame(all_instances, spec, rng)
        samples.append(SyntheticSample(index=index, gts=gts, all_instances=all_instances, audio_embedding=emb,
                                       sounding_categories=tuple(sorted(sounding)),
                                       M_gt=union_all([g.mask for g in gts]), frame=frame, silent_reused=reused))
    logger.debug(f'生成了 {count} 个合成样本，随机流：{stream}')
    return samples


def category_histogram(samples: Sequence[SyntheticSample], num_classes: int) -> np.ndarray:
    """发声类别的出现次数"""
    hist = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        for c in s.sounding_categories:
            hist[c] += 1
    return hist
