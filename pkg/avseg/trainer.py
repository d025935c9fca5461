import os
import time
from dataclasses import dataclass
from datetime import timedelta
from typing import Dict, List, Sequence

import numpy as np
import yaml
from loguru import logger
from tqdm import tqdm

from avseg.avsc.filters import potential_instances
from avseg.avsc.localization import category_masks, compose_batch, compose_batch_backward
from avseg.avsc.pipeline import highest_confidence_instance, infer
from avseg.data_utils.reader import export_ground_truth, export_predictions
from avseg.data_utils.synth import (SceneSpec, SyntheticSample, TrainingView, category_basis, generate,
                                    make_embedding, training_view)
from avseg.exceptions import TrainingDivergenceError, ValidationError
from avseg.loss import build_loss_weights
from avseg.loss.avc import avc_loss
from avseg.loss.base import LossWeights
from avseg.loss.set_losses import segmentation_loss
from avseg.mask.core import MaskShape
from avseg.matching.matcher import CostWeights, match
from avseg.metric.metrics import DatasetReport, dataset_eval
from avseg.models.toy import ToyModel, build_model
from avseg.utils.checkpoint import save_checkpoint
from avseg.utils.config import load_configs
from avseg.utils.serialization import write_embedding, write_pgm, write_sasl
from avseg.utils.utils import print_arguments, to_plain

BATCH_MODES = ('full_batch', 'per_sample')
DEFAULT_VARIANTS = ({'name': 'full'}, {'name': 'no_soas', 'lambda_soas': 0.0}, {'name': 'no_avsc', 'use_avsc': False})


def _check_schedule(lr, steps, batch_mode):
    if not lr > 0:
        raise ValidationError(f'学习率必须大于 0，当前为 {lr}')
    if steps < 0:
        raise ValidationError(f'训练步数不能为负数，当前为 {steps}')
    if batch_mode not in BATCH_MODES:
        raise ValidationError(f'batch_mode 必须是 {BATCH_MODES} 之一')


def _batches(views, steps, batch_mode):
    for step in range(steps):
        if batch_mode == 'full_batch':
            yield step, list(range(len(views)))
        else:
            yield step, [step % len(views)]


def _log_progress(stage, step, steps, start, values):
    used = time.time() - start
    eta = str(timedelta(seconds=int(used / (step + 1) * (steps - step - 1))))
    terms = ', '.join(f'{k}: {v:.5f}' for k, v in values.items())
    logger.info(f'Train stage{stage}: [{step + 1}/{steps}], {terms}, eta: {eta}')


def train_stage1(model: ToyModel, views: Sequence[TrainingView], weights: LossWeights, lr: float, steps: int,
                 batch_mode='full_batch', log_interval=50, show_progress=False):
    """第一阶段：只训练查询解码器(音频头冻结)，每一步重新计算匹配

    :return: (训练后的模型副本, 训练轨迹)
    """
    _check_schedule(lr, steps, batch_mode)
    model = model.copy()
    if steps == 0:
        return model, []
    if len(views) == 0:
        raise ValidationError('训练样本为空')
    cost_weights = CostWeights.from_loss_weights(weights)
    trace = []
    start = time.time()
    for step, batch in tqdm(_batches(views, steps, batch_mode), total=steps, desc='第一阶段训练',
                            disable=not show_progress):
        totals = {'mask_cls': 0.0, 'soas': 0.0, 'total': 0.0}
        grads = None
        for index in batch:
            view = views[index]
            outputs = model.forward(view.frame)
            preds = model.predictions(view.frame, outputs)
            sigma = match(preds, view.gts, cost_weights)
            loss = segmentation_loss(preds, view.gts, sigma, weights)
            sample_grads = model.backward(view.frame, outputs, loss.grads['mask_logits'], loss.grads['class_logits'])
            grads = sample_grads if grads is None else {k: grads[k] + sample_grads[k] for k in grads}
            totals['mask_cls'] += loss.terms['mask_cls']
            totals['soas'] += loss.terms['soas']
            totals['total'] += loss.value
        totals = {k: v / len(batch) for k, v in totals.items()}
        if not np.isfinite(totals['total']):
            raise TrainingDivergenceError(f'第一阶段第 {step} 步损失值非有限：{totals}')
        model.apply_gradients({k: v / len(batch) for k, v in grads.items()}, lr)
        trace.append({'step': step, 'stage': 1, **totals})
        if step % log_interval == 0 or step == steps - 1:
            _log_progress(1, step, steps, start, totals)
    return model, trace


@dataclass
class _Stage2Data:
    masks: np.ndarray
    targets: np.ndarray
    embeddings: np.ndarray


def _stage2_data(model: ToyModel, views: Sequence[TrainingView], mask_threshold: float) -> _Stage2Data:
    """解码器冻结后，潜在实例掩码在第二阶段保持不变，预先计算"""
    masks, targets = [], []
    for view in views:
        shape = MaskShape.of(view.M_gt)
        instances = potential_instances(model.predictions(view.frame), mask_threshold)
        masks.append(category_masks(instances, model.num_classes, shape))
        targets.append(view.M_gt.reshape(-1).astype(np.float64))
    return _Stage2Data(np.stack(masks), np.stack(targets), np.stack([v.audio_embedding for v in views]))


def train_stage2(model: ToyModel, views: Sequence[TrainingView], weights: LossWeights, lr: float, steps: int,
                 batch_mode='full_batch', log_interval=50, mask_threshold=0.5, show_progress=False):
    """第二阶段：只训练音频头，梯度经过 S_asl 的合成进入 L_avc

    :return: (训练后的模型副本, 训练轨迹)
    """
    _check_schedule(lr, steps, batch_mode)
    model = model.copy()
    if steps == 0:
        return model, []
    if len(views) == 0:
        raise ValidationError('训练样本为空')
    data = _stage2_data(model, views, mask_threshold)
    head = model.head
    trace = []
    start = time.time()
    for step, batch in tqdm(_batches(views, steps, batch_mode), total=steps, desc='第二阶段训练',
                            disable=not show_progress):
        masks, targets = data.masks[batch], data.targets[batch]
        probs, cache = head.forward(data.embeddings[batch], return_cache=True)
        S, active = compose_batch(masks, probs)
        loss = avc_loss(S, targets, weights.eps)
        if not np.isfinite(loss.value):
            raise TrainingDivergenceError(f'第二阶段第 {step} 步损失值非有限：{loss.value}')
        grads = head.backward(cache, compose_batch_backward(masks, active, loss.grads['S']))
        for i in range(len(head.weights)):
            head.weights[i] -= lr * grads['weights'][i]
            head.biases[i] -= lr * grads['biases'][i]
        trace.append({'step': step, 'stage': 2, 'avc': loss.value})
        if step % log_interval == 0 or step == steps - 1:
            _log_progress(2, step, steps, start, {'avc': loss.value})
    return model, trace


@dataclass
class EvaluationResult:
    report: DatasetReport
    # 所有测试帧上非空潜在实例的数量之和
    instance_count: int


def evaluate_model(model: ToyModel, samples: Sequence[SyntheticSample], mask_threshold=0.5, decision_threshold=0.5,
                   use_avsc=True, embeddings=None, targets=None) -> EvaluationResult:
    """在测试样本上推理并评估

    :param embeddings: 替换的音频嵌入，None 时使用样本自带的嵌入
    :param targets: 替换的真值掩码，None 时使用 M_gt
    """
    frames, instance_count = [], 0
    for i, sample in enumerate(samples):
        preds = model.predictions(sample.frame)
        instance_count += sum(1 for inst in potential_instances(preds, mask_threshold) if inst.mask.any())
        if use_avsc:
            emb = sample.audio_embedding if embeddings is None else embeddings[i]
            _, mask = infer(preds, model.head, emb, mask_threshold, decision_threshold)
        else:
            mask = highest_confidence_instance(preds, mask_threshold)
        frames.append((mask, sample.M_gt if targets is None else targets[i]))
    return EvaluationResult(dataset_eval(frames), instance_count)


def save_trace(path, trace: List[Dict]):
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(to_plain(trace), f, sort_keys=False)
    logger.info(f'训练轨迹已保存：{path}')


class ToyTrainer(object):
    def __init__(self, configs=None):
        """玩具两阶段训练工具类

        :param configs: 配置文件路径、配置字典或 None(使用默认配置)
        """
        self.configs = load_configs(configs)
        print_arguments(configs=self.configs)
        self.spec = SceneSpec.from_configs(self.configs)
        self.weights = build_loss_weights(self.configs)
        self.train_samples = None
        self.test_samples = None
        self.model = None
        self.trace = []

    def setup_data(self):
        if self.train_samples is None:
            d = self.configs.dataset_conf
            self.train_samples = generate(self.spec, int(d.train_samples), stream=0)
            self.test_samples = generate(self.spec, int(d.test_samples), stream=1)
            logger.info(f'训练数据：{len(self.train_samples)}，测试数据：{len(self.test_samples)}')
        return self.train_samples, self.test_samples

    def init_model(self) -> ToyModel:
        rng = np.random.default_rng(np.random.SeedSequence([int(self.configs.seed), 100]))
        return build_model(self.configs, rng)

    def train_stage1(self, model: ToyModel, weights: LossWeights = None, show_progress=False):
        opt = self.configs.optimizer_conf
        views = [training_view(s) for s in self.setup_data()[0]]
        return train_stage1(model, views, weights or self.weights, float(opt.stage1_lr), int(opt.stage1_steps),
                            opt.batch_mode, int(self.configs.train_conf.log_interval), show_progress)

    def train_stage2(self, model: ToyModel, weights: LossWeights = None, show_progress=False):
        opt = self.configs.optimizer_conf
        views = [training_view(s) for s in self.setup_data()[0]]
        return train_stage2(model, views, weights or self.weights, float(opt.stage2_lr), int(opt.stage2_steps),
                            opt.batch_mode, int(self.configs.train_conf.log_interval),
                            float(self.configs.infer_conf.mask_threshold), show_progress)

    def train(self, save_model_path=None, trace_path=None, export_dir=None, show_progress=False) -> DatasetReport:
        """两阶段训练，完成后在测试集上评估

        :param save_model_path: AVSM 模型保存路径
        :param trace_path: 训练轨迹保存路径
        :param export_dir: 导出测试集预测、真值和嵌入的目录
        :return: 测试集 DatasetReport
        """
        self.setup_data()
        start = time.time()
        model, trace1 = self.train_stage1(self.init_model(), show_progress=show_progress)
        model, trace2 = self.train_stage2(model, show_progress=show_progress)
        self.model, self.trace = model, trace1 + trace2
        logger.info('=' * 70)
        result = self.evaluate()
        logger.info(f'训练耗时：{timedelta(seconds=int(time.time() - start))}，'
                    f'mean J: {result.report.mean_jaccard:.5f}, mean F: {result.report.mean_fscore:.5f}')
        logger.info('=' * 70)
        if save_model_path:
            save_checkpoint(save_model_path, model)
        if trace_path:
            save_trace(trace_path, self.trace)
        if export_dir:
            self.export(export_dir)
        return result.report

    def _require_model(self):
        if self.model is None:
            raise ValidationError('模型还没有训练或加载')
        return self.model

    def evaluate(self, use_avsc=None) -> EvaluationResult:
        infer_conf = self.configs.infer_conf
        use_avsc = bool(infer_conf.use_avsc) if use_avsc is None else use_avsc
        return evaluate_model(self._require_model(), self.setup_data()[1], float(infer_conf.mask_threshold),
                              float(infer_conf.decision_threshold), use_avsc)

    def robustness(self) -> Dict[str, DatasetReport]:
        """替换音频后的鲁棒性评估：静音、不匹配的音频以及原始音频"""
        model = self._require_model()
        samples = self.setup_data()[1]
        infer_conf = self.configs.infer_conf
        basis = category_basis(self.spec)
        rng = np.random.default_rng(np.random.SeedSequence([int(self.configs.seed), 200]))
        empty = [np.zeros_like(s.M_gt) for s in samples]
        silent = [np.zeros(self.spec.embedding_dim) for _ in samples]
        unmatching = []
        for s in samples:
            visible = {g.category for g in s.all_instances}
            absent = [c for c in range(self.spec.num_classes) if c not in visible]
            if not absent:
                absent = [c for c in range(self.spec.num_classes) if c not in s.sounding_categories]
            count = min(len(s.sounding_categories), len(absent))
            chosen = [int(c) for c in rng.choice(absent, size=count, replace=False)] if count else []
            unmatching.append(make_embedding(basis, chosen, self.spec.embedding_noise, rng))
        kwargs = dict(mask_threshold=float(infer_conf.mask_threshold),
                      decision_threshold=float(infer_conf.decision_threshold))
        reports = {
            'silent': evaluate_model(model, samples, embeddings=silent, targets=empty, **kwargs).report,
            'unmatching': evaluate_model(model, samples, embeddings=unmatching, targets=empty, **kwargs).report,
            'original': evaluate_model(model, samples, **kwargs).report,
        }
        for name, report in reports.items():
            logger.info(f'{name}: RA: {report.recognition_accuracy}, silent mIoU: {report.silent_miou}, '
                        f'mean J: {report.mean_jaccard:.5f}')
        return reports

    def ablate(self, variants=DEFAULT_VARIANTS, show_progress=False) -> Dict[str, Dict]:
        """消融实验：每个变体使用相同的数据和初始化，只改变被消融的部分

        :param variants: 变体列表，每项包含 name 以及可选的 lambda_soas、use_avsc
        :return: {name: {mean_jaccard, mean_fscore, instance_count}}
        """
        if len(variants) < 2:
            raise ValidationError('消融实验至少需要两个变体')
        names = [v['name'] for v in variants]
        if len(set(names)) != len(names):
            raise ValidationError(f'变体名称重复：{names}')
        self.setup_data()
        trained = {}
        results = {}
        for variant in variants:
            unknown = set(variant) - {'name', 'lambda_soas', 'use_avsc'}
            if unknown:
                raise ValidationError(f'变体 {variant["name"]} 包含未知字段：{sorted(unknown)}')
            lambda_soas = float(variant.get('lambda_soas', self.weights.lambda_soas))
            use_avsc = bool(variant.get('use_avsc', self.configs.infer_conf.use_avsc))
            if lambda_soas not in trained:
                logger.info(f'开始训练消融变体：{variant["name"]}')
                weights = self.weights.replace(lambda_soas=lambda_soas)
                model, _ = self.train_stage1(self.init_model(), weights, show_progress)
                model, _ = self.train_stage2(model, weights, show_progress)
                trained[lambda_soas] = model
            self.model = trained[lambda_soas]
            result = self.evaluate(use_avsc=use_avsc)
            results[variant['name']] = {'mean_jaccard': result.report.mean_jaccard,
                                        'mean_fscore': result.report.mean_fscore,
                                        'instance_count': result.instance_count}
            logger.info(f'{variant["name"]}: {results[variant["name"]]}')
        return results

    def export(self, directory):
        """导出测试集的查询预测清单、真值清单、音频嵌入、定位图和最终掩码"""
        model = self._require_model()
        infer_conf = self.configs.infer_conf
        frames_dir = os.path.join(directory, 'frames')
        for name in ('pred_masks', 'gt_masks', 'maps'):
            os.makedirs(os.path.join(directory, name), exist_ok=True)
        for sample in tqdm(self.setup_data()[1], desc='导出测试集'):
            stem = f'{sample.index:04d}'
            preds = model.predictions(sample.frame)
            export_predictions(frames_dir, stem, preds)
            export_ground_truth(frames_dir, stem, sample.gts, self.spec.num_classes)
            write_embedding(os.path.join(frames_dir, f'{stem}_emb.yml'), sample.audio_embedding)
            S, mask = infer(preds, model.head, sample.audio_embedding, float(infer_conf.mask_threshold),
                            float(infer_conf.decision_threshold))
            write_sasl(os.path.join(directory, 'maps', f'{stem}.sasl'), S)
            write_pgm(os.path.join(directory, 'pred_masks', f'{stem}.pgm'), mask)
            write_pgm(os.path.join(directory, 'gt_masks', f'{stem}.pgm'), sample.M_gt)
        save_checkpoint(os.path.join(directory, 'model.avsm'), model)
        logger.info(f'测试集已导出到：{directory}')
