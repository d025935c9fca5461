"""
avseg 命令行工具入口

退出码：0 成功，1 输入校验失败，2 内部错误。结果以 YAML 输出到标准输出，日志输出到标准错误。
"""
import argparse
import os
import sys

import numpy as np
import yaml
from loguru import logger

from avseg.avsc.audio_head import audio_forward
from avseg.avsc.filters import potential_instances
from avseg.avsc.pipeline import infer, instance_sounding_masks
from avseg.data_utils.reader import GroundTruthManifest, PredictionManifest, export_ground_truth, parse_manifest
from avseg.data_utils.synth import SceneSpec, generate
from avseg.exceptions import ManifestError, ValidationError
from avseg.loss import build_loss_weights
from avseg.loss.avc import avc_loss
from avseg.loss.set_losses import segmentation_loss
from avseg.matching.matcher import CostWeights, match
from avseg.metric.metrics import SWEEP_THRESHOLDS, dataset_eval, threshold_sweep
from avseg.trainer import DEFAULT_VARIANTS, ToyTrainer
from avseg.utils.checkpoint import load_head
from avseg.utils.config import load_configs
from avseg.utils.gradcheck import GRAD_TOLERANCE, run_gradcheck
from avseg.utils.serialization import (read_embedding, read_mask_file, read_pgm, write_embedding, write_pgm,
                                       write_sasl)
from avseg.utils.utils import to_plain

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2


class _UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f'{self.prog}: 错误: {message}', file=sys.stderr)
        raise _UsageError(message)


def _emit(result):
    print(yaml.safe_dump(to_plain(result), allow_unicode=True, sort_keys=False), end='')


def _expect(manifest, kind, path):
    if not isinstance(manifest, kind):
        raise ManifestError(f'{path} 的清单类型错误，需要 {kind.__name__}')
    return manifest


def cmd_gradcheck(args):
    errors = run_gradcheck(seed=args.seed, trials=args.trials)
    passed = all(err < GRAD_TOLERANCE for err in errors.values())
    _emit({'max_relative_error': errors, 'tolerance': GRAD_TOLERANCE, 'passed': passed})
    if not passed:
        logger.error(f'梯度检查未通过：{errors}')
    return EXIT_OK if passed else EXIT_INVALID


def cmd_match(args):
    configs = load_configs(args.configs)
    preds = _expect(parse_manifest(args.pred), PredictionManifest, args.pred).predictions
    gts = _expect(parse_manifest(args.gt), GroundTruthManifest, args.gt).segments
    sigma = match(preds, gts, CostWeights.from_loss_weights(build_loss_weights(configs)))
    _emit({'pairs': [{'gt': g, 'prediction': p} for g, p in sigma.pairs], 'unmatched': sigma.unmatched,
           'total_cost': sigma.total_cost})
    return EXIT_OK


def cmd_loss(args):
    configs = load_configs(args.configs)
    weights = build_loss_weights(configs)
    preds = _expect(parse_manifest(args.pred), PredictionManifest, args.pred).predictions
    gts = _expect(parse_manifest(args.gt), GroundTruthManifest, args.gt).segments
    sigma = match(preds, gts, CostWeights.from_loss_weights(weights))
    loss = segmentation_loss(preds, gts, sigma, weights)
    result = {'segmentation': loss.value, 'mask_cls': loss.terms.get('mask_cls', 0.0),
              'soas': loss.terms.get('soas', 0.0), 'no_foreground': loss.no_foreground}
    if args.map or args.target:
        if not (args.map and args.target):
            raise ValidationError('计算 L_avc 需要同时提供 --map 和 --target')
        result['avc'] = avc_loss(read_mask_file(args.map), read_pgm(args.target), weights.eps).value
    if args.grad_dir and 'masks' in loss.grads:
        os.makedirs(args.grad_dir, exist_ok=True)
        for i, grad in enumerate(loss.grads['masks']):
            write_sasl(os.path.join(args.grad_dir, f'q{i}_grad.sasl'), grad)
        result['grad_dir'] = args.grad_dir
    _emit(result)
    return EXIT_OK


def cmd_infer(args):
    configs = load_configs(args.configs)
    infer_conf = configs.infer_conf
    preds = _expect(parse_manifest(args.pred), PredictionManifest, args.pred).predictions
    head = load_head(args.model)
    emb = read_embedding(args.emb)
    threshold = float(infer_conf.mask_threshold) if args.threshold is None else args.threshold
    decision = float(infer_conf.decision_threshold) if args.decision_threshold is None else args.decision_threshold
    S, mask = infer(preds, head, emb, threshold, decision)
    write_sasl(args.out_map, S)
    write_pgm(args.out_mask, mask)
    audio = audio_forward(head, emb)
    sounding = instance_sounding_masks(potential_instances(preds, threshold), audio, decision)
    _emit({'audio_distribution': audio, 'sounding_instances': [
        {'category': inst.category, 'query': inst.source_index, 'area': int(inst.mask.sum())} for inst in sounding],
        'map': args.out_map, 'mask': args.out_mask, 'mask_area': int(mask.sum())})
    return EXIT_OK


def _paired_files(pred_dir, gt_dir):
    for d in (pred_dir, gt_dir):
        if not os.path.isdir(d):
            raise ValidationError(f'目录不存在：{d}')
    gts = {os.path.splitext(f)[0]: f for f in sorted(os.listdir(gt_dir)) if f.lower().endswith('.pgm')}
    preds = {os.path.splitext(f)[0]: f for f in sorted(os.listdir(pred_dir))
             if f.lower().endswith(('.pgm', '.sasl'))}
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValidationError(f'以下真值缺少对应的预测：{missing[:5]}')
    if not gts:
        raise ValidationError(f'{gt_dir} 中没有 PGM 真值')
    names = sorted(gts)
    return [(os.path.join(pred_dir, preds[n]), os.path.join(gt_dir, gts[n])) for n in names]


def cmd_eval(args):
    pairs = _paired_files(args.pred, args.gt)
    preds = [read_mask_file(p) for p, _ in pairs]
    gts = [read_pgm(g) for _, g in pairs]
    if args.thresholds:
        sweep = threshold_sweep(preds, gts, args.thresholds, args.beta2)
        result = {'sweep': [{'threshold': tau, 'report': report} for tau, report in sweep.reports],
                  'tau': sweep.best_threshold}
    else:
        frames = [((p >= 0.5).astype(np.uint8), g) for p, g in zip(preds, gts)]
        result = dataset_eval(frames, args.beta2)
    if args.output:
        with open(args.output, 'w', encoding='utf-8') as f:
            yaml.safe_dump(to_plain(result), f, allow_unicode=True, sort_keys=False)
    _emit(result)
    return EXIT_OK


def cmd_synth_gen(args):
    configs = load_configs(args.configs)
    spec = SceneSpec.from_configs(configs)
    samples = generate(spec, args.count, stream=args.stream)
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for s in samples:
        stem = f'{s.index:04d}'
        export_ground_truth(args.out, stem, s.gts, spec.num_classes)
        write_embedding(os.path.join(args.out, f'{stem}_emb.yml'), s.audio_embedding)
        write_pgm(os.path.join(args.out, f'{stem}_union.pgm'), s.M_gt)
        np.save(os.path.join(args.out, f'{stem}_frame.npy'), s.frame)
        summary.append({'index': s.index, 'sounding': list(s.sounding_categories),
                        'silent': list(s.silent_categories), 'silent_reused': s.silent_reused})
    with open(os.path.join(args.out, 'samples.yml'), 'w', encoding='utf-8') as f:
        yaml.safe_dump(summary, f, sort_keys=False)
    _emit({'count': len(samples), 'output': args.out})
    return EXIT_OK


def cmd_train(args):
    trainer = ToyTrainer(args.configs)
    report = trainer.train(save_model_path=args.save_model, trace_path=args.trace, export_dir=args.export,
                           show_progress=args.progress)
    result = {'test': report}
    if args.robustness:
        result['robustness'] = trainer.robustness()
    _emit(result)
    return EXIT_OK


def cmd_ablate(args):
    known = {v['name']: v for v in DEFAULT_VARIANTS}
    unknown = [v for v in args.variants if v not in known]
    if unknown:
        raise ValidationError(f'未知的消融变体：{unknown}，可选：{sorted(known)}')
    trainer = ToyTrainer(args.configs)
    _emit(trainer.ablate([known[v] for v in args.variants], show_progress=args.progress))
    return EXIT_OK


def build_parser():
    parser = ArgumentParser(prog='avseg', description='avseg - 音视频实例感知分割工具')
    parser.add_argument('-v', '--verbose', action='store_true', help='显示详细日志')
    subparsers = parser.add_subparsers(dest='command', help='命令', parser_class=ArgumentParser)

    p = subparsers.add_parser('gradcheck', help='对比解析梯度与有限差分')
    p.add_argument('--seed', type=int, default=0, help='随机种子')
    p.add_argument('--trials', type=int, default=20, help='每种损失的随机实例数')
    p.set_defaults(func=cmd_gradcheck)

    for name, func, text in (('match', cmd_match, '预测与真值的二分匹配'), ('loss', cmd_loss, '计算分割损失')):
        p = subparsers.add_parser(name, help=text)
        p.add_argument('--pred', required=True, help='预测清单')
        p.add_argument('--gt', required=True, help='真值清单')
        p.add_argument('--configs', default=None, help='配置文件')
        if name == 'loss':
            p.add_argument('--map', default=None, help='定位图(SASL)，与 --target 一起计算 L_avc')
            p.add_argument('--target', default=None, help='真值发声掩码(PGM)')
            p.add_argument('--grad-dir', default=None, help='把每个查询的软掩码梯度保存为 SASL 的目录')
        p.set_defaults(func=func)

    p = subparsers.add_parser('infer', help='AVSC 推理')
    p.add_argument('--pred', required=True, help='预测清单')
    p.add_argument('--emb', required=True, help='音频嵌入文件')
    p.add_argument('--model', required=True, help='AVSM 模型文件')
    p.add_argument('--configs', default=None, help='配置文件')
    p.add_argument('--threshold', type=float, default=None, help='潜在实例掩码的二值化阈值')
    p.add_argument('--decision-threshold', type=float, default=None, help='定位图的决策阈值')
    p.add_argument('--out-map', required=True, help='输出定位图(SASL)')
    p.add_argument('--out-mask', required=True, help='输出发声掩码(PGM)')
    p.set_defaults(func=cmd_infer)

    p = subparsers.add_parser('eval', help='评估预测掩码')
    p.add_argument('--pred', required=True, help='预测掩码目录(PGM 或 SASL)')
    p.add_argument('--gt', required=True, help='真值掩码目录(PGM)')
    p.add_argument('--beta2', type=float, default=0.3, help='F-score 的 β²')
    p.add_argument('--thresholds', type=float, nargs='*', default=None,
                   help=f'对软定位图扫描的阈值，例如 {" ".join(str(t) for t in SWEEP_THRESHOLDS)}')
    p.add_argument('--output', default=None, help='评估报告保存路径')
    p.set_defaults(func=cmd_eval)

    p = subparsers.add_parser('synth-gen', help='生成合成数据')
    p.add_argument('--configs', default=None, help='配置文件')
    p.add_argument('--count', type=int, required=True, help='样本数量')
    p.add_argument('--stream', type=int, default=0, help='随机流编号')
    p.add_argument('--out', required=True, help='输出目录')
    p.set_defaults(func=cmd_synth_gen)

    p = subparsers.add_parser('train', help='两阶段训练玩具模型')
    p.add_argument('--configs', default=None, help='配置文件')
    p.add_argument('--save-model', default=None, help='AVSM 模型保存路径')
    p.add_argument('--trace', default=None, help='训练轨迹保存路径')
    p.add_argument('--export', default=None, help='导出测试集产物的目录')
    p.add_argument('--robustness', action='store_true', help='额外评估静音和不匹配音频')
    p.add_argument('--progress', action='store_true', help='显示进度条')
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser('ablate', help='消融实验')
    p.add_argument('--configs', default=None, help='配置文件')
    p.add_argument('--variants', nargs='+', default=[v['name'] for v in DEFAULT_VARIANTS], help='消融变体')
    p.add_argument('--progress', action='store_true', help='显示进度条')
    p.set_defaults(func=cmd_ablate)
    return parser


def run(argv=None) -> int:
    """解析参数并执行子命令，返回退出码"""
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    logger.remove()
    logger.add(sys.stderr, level='DEBUG' if args.verbose else 'INFO')
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error(f'{type(e).__name__}: {e}')
        return EXIT_INVALID
    except Exception as e:
        logger.error(f'内部错误 {type(e).__name__}: {e}')
        return EXIT_INTERNAL


def main():
    """命令行工具主函数"""
    sys.exit(run())


if __name__ == '__main__':
    main()
