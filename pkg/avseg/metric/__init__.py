from .metrics import (BETA2, SWEEP_THRESHOLDS, DatasetReport, FrameEval, SweepReport, dataset_eval, fscore,
                      frame_eval, threshold_sweep)

__all__ = ['BETA2', 'SWEEP_THRESHOLDS', 'DatasetReport', 'FrameEval', 'SweepReport', 'dataset_eval', 'fscore',
           'frame_eval', 'threshold_sweep']
