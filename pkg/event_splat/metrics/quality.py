import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from django.core.exceptions import ValidationError
from render.rasterizer import RenderConfig, render
from scene.cameras import jittered_views
from training.supervision import (LossConfig, check_same_shape,
                                  structural_similarity)

logger = logging.getLogger(__name__)

PEAK = 1.0


def psnr(x, y) -> float:
    """PSNR в дБ с пиком 1.0; для совпадающих изображений +inf."""
    x, y = check_same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


def ssim_metric(x, y, cfg: LossConfig = None) -> float:
    cfg = cfg or LossConfig.from_settings()
    value, _ = structural_similarity(x, y, PEAK, cfg, with_grad=False)
    return value


@dataclass
class EvalReport:
    view_ids: List[int] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)

    def add(self, view_id, psnr_value, ssim_value):
        self.view_ids.append(int(view_id))
        self.psnr.append(float(psnr_value))
        self.ssim.append(float(ssim_value))

    def __len__(self):
        return len(self.view_ids)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    @property
    def psnr_infinite(self) -> bool:
        return any(math.isinf(value) for value in self.psnr)


def evaluate_views(scene, views, gt_frames,
                   render_cfg: RenderConfig = None) -> EvalReport:
    gt_frames = np.asarray(gt_frames, dtype=np.float64)
    if len(views) == 0:
        raise ValidationError('Нет ракурсов для оценки.')
    if len(views) != len(gt_frames):
        raise ValidationError(
            f'Число эталонных кадров ({len(gt_frames)}) не совпадает с '
            f'числом ракурсов ({len(views)}).'
        )
    report = EvalReport()
    for view_id, (view, frame) in enumerate(zip(views, gt_frames)):
        image = render(scene, view, render_cfg).image
        report.add(view_id, psnr(image, frame), ssim_metric(image, frame))
    logger.info('Evaluated %d views: PSNR %.3f dB, SSIM %.4f', len(report),
                report.mean_psnr, report.mean_ssim)
    return report


def evaluate(scene, trajectory, gt_frames, view_times, jitter: float = 0.0,
             seed: int = 0, render_cfg: RenderConfig = None) -> EvalReport:
    """Метрики ракурсов проводки в моменты view_times (со сдвигом jitter)."""
    if len(gt_frames) != len(view_times):
        raise ValidationError(
            f'Число эталонных кадров ({len(gt_frames)}) не совпадает с '
            f'числом моментов ({len(view_times)}).'
        )
    views = jittered_views(trajectory, view_times, jitter, seed)
    return evaluate_views(scene, views, gt_frames, render_cfg)
