import math

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from metrics.quality import (EvalReport, evaluate, evaluate_views, psnr,
                             ssim_metric)
from pipeline.serializers import EvalReportSerializer
from render.rasterizer import RenderConfig, render
from scene.cameras import SweepTrajectory, pose_at, sample_view_times
from scene.presets import builtin_scene
from training.supervision import LossConfig, dssim

from .oracles import psnr_loop


@pytest.fixture
def trajectory(desk_intrinsics):
    return SweepTrajectory(intrinsics=desk_intrinsics, frame_count=10,
                           duration=90_000)


@pytest.fixture
def render_cfg():
    return RenderConfig.from_settings(workers=1)


class TestPsnr:

    def test_identical(self, rng):
        image = rng.uniform(size=(8, 8))
        assert psnr(image, image) == math.inf, (
            'Проверьте, что PSNR одинаковых изображений равен +inf'
        )

    def test_half_gray(self):
        value = psnr(np.zeros((4, 4)), np.full((4, 4), 0.5))
        assert abs(value - 6.0206) < 1e-4

    def test_symmetric_and_oracle(self, rng):
        x, y = rng.uniform(size=(2, 12, 10))
        assert psnr(x, y) == psnr(y, x)
        assert math.isclose(psnr(x, y), psnr_loop(x, y), rel_tol=1e-12)

    def test_decreases_with_noise(self, rng):
        image = rng.uniform(size=(32, 32))
        noise = rng.normal(size=image.shape)
        values = [psnr(image, image + level * noise)
                  for level in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((4, 4)), np.zeros((4, 3)))


class TestSsimMetric:

    def test_identical(self, rng):
        image = rng.uniform(size=(16, 16))
        assert math.isclose(ssim_metric(image, image), 1.0, rel_tol=1e-12)

    def test_constant_images(self):
        c1 = 0.01 ** 2
        value = ssim_metric(np.zeros((16, 16)), np.ones((16, 16)))
        assert math.isclose(value, c1 / (1 + c1), rel_tol=1e-9)

    def test_same_formula_as_training_loss(self, rng):
        x, y = rng.uniform(size=(2, 20, 20))
        cfg = LossConfig.from_settings()
        assert ssim_metric(x, y, cfg) == dssim(x, y, cfg)[0], (
            'Проверьте, что метрика SSIM и D-SSIM в обучении используют '
            'одну реализацию'
        )

    def test_small_image(self):
        with pytest.raises(ValidationError):
            ssim_metric(np.zeros((5, 5)), np.zeros((5, 5)))


class TestEvalReport:

    def test_empty_means(self):
        report = EvalReport()
        assert math.isnan(report.mean_psnr)
        assert not report.psnr_infinite

    def test_means(self):
        report = EvalReport()
        report.add(0, 20.0, 0.5)
        report.add(1, 30.0, 0.7)
        assert len(report) == 2
        assert report.mean_psnr == 25.0
        assert math.isclose(report.mean_ssim, 0.6)

    def test_serializer_null_psnr(self):
        report = EvalReport()
        report.add(0, math.inf, 1.0)
        data = EvalReportSerializer(report).data
        assert data['mean_psnr'] is None, (
            'Проверьте, что бесконечный PSNR записывается как null'
        )
        assert data['psnr_infinite'] is True
        assert data['views'][0]['psnr'] is None
        assert data['views'][0]['psnr_infinite'] is True
        assert data['mean_ssim'] == 1.0


class TestEvaluate:

    def test_self_evaluation(self, trajectory, render_cfg):
        scene = builtin_scene()
        times = sample_view_times(trajectory)
        frames = [render(scene, pose_at(trajectory, int(t)),
                         render_cfg).image for t in times]
        report = evaluate(scene, trajectory, frames, times,
                          render_cfg=render_cfg)
        assert len(report) == 10
        assert report.psnr_infinite
        assert all(math.isinf(value) for value in report.psnr)
        assert all(math.isclose(value, 1.0, rel_tol=1e-12)
                   for value in report.ssim), (
            'Проверьте, что сцена, оценённая на своих же кадрах, даёт SSIM 1'
        )

    def test_single_view(self, trajectory, render_cfg, rng):
        scene = builtin_scene()
        view = pose_at(trajectory, 0)
        target = np.clip(render(scene, view, render_cfg).image
                         + rng.normal(scale=0.02, size=(64, 64)), 0, 1)
        report = evaluate_views(scene, [view], [target], render_cfg)
        assert report.view_ids == [0]
        assert 25.0 < report.psnr[0] < 45.0
        assert 0.0 < report.ssim[0] < 1.0

    def test_count_mismatch(self, trajectory, render_cfg):
        scene = builtin_scene()
        times = sample_view_times(trajectory)
        frames = np.zeros((len(times) - 1, 64, 64))
        with pytest.raises(ValidationError):
            evaluate(scene, trajectory, frames, times, render_cfg=render_cfg)
        with pytest.raises(ValidationError):
            evaluate_views(scene, [], [], render_cfg)

    def test_resolution_mismatch(self, trajectory, render_cfg):
        with pytest.raises(ValidationError):
            evaluate(builtin_scene(), trajectory, np.zeros((1, 32, 32)), [0],
                     render_cfg=render_cfg)

    def test_jitter_changes_views(self, trajectory, render_cfg):
        scene = builtin_scene()
        times = sample_view_times(trajectory)[:3]
        frames = [render(scene, pose_at(trajectory, int(t)),
                         render_cfg).image for t in times]
        plain = evaluate(scene, trajectory, frames, times,
                         render_cfg=render_cfg)
        moved = evaluate(scene, trajectory, frames, times, jitter=0.05,
                         seed=3, render_cfg=render_cfg)
        assert plain.mean_ssim > moved.mean_ssim
        assert not moved.psnr_infinite
