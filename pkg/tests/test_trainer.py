import math
import os
from dataclasses import replace

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from events.filters import y_noise_filter
from events.simulator import SimConfig, frames_to_events
from events.stream import EventStream
from metrics.quality import evaluate_views
from render.rasterizer import RenderConfig, render
from scene.cameras import (LINEAR, Intrinsics, SweepTrajectory,
                           jittered_views, pose_at, sample_view_times)
from scene.gaussians import GaussianScene, inverse_sigmoid
from scene.presets import builtin_scene
from training.exceptions import TrainingDiverged
from training.optimizer import Adam, exponential_lr
from training.trainer import (LOSS_CSV_HEADER, LOSS_MSE, LOSS_OURS,
                              TrainConfig, TrainingDataset, TrainState,
                              densify_and_prune, initial_state,
                              loss_and_gradients, reset_opacity, train,
                              train_step, write_loss_csv)

from .oracles import numeric_gradient, random_scene, relative_error

PARAMS = ('xyz', 'color', 'opacity', 'rotation', 'scaling')
SERIAL = RenderConfig(workers=1)
# Скачок веса на границе носителя ~exp(-32): конечные разности его не видят.
WIDE_SUPPORT = RenderConfig(workers=1, footprint_sigmas=8.0)


def fast_config(**changes):
    values = {'init_count': 30, 'render_config': SERIAL}
    values.update(changes)
    return TrainConfig.from_settings(**values)


def simulated_dataset(intrinsics, frame_count=5, sim_cfg=None, seed=0,
                      noise_filter=False, **trajectory):
    """Кадры встроенной сцены вдоль проводки, события и начальный кадр."""
    trajectory = SweepTrajectory(
        intrinsics=intrinsics, frame_count=frame_count,
        duration=(frame_count - 1) * 10_000, **trajectory,
    )
    times = sample_view_times(trajectory)
    scene = builtin_scene()
    frames = np.stack([render(scene, pose_at(trajectory, int(t)),
                              SERIAL).image for t in times])
    stream = frames_to_events(frames, times, sim_cfg or SimConfig(), seed)
    if noise_filter:
        stream = y_noise_filter(stream)
    return TrainingDataset(stream, trajectory, times, frames[0])


@pytest.fixture
def tiny_dataset(tiny_intrinsics):
    return simulated_dataset(tiny_intrinsics)


def densify_state(cfg, opacities=(0.5, 0.5, 0.5, 0.001)):
    """Мелкий и крупный гауссианы с большим градиентом, мелкий с малым и
    почти прозрачный."""
    scene = GaussianScene(
        xyz=[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0],
             [0.0, 0.0, 0.1]],
        color=[0.0] * 4,
        opacity=inverse_sigmoid(opacities),
        rotation=[[1.0, 0.0, 0.0, 0.0]] * 4,
        scaling=np.log([[0.005] * 3, [0.05] * 3, [0.005] * 3,
                        [0.005] * 3]),
        bounds=((-0.4,) * 3, (0.4,) * 3),
    )
    state = TrainState.create(scene, cfg)
    state.grad_accum = np.array([2e-3, 2e-3, 2e-5, 2e-5])
    state.denom = np.full(4, 2.0)
    return state


class TestTrainConfig:

    def test_defaults(self):
        cfg = TrainConfig.from_settings()
        assert cfg.iterations == 50_000
        assert (cfg.position_lr_init, cfg.position_lr_final) == (1.6e-4,
                                                                 1.6e-6)
        assert cfg.feature_lr == 2.5e-3
        assert cfg.opacity_lr == 5e-2
        assert cfg.scaling_lr == 5e-3
        assert cfg.rotation_lr == 1e-3
        assert cfg.densify_grad_threshold == 2e-4
        assert cfg.split_count == 2
        assert cfg.split_scale_divisor == 1.6
        assert cfg.opacity_reset_interval == 3_000
        assert cfg.frame_anchor_weight == 1.0
        assert cfg.loss == LOSS_OURS
        assert cfg.init_count == 10_000
        assert cfg.loss_config.dssim_weight == 0.1

    @pytest.mark.parametrize('changes', [
        {'iterations': -1},
        {'feature_lr': 0.0},
        {'loss': 'l1'},
        {'densification_interval': 0},
        {'frame_anchor_weight': -1.0},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ValidationError):
            TrainConfig.from_settings(**changes)


class TestOptimizer:

    def test_exponential_schedule(self):
        schedule = exponential_lr(1.6e-4, 1.6e-6, 100)
        assert math.isclose(schedule(0), 1.6e-4)
        assert math.isclose(schedule(50), 1.6e-5, rel_tol=1e-12), (
            'Проверьте, что lr убывает лог-линейно'
        )
        assert math.isclose(schedule(100), 1.6e-6)
        assert math.isclose(schedule(500), 1.6e-6)
        assert exponential_lr(1.0, 0.1, 0)(10) == 1.0

    def test_adam_matches_hand_steps(self):
        start = np.array([1.0, -2.0, 0.5])
        params = {'a': start.copy()}
        adam = Adam(params, {'a': 0.1}, 0.9, 0.999, 1e-8)
        gradients = (np.array([0.5, -1.0, 0.0]), np.array([0.1, 0.3, -0.2]))
        expected, m, v = start.copy(), 0.0, 0.0
        for step, g in enumerate(gradients, start=1):
            adam.step(params, {'a': g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9 ** step)
            v_hat = v / (1 - 0.999 ** step)
            expected = expected - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
            assert np.allclose(params['a'], expected, rtol=1e-12,
                               atol=1e-15), (
                f'Проверьте шаг Adam номер {step}'
            )

    def test_per_group_rates(self):
        params = {'a': np.zeros(2), 'b': np.zeros(2)}
        adam = Adam(params, {'a': 0.1, 'b': 0.01}, epsilon=1e-15)
        adam.step(params, {'a': np.ones(2), 'b': -np.ones(2)})
        assert np.allclose(params['a'], -0.1)
        assert np.allclose(params['b'], 0.01)

    def test_missing_rate(self):
        with pytest.raises(ValidationError):
            Adam({'a': np.zeros(1)}, {})

    def test_moment_bookkeeping(self):
        params = {'a': np.zeros((3, 2))}
        adam = Adam(params, {'a': 0.1})
        adam.m['a'][:] = np.arange(3)[:, None]
        adam.select(np.array([True, False, True]))
        adam.append(2)
        assert len(adam) == 4
        assert adam.m['a'][:, 0].tolist() == [0.0, 2.0, 0.0, 0.0]
        adam.reset('a')
        assert not adam.m['a'].any()


class TestTrainingDataset:

    def test_targets(self, tiny_dataset):
        stream = tiny_dataset.stream
        t0 = int(tiny_dataset.view_times[0])
        for index, t in enumerate(tiny_dataset.view_times):
            window = tiny_dataset.windows[index]
            mask = (stream.t >= t0) & (stream.t <= t)
            assert int(np.abs(window).sum()) <= int(mask.sum())
            assert window.sum() == stream.p[mask].sum(), (
                'Проверьте, что окно ракурса k включает события до t_k '
                'включительно'
            )
        assert np.allclose(tiny_dataset.target(2),
                           0.25 * tiny_dataset.windows[2])
        assert len(tiny_dataset.views) == 5

    def test_resolution_mismatch(self, tiny_dataset, desk_intrinsics):
        with pytest.raises(ValidationError):
            TrainingDataset(tiny_dataset.stream,
                            tiny_dataset.trajectory.replace(
                                intrinsics=desk_intrinsics),
                            tiny_dataset.view_times)
        with pytest.raises(ValidationError):
            TrainingDataset(tiny_dataset.stream, tiny_dataset.trajectory,
                            tiny_dataset.view_times, np.zeros((8, 8)))


class TestTrainStep:

    def test_first_step_is_sign_update(self, tiny_dataset):
        cfg = fast_config()
        state = initial_state(cfg)
        before = state.scene.copy()
        index = int(np.random.default_rng(cfg.seed).integers(
            len(tiny_dataset)))
        _, grads, _ = loss_and_gradients(before.copy(), tiny_dataset, index,
                                         cfg)
        train_step(state, tiny_dataset, cfg)
        assert state.iteration == 1
        for name, lr in cfg.learning_rates().items():
            g = grads[name]
            delta = getattr(state.scene, name) - getattr(before, name)
            expected = -lr * g / (np.abs(g) + cfg.adam_eps)
            assert np.allclose(delta, expected, rtol=1e-6, atol=1e-12), (
                f'Проверьте, что первый шаг Adam по {name} равен '
                f'-lr * g / (|g| + eps)'
            )

    def test_statistics_accumulated(self, tiny_dataset):
        cfg = fast_config()
        state = initial_state(cfg)
        train_step(state, tiny_dataset, cfg)
        assert state.denom.max() > 0
        assert np.all(state.grad_accum >= 0)
        assert state.denom.max() <= 2

    def test_perfect_scene_is_stationary(self, tiny_intrinsics):
        trajectory = SweepTrajectory(kind=LINEAR, frame_count=4,
                                     duration=30_000,
                                     displacement=(0.0, 0.0, 0.0),
                                     intrinsics=tiny_intrinsics)
        scene = builtin_scene()
        frame = render(scene, pose_at(trajectory, 0), SERIAL).image
        dataset = TrainingDataset(EventStream.empty((16, 16), 0.25),
                                  trajectory, sample_view_times(trajectory),
                                  frame)
        cfg = fast_config(iterations=5)
        state = TrainState.create(scene.copy(), cfg)
        trained, rows = train(dataset, cfg, state=state, progress=False)
        assert all(row[1] == 0.0 and row[4] == 0.0 for row in rows), (
            'Проверьте, что для неподвижной камеры без событий потеря нулевая'
        )
        for name in PARAMS:
            assert np.array_equal(getattr(trained, name),
                                  getattr(scene, name)), (
                f'Проверьте, что нулевой градиент не меняет {name}'
            )

    def test_divergence_detected(self, tiny_dataset):
        frame = tiny_dataset.initial_frame.copy()
        frame[3, 3] = np.nan
        dataset = TrainingDataset(tiny_dataset.stream,
                                  tiny_dataset.trajectory,
                                  tiny_dataset.view_times, frame)
        cfg = fast_config()
        with pytest.raises(TrainingDiverged) as error:
            train_step(initial_state(cfg), dataset, cfg)
        assert error.value.iteration == 1

    def test_mse_branch(self, tiny_dataset):
        cfg = fast_config(loss=LOSS_MSE)
        loss, grads, _ = loss_and_gradients(initial_state(cfg).scene,
                                            tiny_dataset, 2, cfg)
        assert loss.dssim_term == 1.0
        assert loss.total == loss.event_term
        assert all(np.all(np.isfinite(value)) for value in grads.values())

    def test_gradient_matches_finite_differences(self, tiny_dataset):
        rng = np.random.default_rng(99)
        cfg = fast_config(render_config=WIDE_SUPPORT)
        for _ in range(20):
            scene = random_scene(rng, int(rng.integers(2, 11)),
                                 depth=(-0.3, 0.3))
            index = int(rng.integers(1, len(tiny_dataset)))

            def objective(current):
                return loss_and_gradients(current, tiny_dataset, index,
                                          cfg)[0].objective

            _, grads, _ = loss_and_gradients(scene, tiny_dataset, index, cfg)
            for name in PARAMS:
                numeric = numeric_gradient(objective, scene, name)
                error = relative_error(grads[name], numeric)
                assert error < 1e-3, (
                    f'Проверьте градиент полной потери по {name}: '
                    f'относительная ошибка {error:.2e}'
                )


class TestDensification:

    def test_clone_split_prune(self):
        cfg = fast_config()
        state = densify_state(cfg)
        state.optimizer.m['xyz'][:] = np.arange(1, 5)[:, None]
        parent = state.scene.xyz[1].copy()
        densify_and_prune(state, cfg)
        scene = state.scene
        assert len(scene) == 5, (
            'Проверьте клонирование, деление на двух потомков и удаление '
            'прозрачного гауссиана'
        )
        assert np.array_equal(scene.xyz[2], scene.xyz[0])
        assert np.all(scene.get_opacity >= cfg.min_opacity)
        children = scene.select([3, 4])
        assert np.allclose(children.get_scaling, 0.05 / 1.6)
        assert np.allclose(children.get_opacity, 0.5)
        assert np.all(np.abs(children.xyz - parent) < 0.25)
        assert state.optimizer.m['xyz'][:, 0].tolist() == [1.0, 3.0, 0.0,
                                                          0.0, 0.0], (
            'Проверьте, что моменты Adam следуют за гауссианами'
        )
        assert state.grad_accum.shape == (5,)
        assert not state.denom.any()

    def test_no_op(self):
        cfg = fast_config()
        state = densify_state(cfg, opacities=(0.5,) * 4)
        state.grad_accum[:] = 1e-6
        before = state.scene.copy()
        densify_and_prune(state, cfg)
        for name in PARAMS:
            assert np.array_equal(getattr(state.scene, name),
                                  getattr(before, name))

    def test_never_prunes_everything(self):
        cfg = fast_config()
        state = densify_state(cfg, opacities=(0.001,) * 4)
        state.grad_accum[:] = 0.0
        densify_and_prune(state, cfg)
        assert len(state.scene) == 4
        assert len(state.optimizer) == 4

    def test_reset_opacity(self):
        cfg = fast_config()
        state = densify_state(cfg, opacities=(0.5, 0.005, 0.9, 0.01))
        state.optimizer.m['opacity'][:] = 1.0
        reset_opacity(state, cfg)
        assert np.allclose(state.scene.get_opacity, [0.01, 0.005, 0.01,
                                                     0.01])
        assert not state.optimizer.m['opacity'].any()
        reset_opacity(state)
        assert np.allclose(state.scene.get_opacity, [0.01, 0.005, 0.01,
                                                     0.01])


class TestTrain:

    def test_zero_iterations(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=0)
        state = initial_state(cfg)
        start = state.scene.copy()
        scene, rows = train(tiny_dataset, cfg, checkpoint_dir=tmp_path,
                            state=state, progress=False)
        assert rows == []
        assert os.listdir(tmp_path) == ['000000.swgs']
        for name in PARAMS:
            assert np.array_equal(getattr(scene, name), getattr(start, name))

    def test_checkpoints_written(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=4, checkpoint_interval=2)
        train(tiny_dataset, cfg, checkpoint_dir=tmp_path,
              state=initial_state(cfg), progress=False)
        assert sorted(os.listdir(tmp_path)) == ['000000.swgs', '000002.swgs',
                                                '000004.swgs']

    def test_deterministic(self, tiny_dataset):
        cfg = fast_config(iterations=6, densify_from_iter=1,
                          densification_interval=3,
                          densify_grad_threshold=1e-7)
        first, rows_first = train(tiny_dataset, cfg,
                                  state=initial_state(cfg), progress=False)
        second, rows_second = train(tiny_dataset, cfg,
                                    state=initial_state(cfg), progress=False)
        threaded_cfg = replace(cfg, render_config=RenderConfig(workers=3))
        threaded, _ = train(tiny_dataset, threaded_cfg,
                            state=initial_state(threaded_cfg),
                            progress=False)
        assert rows_first == rows_second
        for name in PARAMS:
            assert np.array_equal(getattr(first, name),
                                  getattr(second, name)), (
                'Проверьте, что обучение с одним seed воспроизводимо'
            )
            assert np.array_equal(getattr(first, name),
                                  getattr(threaded, name)), (
                'Проверьте, что результат не зависит от числа потоков'
            )

    def test_loss_csv(self, tmp_path):
        path = tmp_path / 'loss.csv'
        write_loss_csv(path, [(1, 0.5, 0.25, 0.75, 0.0)])
        lines = path.read_text().splitlines()
        assert lines[0] == ','.join(LOSS_CSV_HEADER)
        assert lines[1] == '1,0.5,0.25,0.75,0.0'


@pytest.mark.slow
class TestReconstruction:
    """Сквозные прогоны на 64x64; включаются через SPLAT_SLOW_TESTS=1."""

    def reconstruct(self, seed=0, noise_rate=0.0, noise_filter=True,
                    loss=LOSS_OURS):
        dataset = simulated_dataset(Intrinsics.desk(), frame_count=120,
                                    sim_cfg=SimConfig(noise_rate=noise_rate),
                                    seed=seed, noise_filter=noise_filter)
        cfg = TrainConfig.from_settings(
            iterations=8_000, init_count=2_000, seed=seed, loss=loss,
            checkpoint_interval=8_000,
        )
        scene, rows = train(dataset, cfg, state=initial_state(cfg),
                            progress=False)
        trajectory = dataset.trajectory
        times = np.linspace(0, trajectory.duration, 20).astype(np.int64)
        views = jittered_views(trajectory, times, 0.02, seed=seed + 1)
        frames = [render(builtin_scene(), view).image for view in views]
        return evaluate_views(scene, views, frames), rows

    def test_loss_decreases(self):
        dataset = simulated_dataset(Intrinsics.desk(), frame_count=120)
        cfg = TrainConfig.from_settings(iterations=2_000, init_count=2_000,
                                        checkpoint_interval=2_000)
        _, rows = train(dataset, cfg, state=initial_state(cfg),
                        progress=False)
        objective = np.array([row[1] + row[4] for row in rows])
        moving = np.convolve(objective, np.ones(100) / 100, mode='valid')
        assert len(moving) == 1_901
        assert moving[-1] < moving[0], (
            'Проверьте, что скользящее среднее потери по 100 шагам убывает'
        )
        slope = np.polyfit(np.arange(len(moving)), moving, 1)[0]
        assert slope < 0.0

    def test_synthetic_quality(self):
        report, _ = self.reconstruct()
        assert report.mean_psnr >= 25.0
        assert report.mean_ssim >= 0.85

    def test_ablations_order(self):
        filter_wins, loss_wins = 0, 0
        for seed in range(3):
            full, _ = self.reconstruct(seed, noise_rate=2.0)
            unfiltered, _ = self.reconstruct(seed, noise_rate=2.0,
                                             noise_filter=False)
            mse, _ = self.reconstruct(seed, noise_rate=2.0, loss=LOSS_MSE)
            filter_wins += full.mean_psnr > unfiltered.mean_psnr
            loss_wins += full.mean_psnr > mse.mean_psnr
        assert filter_wins >= 2, 'Фильтр шума должен повышать PSNR'
        assert loss_wins >= 2, 'Событийная потеря должна превосходить MSE'
