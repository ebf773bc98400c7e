"""Цикл оптимизации сцены по событиям и одному начальному кадру."""
import csv
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from events.stream import EventStream, split_windows
from render.rasterizer import (RenderConfig, render_backward,
                               render_grayscale_pair)
from scene.cameras import SweepTrajectory, pose_at
from scene.checkpoints import save_scene
from scene.gaussians import (PARAM_GROUPS, GaussianScene, build_rotation,
                             inverse_sigmoid, random_init)
from tqdm import trange

from .exceptions import TrainingDiverged
from .optimizer import Adam, exponential_lr
from .supervision import (LossConfig, LossValue, log_image_grad,
                          mse_loss_value, predicted_difference, total_loss)

logger = logging.getLogger(__name__)

LOSS_OURS = 'ours'
LOSS_MSE = 'mse'
LOSS_KINDS = (LOSS_OURS, LOSS_MSE)
LOSS_CSV_HEADER = ('iteration', 'total', 'event_term', 'dssim_term',
                   'anchor_term')


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 50_000
    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    feature_lr: float = 2.5e-3
    opacity_lr: float = 5e-2
    scaling_lr: float = 5e-3
    rotation_lr: float = 1e-3
    densification_interval: int = 100
    densify_from_iter: int = 500
    densify_until_iter: int = 50_000
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    opacity_reset_interval: int = 3_000
    opacity_reset_value: float = 0.01
    split_count: int = 2
    split_scale_divisor: float = 1.6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-15
    frame_anchor_weight: float = 1.0
    checkpoint_interval: int = 5_000
    loss: str = LOSS_OURS
    init_count: int = 10_000
    seed: int = 0
    loss_config: LossConfig = field(default_factory=LossConfig.from_settings)
    render_config: RenderConfig = field(
        default_factory=RenderConfig.from_settings)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError('Число итераций не может быть '
                                  'отрицательным.')
        for name in ('position_lr_init', 'position_lr_final', 'feature_lr',
                     'opacity_lr', 'scaling_lr', 'rotation_lr'):
            if not getattr(self, name) > 0:
                raise ValidationError(f'{name} должен быть больше нуля.')
        for name in ('densification_interval', 'opacity_reset_interval',
                     'checkpoint_interval', 'split_count', 'init_count'):
            if getattr(self, name) < 1:
                raise ValidationError(f'{name} должен быть не меньше 1.')
        if self.loss not in LOSS_KINDS:
            raise ValidationError(f'Неизвестная функция потерь {self.loss!r}.')
        if self.frame_anchor_weight < 0:
            raise ValidationError('Вес якоря первого кадра не может быть '
                                  'отрицательным.')

    @classmethod
    def from_settings(cls, **overrides):
        values = {name.lower(): value
                  for name, value in settings.TRAINING.items()}
        values['init_count'] = settings.SCENE['INIT_COUNT']
        values.update(overrides)
        return cls(**values)

    def learning_rates(self):
        return {
            'xyz': self.position_lr_init,
            'color': self.feature_lr,
            'opacity': self.opacity_lr,
            'rotation': self.rotation_lr,
            'scaling': self.scaling_lr,
        }


@dataclass
class TrainingDataset:
    """Поток событий, проводка и (необязательно) начальный кадр.

    Для ракурса k эталон E_gt = A * accumulate(t0, t_k + 1): события,
    попавшие ровно на момент кадра, относятся к предыдущему интервалу.
    """

    stream: EventStream
    trajectory: SweepTrajectory
    view_times: np.ndarray
    initial_frame: Optional[np.ndarray] = None
    views: list = field(init=False, repr=False)
    windows: list = field(init=False, repr=False)

    def __post_init__(self):
        self.view_times = np.asarray(self.view_times, dtype=np.int64)
        if self.view_times.size < 2:
            raise ValidationError('Нужно хотя бы два ракурса.')
        if tuple(self.stream.resolution) != \
                tuple(self.trajectory.intrinsics.resolution):
            raise ValidationError(
                f'Разрешение событий {self.stream.resolution} не совпадает '
                f'с камерой {self.trajectory.intrinsics.resolution}.'
            )
        if self.initial_frame is not None:
            self.initial_frame = np.asarray(self.initial_frame,
                                            dtype=np.float64)
            if self.initial_frame.shape != self.stream.shape:
                raise ValidationError(
                    f'Начальный кадр {self.initial_frame.shape} не совпадает '
                    f'с разрешением {self.stream.shape}.'
                )
        self.views = [pose_at(self.trajectory, int(t))
                      for t in self.view_times]
        self.windows = split_windows(self.stream, int(self.view_times[0]),
                                     self.view_times + 1)

    @property
    def contrast_threshold(self):
        return self.stream.contrast_threshold

    def __len__(self):
        return int(self.view_times.size)

    def target(self, index):
        return self.contrast_threshold * self.windows[index]


@dataclass
class TrainState:
    scene: GaussianScene
    optimizer: Adam
    rng: np.random.Generator
    iteration: int = 0
    grad_accum: np.ndarray = None
    denom: np.ndarray = None

    def __post_init__(self):
        if self.grad_accum is None:
            self.reset_statistics()

    def reset_statistics(self):
        self.grad_accum = np.zeros(len(self.scene))
        self.denom = np.zeros(len(self.scene))

    @classmethod
    def create(cls, scene: GaussianScene, cfg: TrainConfig):
        optimizer = Adam(scene.parameters(), cfg.learning_rates(),
                         cfg.beta1, cfg.beta2, cfg.adam_eps)
        return cls(scene, optimizer, np.random.default_rng(cfg.seed))


def initial_state(cfg: TrainConfig, bounds=None) -> TrainState:
    scene = random_init(cfg.init_count, bounds, cfg.seed)
    return TrainState.create(scene, cfg)


def _image_losses(image_0, image_k, dataset, index, cfg):
    loss_cfg = cfg.loss_config
    e_pred = predicted_difference(image_0, image_k, loss_cfg)
    e_gt = dataset.target(index)
    if cfg.loss == LOSS_MSE:
        loss = mse_loss_value(e_pred, e_gt)
    else:
        loss = total_loss(e_pred, e_gt, loss_cfg)
    d_image_0 = loss.d_Epred * log_image_grad(image_0, loss_cfg)
    d_image_k = -loss.d_Epred * log_image_grad(image_k, loss_cfg)

    if dataset.initial_frame is not None and cfg.frame_anchor_weight > 0:
        residual = image_0 - dataset.initial_frame
        weight = cfg.frame_anchor_weight
        loss.anchor_term = float(weight * np.mean(residual ** 2))
        d_image_0 = d_image_0 + 2.0 * weight * residual / residual.size
    return loss, d_image_0, d_image_k


def loss_and_gradients(scene: GaussianScene, dataset: TrainingDataset,
                       index: int, cfg: TrainConfig, iteration: int = 0):
    """Потери пары ракурсов (t0, t_k) и градиент по параметрам сцены.

    Возвращает LossValue, словарь суммарных градиентов обеих отрисовок и
    пару ParamGradients (нужны для статистики уплотнения).
    """
    view_0, view_k = dataset.views[0], dataset.views[index]
    render_cfg = cfg.render_config
    result_0, result_k = render_grayscale_pair(scene, view_0, view_k,
                                               render_cfg)

    loss, d_image_0, d_image_k = _image_losses(
        result_0.image, result_k.image, dataset, index, cfg)
    if not np.isfinite(loss.objective):
        raise TrainingDiverged(iteration, loss)

    grads_0 = render_backward(scene, view_0, result_0, d_image_0,
                              render_cfg)
    grads_k = render_backward(scene, view_k, result_k, d_image_k,
                              render_cfg)
    total = {name: grads_0.as_dict()[name] + grads_k.as_dict()[name]
             for name in PARAM_GROUPS}
    return loss, total, (grads_0, grads_k)


def train_step(state: TrainState, dataset: TrainingDataset,
               cfg: TrainConfig, position_lr=None) -> LossValue:
    """Одна пара ракурсов (I_0, I_k): отрисовка, потери, градиент, Adam."""
    state.iteration += 1
    if position_lr is not None:
        state.optimizer.lrs['xyz'] = position_lr(state.iteration)
    index = int(state.rng.integers(len(dataset)))
    loss, total, pair = loss_and_gradients(state.scene, dataset, index, cfg,
                                           state.iteration)
    if state.iteration < cfg.densify_until_iter:
        for grads in pair:
            state.grad_accum += grads.mean2d_norm
            state.denom += grads.visible
    state.optimizer.step(state.scene.parameters(), total)
    return loss


def _split_children(scene: GaussianScene, mask, cfg, rng):
    parents = scene.select(mask)
    count = cfg.split_count
    scales = np.repeat(parents.get_scaling, count, axis=0)
    samples = rng.normal(0.0, scales)
    rotations = np.repeat(build_rotation(parents.rotation), count, axis=0)
    children = GaussianScene(
        xyz=np.einsum('kij,kj->ki', rotations, samples)
        + np.repeat(parents.xyz, count, axis=0),
        color=np.repeat(parents.color, count),
        opacity=np.repeat(parents.opacity, count),
        rotation=np.repeat(parents.rotation, count, axis=0),
        scaling=np.log(scales / cfg.split_scale_divisor),
        bounds=scene.bounds,
    )
    return children


def densify_and_prune(state: TrainState, cfg: TrainConfig) -> TrainState:
    """Клонирование мелких и деление крупных гауссианов с большим
    экранным градиентом, затем удаление почти прозрачных."""
    scene = state.scene
    with np.errstate(divide='ignore', invalid='ignore'):
        grads = np.where(state.denom > 0, state.grad_accum / state.denom, 0.0)
    selected = grads > cfg.densify_grad_threshold
    small = scene.get_scaling.max(axis=1) <= cfg.percent_dense * scene.extent
    clone = selected & small
    split = selected & ~small

    clones = scene.select(clone)
    children = _split_children(scene, split, cfg, state.rng)
    scene = scene.select(~split).extend(clones).extend(children)
    state.optimizer.select(~split)
    state.optimizer.append(len(clones) + len(children))

    grown = len(scene)
    transparent = scene.get_opacity < cfg.min_opacity
    if transparent.all():
        logger.warning('Pruning would remove all %d gaussians; skipped',
                       grown)
    elif transparent.any():
        scene = scene.select(~transparent)
        state.optimizer.select(~transparent)

    logger.info('Densified at iteration %d: %d cloned, %d split, %d pruned, '
                '%d total', state.iteration, int(clone.sum()),
                int(split.sum()), grown - len(scene), len(scene))
    state.scene = scene
    state.reset_statistics()
    return state


def reset_opacity(state: TrainState, cfg: TrainConfig = None) -> TrainState:
    cap = (settings.TRAINING['OPACITY_RESET_VALUE'] if cfg is None
           else cfg.opacity_reset_value)
    scene = state.scene
    scene.opacity = np.where(scene.get_opacity > cap, inverse_sigmoid(cap),
                             scene.opacity)
    state.optimizer.reset('opacity')
    logger.info('Opacity reset to %.3f at iteration %d', cap,
                state.iteration)
    return state


def _checkpoint(directory, iteration, scene):
    if directory is not None:
        save_scene(os.path.join(directory, f'{iteration:06d}.swgs'), scene)


def train(dataset: TrainingDataset, cfg: TrainConfig, checkpoint_dir=None,
          state: TrainState = None, progress: bool = True):
    """Полный цикл обучения; возвращает итоговую сцену и строки loss CSV."""
    state = state or initial_state(cfg)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    _checkpoint(checkpoint_dir, 0, state.scene)

    position_lr = exponential_lr(cfg.position_lr_init, cfg.position_lr_final,
                                 cfg.iterations)
    rows: List[tuple] = []
    bar = trange(1, cfg.iterations + 1, desc='train', disable=not progress)
    for iteration in bar:
        loss = train_step(state, dataset, cfg, position_lr)
        rows.append((iteration, loss.total, loss.event_term,
                     loss.dssim_term, loss.anchor_term))
        if iteration % 10 == 0:
            bar.set_postfix(loss=f'{loss.objective:.5f}',
                            gaussians=len(state.scene))

        if iteration < cfg.densify_until_iter:
            if (iteration > cfg.densify_from_iter
                    and iteration % cfg.densification_interval == 0):
                densify_and_prune(state, cfg)
            if iteration % cfg.opacity_reset_interval == 0:
                reset_opacity(state, cfg)
        if iteration % cfg.checkpoint_interval == 0:
            _checkpoint(checkpoint_dir, iteration, state.scene)
    logger.info('Finished %d iterations with %d gaussians', cfg.iterations,
                len(state.scene))
    return state.scene, rows


def write_loss_csv(path, rows) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_CSV_HEADER)
        for iteration, *values in rows:
            writer.writerow([iteration, *(repr(float(v)) for v in values)])
