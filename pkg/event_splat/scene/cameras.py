"""Камера-обскура, траектории проводки и поиск позы по времени.

Соглашение: world_to_cam переводит мир в систему камеры, где +z смотрит
вперёд, +x вправо, +y вниз. Центры пикселей лежат в целых координатах.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

TURNTABLE = 'turntable'
LINEAR = 'linear'
SWEEP_KINDS = (TURNTABLE, LINEAR)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError('Фокусные расстояния должны быть больше '
                                  'нуля.')
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError('Главная точка должна лежать внутри кадра.')

    @classmethod
    def default(cls):
        return cls(**settings.CAMERA['DEFAULT_INTRINSICS'])

    @classmethod
    def desk(cls):
        return cls(**settings.CAMERA['DESK_INTRINSICS'])

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.width, self.height

    @property
    def focal(self):
        return self.fx, self.fy


@dataclass(frozen=True)
class CameraView:
    rotation: np.ndarray
    translation: np.ndarray
    timestamp: int
    intrinsics: Intrinsics

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation,
                               dtype=np.float64).reshape(3)
        if (not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6)
                or np.linalg.det(rotation) <= 0):
            raise ValidationError('Блок поворота позы должен быть '
                                  'ортонормированным с определителем +1.')
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)
        object.__setattr__(self, 'timestamp', int(self.timestamp))

    @property
    def world_to_cam(self) -> np.ndarray:
        """Однородная матрица 4x4."""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    @property
    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T \
            + self.translation


def look_at(position, target, down=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Поворот world_to_cam камеры в position, смотрящей на target."""
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(down, forward)
    if np.linalg.norm(right) < 1e-12:
        raise ValidationError('Направление взгляда параллельно вертикали.')
    right /= np.linalg.norm(right)
    camera_down = np.cross(forward, right)
    return np.stack([right, camera_down, forward])


@dataclass(frozen=True)
class SweepTrajectory:
    """Проводка камеры с постоянной скоростью."""

    kind: str = TURNTABLE
    duration: int = 2_490_000
    frame_count: int = 250
    intrinsics: Intrinsics = field(default_factory=Intrinsics.default)
    arc_degrees: float = 90.0
    radius: float = 1.0
    elevation_degrees: float = 0.0
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    start: Tuple[float, float, float] = (-0.25, 0.0, -1.0)
    displacement: Tuple[float, float, float] = (0.5, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValidationError(f'Неизвестный тип проводки {self.kind!r}.')
        if self.duration <= 0:
            raise ValidationError('Длительность проводки должна быть больше '
                                  'нуля.')
        if self.frame_count < 2:
            raise ValidationError('Нужно хотя бы два кадра.')
        if self.duration < self.frame_count - 1:
            raise ValidationError('Длительность меньше числа интервалов '
                                  'между кадрами.')
        if self.kind == TURNTABLE and self.radius <= 0:
            raise ValidationError('Радиус поворотного стола должен быть '
                                  'больше нуля.')

    @classmethod
    def from_settings(cls, **overrides):
        frame_count = overrides.pop(
            'frame_count', settings.SIMULATION['FRAME_COUNT'])
        values = {
            'frame_count': frame_count,
            'duration': (frame_count - 1)
            * settings.SIMULATION['FRAME_STEP_US'],
            'arc_degrees': settings.SIMULATION['ARC_DEGREES'],
            'radius': settings.CAMERA['RADIUS'],
            'elevation_degrees': settings.CAMERA['ELEVATION_DEGREES'],
        }
        values.update(overrides)
        return cls(**values)

    def replace(self, **changes):
        return replace(self, **changes)

    def _check_time(self, t):
        if not 0 <= t <= self.duration:
            raise ValidationError(
                f'Время {t} вне проводки [0, {self.duration}].'
            )

    def azimuth_at(self, t) -> float:
        """Азимут в градусах."""
        self._check_time(t)
        return self.arc_degrees * (t / self.duration)

    def position_at(self, t) -> np.ndarray:
        self._check_time(t)
        center = np.asarray(self.center, dtype=np.float64)
        if self.kind == LINEAR:
            return (np.asarray(self.start, dtype=np.float64)
                    + np.asarray(self.displacement, dtype=np.float64)
                    * (t / self.duration))
        azimuth = math.radians(self.azimuth_at(t))
        elevation = math.radians(self.elevation_degrees)
        offset = np.array([
            math.sin(azimuth) * math.cos(elevation),
            -math.sin(elevation),
            -math.cos(azimuth) * math.cos(elevation),
        ])
        return center + self.radius * offset

    def rotation_at(self, t) -> np.ndarray:
        if self.kind == LINEAR:
            return look_at(np.asarray(self.start, dtype=np.float64),
                           self.center)
        return look_at(self.position_at(t), self.center)


def pose_at(trajectory: SweepTrajectory, t) -> CameraView:
    position = trajectory.position_at(t)
    rotation = trajectory.rotation_at(t)
    return CameraView(rotation, -rotation @ position, int(t),
                      trajectory.intrinsics)


def sample_view_times(trajectory: SweepTrajectory) -> np.ndarray:
    """frame_count равномерных моментов от 0 до duration включительно."""
    count = trajectory.frame_count
    return (np.arange(count, dtype=np.int64) * trajectory.duration) \
        // (count - 1)


def world_to_pixel(view: CameraView, point):
    """Пиксельные координаты и глубина точки (или пачки точек)."""
    camera = view.to_camera(point)
    intrinsics = view.intrinsics
    depth = camera[..., 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        pixel = np.stack([
            intrinsics.fx * camera[..., 0] / depth + intrinsics.cx,
            intrinsics.fy * camera[..., 1] / depth + intrinsics.cy,
        ], axis=-1)
    return pixel, depth


def jitter_view(view: CameraView, magnitude: float, rng) -> CameraView:
    """Новый ракурс: центр камеры сдвинут на случайный вектор до magnitude."""
    if magnitude == 0:
        return view
    shift = rng.uniform(-magnitude, magnitude, size=3)
    center = view.camera_center + shift
    return CameraView(view.rotation, -view.rotation @ center, view.timestamp,
                      view.intrinsics)


def jittered_views(trajectory: SweepTrajectory, times, magnitude: float,
                   seed: int = 0):
    rng = np.random.default_rng(seed)
    return [jitter_view(pose_at(trajectory, int(t)), magnitude, rng)
            for t in times]
