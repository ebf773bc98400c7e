import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

PARAM_GROUPS = ('xyz', 'color', 'opacity', 'rotation', 'scaling')
PARAM_SHAPES = {
    'xyz': (3,),
    'color': (),
    'opacity': (),
    'rotation': (4,),
    'scaling': (3,),
}

# Ковариация 3x3 (или пачка (N, 3, 3)).
Covariance3 = np.ndarray


def sigmoid(value):
    return 1.0 / (1.0 + np.exp(-np.asarray(value, dtype=np.float64)))


def inverse_sigmoid(value):
    value = np.asarray(value, dtype=np.float64)
    return np.log(value / (1.0 - value))


def normalize_quaternion(rotation):
    rotation = np.asarray(rotation, dtype=np.float64)
    norm = np.linalg.norm(rotation, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValidationError('Нулевой кватернион нельзя нормировать.')
    return rotation / norm


def build_rotation(rotation):
    """Матрица поворота из кватерниона (w, x, y, z); кватернион нормируется.
    """
    w, x, y, z = np.moveaxis(normalize_quaternion(rotation), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z),
                  2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z),
                  2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x),
                  1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def rotation_jacobian(unit_rotation):
    """dR/dq для нормированного кватерниона: массив (..., 4, 3, 3)."""
    w, x, y, z = np.moveaxis(np.asarray(unit_rotation), -1, 0)
    zero = np.zeros_like(w)

    def matrix(rows):
        return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)

    d_w = matrix([(zero, -2 * z, 2 * y),
                  (2 * z, zero, -2 * x),
                  (-2 * y, 2 * x, zero)])
    d_x = matrix([(zero, 2 * y, 2 * z),
                  (2 * y, -4 * x, -2 * w),
                  (2 * z, 2 * w, -4 * x)])
    d_y = matrix([(-4 * y, 2 * x, 2 * w),
                  (2 * x, zero, 2 * z),
                  (-2 * w, 2 * z, -4 * y)])
    d_z = matrix([(-4 * z, -2 * w, 2 * x),
                  (2 * w, -4 * z, 2 * y),
                  (2 * x, 2 * y, zero)])
    return np.stack([d_w, d_x, d_y, d_z], axis=-3)


def build_covariance(rotation, scales) -> Covariance3:
    """Sigma = R S S^T R^T."""
    scales = np.asarray(scales, dtype=np.float64)
    if np.any(scales <= 0):
        raise ValidationError('Масштабы гауссиана должны быть положительными.')
    transform = build_rotation(rotation) * scales[..., None, :]
    return transform @ np.swapaxes(transform, -1, -2)


def projection_jacobian(mean_cam, focal):
    """Якобиан перспективной проекции в точке mean_cam: (..., 2, 3)."""
    fx, fy = focal
    x, y, z = np.moveaxis(np.asarray(mean_cam, dtype=np.float64), -1, 0)
    zero = np.zeros_like(z)
    return np.stack([
        np.stack([fx / z, zero, -fx * x / z ** 2], axis=-1),
        np.stack([zero, fy / z, -fy * y / z ** 2], axis=-1),
    ], axis=-2)


def project_covariance(sigma, world_to_cam, mean_cam, focal=(1.0, 1.0),
                       floor=None, near=None):
    """Sigma' = (J W Sigma W^T J^T)[:2, :2] плюс низкочастотная добавка."""
    floor = settings.RENDER['LOW_PASS_FLOOR'] if floor is None else floor
    near = settings.RENDER['NEAR_PLANE'] if near is None else near
    mean_cam = np.asarray(mean_cam, dtype=np.float64)
    if np.any(mean_cam[..., 2] <= near):
        raise ValidationError(
            f'Гауссиан ближе плоскости отсечения {near}; его нужно отбросить.'
        )
    transform = projection_jacobian(mean_cam, focal) @ np.asarray(
        world_to_cam, dtype=np.float64)
    projected = transform @ np.asarray(sigma) @ np.swapaxes(transform, -1, -2)
    return projected + floor * np.eye(2)


def eval_gaussian_2d(sigma2, delta) -> np.ndarray:
    """exp(-1/2 delta^T Sigma'^-1 delta)."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    det = sigma2[..., 0, 0] * sigma2[..., 1, 1] - sigma2[..., 0, 1] ** 2
    if np.any(det == 0):
        raise ValidationError('Вырожденная двумерная ковариация.')
    dx, dy = delta[..., 0], delta[..., 1]
    power = (sigma2[..., 1, 1] * dx * dx - 2.0 * sigma2[..., 0, 1] * dx * dy
             + sigma2[..., 0, 0] * dy * dy) / det
    return np.exp(-0.5 * power)


class Gaussian(NamedTuple):
    """Один примитив в неактивированных параметрах."""

    position: np.ndarray
    color: float
    opacity_logit: float
    rotation: np.ndarray
    log_scale: np.ndarray


@dataclass
class GaussianScene:
    """Набор оптимизируемых гауссианов (структура массивов)."""

    xyz: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    rotation: np.ndarray
    scaling: np.ndarray
    bounds: np.ndarray = field(
        default_factory=lambda: np.array(settings.SCENE['BOUNDS'],
                                         dtype=np.float64),
    )

    def __post_init__(self):
        for name in PARAM_GROUPS:
            setattr(self, name, np.array(getattr(self, name),
                                         dtype=np.float64))
        self.bounds = np.array(self.bounds, dtype=np.float64).reshape(2, 3)
        count = self.xyz.shape[0]
        for name, shape in PARAM_SHAPES.items():
            if getattr(self, name).shape != (count, *shape):
                raise ValidationError(
                    f'Параметр {name} имеет форму {getattr(self, name).shape},'
                    f' ожидалась {(count, *shape)}.'
                )

    @classmethod
    def from_gaussians(cls, gaussians, bounds=None):
        columns = list(zip(*gaussians)) if gaussians else [
            np.empty((0, *shape)) for shape in PARAM_SHAPES.values()
        ]
        kwargs = {name: np.array(column, dtype=np.float64).reshape(
            len(gaussians), *PARAM_SHAPES[name])
            for name, column in zip(PARAM_GROUPS, columns)}
        if bounds is not None:
            kwargs['bounds'] = bounds
        return cls(**kwargs)

    def __len__(self):
        return int(self.xyz.shape[0])

    def __getitem__(self, index) -> Gaussian:
        return Gaussian(self.xyz[index].copy(), float(self.color[index]),
                        float(self.opacity[index]),
                        self.rotation[index].copy(),
                        self.scaling[index].copy())

    @property
    def extent(self) -> float:
        """Диагональ рамки инициализации."""
        return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))

    @property
    def get_opacity(self):
        return sigmoid(self.opacity)

    @property
    def get_scaling(self):
        return np.exp(self.scaling)

    @property
    def get_color(self):
        return sigmoid(self.color)

    @property
    def get_rotation(self):
        return normalize_quaternion(self.rotation)

    def get_covariance(self):
        return build_covariance(self.rotation, self.get_scaling)

    def parameters(self):
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def copy(self):
        return GaussianScene(**self.parameters(), bounds=self.bounds)

    def select(self, mask):
        return GaussianScene(
            **{name: value[mask] for name, value in self.parameters().items()},
            bounds=self.bounds,
        )

    def extend(self, other: 'GaussianScene'):
        return GaussianScene(
            **{name: np.concatenate([value, getattr(other, name)])
               for name, value in self.parameters().items()},
            bounds=self.bounds,
        )

    def is_finite(self):
        return all(np.all(np.isfinite(value))
                   for value in self.parameters().values())


def random_init(count: int, bounds=None, seed: int = 0,
                scale_fraction: float = None,
                opacity: float = None) -> GaussianScene:
    """Равномерно случайные гауссианы в рамке (вместо SfM-облака)."""
    if count < 1:
        raise ValidationError('Число гауссианов должно быть не меньше 1.')
    bounds = np.array(settings.SCENE['BOUNDS'] if bounds is None else bounds,
                      dtype=np.float64).reshape(2, 3)
    size = bounds[1] - bounds[0]
    if np.any(size <= 0):
        raise ValidationError(f'Рамка {bounds.tolist()} имеет нулевой объём.')
    scale_fraction = (settings.SCENE['INIT_SCALE_FRACTION']
                      if scale_fraction is None else scale_fraction)
    opacity = settings.SCENE['INIT_OPACITY'] if opacity is None else opacity

    rng = np.random.default_rng(seed)
    xyz = rng.uniform(bounds[0], bounds[1], size=(count, 3))
    scale = scale_fraction * float(np.linalg.norm(size))
    rotation = np.zeros((count, 4))
    rotation[:, 0] = 1.0
    scene = GaussianScene(
        xyz=xyz,
        color=np.zeros(count),
        opacity=np.full(count, inverse_sigmoid(opacity)),
        rotation=rotation,
        scaling=np.full((count, 3), np.log(scale)),
        bounds=bounds,
    )
    logger.info('Initialised %d random gaussians (scale %.4f)', count, scale)
    return scene
