"""Тайловый растеризатор гауссианов с аналитическим обратным проходом.

Прямой проход: отсечение, проекция ковариаций, глобальная сортировка по
глубине, списки сплатов по тайлам 16x16 и альфа-смешивание спереди назад.
Обратный проход пересчитывает смешивание в том же порядке и протягивает
градиент через веса, двумерный гауссиан, Sigma', Sigma, активации и
якобиан проекции.
"""
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scene.cameras import CameraView
from scene.gaussians import (GaussianScene, build_rotation,
                             normalize_quaternion, projection_jacobian,
                             rotation_jacobian, sigmoid)

logger = logging.getLogger(__name__)

# Столбцы частичных градиентов одного тайла.
D_U, D_V, D_CONIC_A, D_CONIC_B, D_CONIC_C, D_OPACITY, D_COLOR = range(7)


@dataclass(frozen=True)
class RenderConfig:
    tile_size: int = 16
    near_plane: float = 0.01
    low_pass_floor: float = 0.3
    footprint_sigmas: float = 3.0
    alpha_max: float = 0.99
    transmittance_min: float = 1e-4
    chunk_size: int = 512
    background: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.tile_size < 1 or self.chunk_size < 1 or self.workers < 1:
            raise ValidationError('Размер тайла, размер пачки и число '
                                  'потоков должны быть не меньше 1.')
        if not 0.0 <= self.background <= 1.0:
            raise ValidationError('Цвет фона должен лежать в [0, 1].')
        if not 0.0 < self.alpha_max < 1.0:
            raise ValidationError('Ограничение альфы должно лежать в (0, 1).')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'tile_size': settings.RENDER['TILE_SIZE'],
            'near_plane': settings.RENDER['NEAR_PLANE'],
            'low_pass_floor': settings.RENDER['LOW_PASS_FLOOR'],
            'footprint_sigmas': settings.RENDER['FOOTPRINT_SIGMAS'],
            'alpha_max': settings.RENDER['ALPHA_MAX'],
            'transmittance_min': settings.RENDER['TRANSMITTANCE_MIN'],
            'chunk_size': settings.RENDER['CHUNK_SIZE'],
            'background': settings.RENDER['BACKGROUND'],
            'workers': settings.RENDER['WORKERS'],
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class Projection:
    """Видимые гауссианы в порядке глубины и их промежуточные величины."""

    ids: np.ndarray
    mean_cam: np.ndarray
    mean2d: np.ndarray
    sigma2: np.ndarray
    conic: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    radius: np.ndarray
    unit_rotation: np.ndarray
    quat_norm: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    sigma: np.ndarray
    jacobian: np.ndarray
    transform: np.ndarray
    tile_offsets: np.ndarray
    tile_splats: np.ndarray

    def __len__(self):
        return int(self.ids.shape[0])


@dataclass
class RenderResult:
    image: np.ndarray
    transmittance: np.ndarray
    projection: Projection
    tag: str

    @property
    def visible(self):
        return self.projection.ids


@dataclass
class ParamGradients:
    xyz: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    rotation: np.ndarray
    scaling: np.ndarray
    mean2d_norm: np.ndarray
    visible: np.ndarray

    def as_dict(self):
        return {
            'xyz': self.xyz,
            'color': self.color,
            'opacity': self.opacity,
            'rotation': self.rotation,
            'scaling': self.scaling,
        }


def render_tag(scene: GaussianScene, view: CameraView,
               cfg: RenderConfig) -> str:
    digest = hashlib.blake2b(digest_size=16)
    for value in scene.parameters().values():
        digest.update(np.ascontiguousarray(value).tobytes())
    digest.update(view.rotation.tobytes())
    digest.update(view.translation.tobytes())
    digest.update(repr(view.intrinsics).encode())
    digest.update(repr(replace(cfg, workers=1)).encode())
    return digest.hexdigest()


def _tile_grid(view: CameraView, tile_size: int):
    width, height = view.intrinsics.resolution
    return -(-width // tile_size), -(-height // tile_size)


def _assign_tiles(mean2d, radius, view, cfg):
    """Списки сплатов по тайлам; внутри тайла сохраняется порядок глубины."""
    width, height = view.intrinsics.resolution
    tiles_x, tiles_y = _tile_grid(view, cfg.tile_size)
    col_min = np.clip(np.ceil(mean2d[:, 0] - radius), 0, width - 1)
    col_max = np.clip(np.floor(mean2d[:, 0] + radius), 0, width - 1)
    row_min = np.clip(np.ceil(mean2d[:, 1] - radius), 0, height - 1)
    row_max = np.clip(np.floor(mean2d[:, 1] + radius), 0, height - 1)
    tx_min = col_min.astype(np.int64) // cfg.tile_size
    tx_max = col_max.astype(np.int64) // cfg.tile_size
    ty_min = row_min.astype(np.int64) // cfg.tile_size
    ty_max = row_max.astype(np.int64) // cfg.tile_size

    span_x = tx_max - tx_min + 1
    counts = span_x * (ty_max - ty_min + 1)
    splats = np.repeat(np.arange(mean2d.shape[0]), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(splats.size) - starts
    tile_ids = ((ty_min[splats] + local // span_x[splats]) * tiles_x
                + tx_min[splats] + local % span_x[splats])

    order = np.argsort(tile_ids, kind='stable')
    tile_offsets = np.searchsorted(tile_ids[order],
                                   np.arange(tiles_x * tiles_y + 1))
    return tile_offsets, splats[order]


def project(scene: GaussianScene, view: CameraView,
            cfg: RenderConfig) -> Projection:
    intrinsics = view.intrinsics
    width, height = intrinsics.resolution
    mean_cam = view.to_camera(scene.xyz)
    depth = mean_cam[:, 2]
    candidates = np.flatnonzero(depth > cfg.near_plane)

    quat_norm = np.linalg.norm(scene.rotation[candidates], axis=-1)
    unit_rotation = normalize_quaternion(scene.rotation[candidates])
    rotation = build_rotation(unit_rotation)
    scale = np.exp(scene.scaling[candidates])
    factor = rotation * scale[:, None, :]
    sigma = factor @ np.swapaxes(factor, -1, -2)
    jacobian = projection_jacobian(mean_cam[candidates], intrinsics.focal)
    transform = jacobian @ view.rotation
    sigma2 = transform @ sigma @ np.swapaxes(transform, -1, -2)
    sigma2 = sigma2 + cfg.low_pass_floor * np.eye(2)

    a = sigma2[:, 0, 0]
    b = sigma2[:, 0, 1]
    c = sigma2[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=-1)
    lambda_max = 0.5 * (a + c) + np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    radius = cfg.footprint_sigmas * np.sqrt(lambda_max)

    local = mean_cam[candidates]
    mean2d = np.stack([
        intrinsics.fx * local[:, 0] / local[:, 2] + intrinsics.cx,
        intrinsics.fy * local[:, 1] / local[:, 2] + intrinsics.cy,
    ], axis=-1)
    on_screen = (
        (np.floor(mean2d[:, 0] + radius) >= 0)
        & (np.ceil(mean2d[:, 0] - radius) <= width - 1)
        & (np.floor(mean2d[:, 1] + radius) >= 0)
        & (np.ceil(mean2d[:, 1] - radius) <= height - 1)
    )

    keep = np.flatnonzero(on_screen)
    keep = keep[np.argsort(depth[candidates[keep]], kind='stable')]
    ids = candidates[keep]
    tile_offsets, tile_splats = _assign_tiles(mean2d[keep], radius[keep],
                                              view, cfg)
    return Projection(
        ids=ids,
        mean_cam=mean_cam[ids],
        mean2d=mean2d[keep],
        sigma2=np.stack([a, b, c], axis=-1)[keep],
        conic=conic[keep],
        opacity=sigmoid(scene.opacity[ids]),
        color=sigmoid(scene.color[ids]),
        radius=radius[keep],
        unit_rotation=unit_rotation[keep],
        quat_norm=quat_norm[keep],
        rotation=rotation[keep],
        scale=scale[keep],
        sigma=sigma[keep],
        jacobian=jacobian[keep],
        transform=transform[keep],
        tile_offsets=tile_offsets,
        tile_splats=tile_splats,
    )


def _tile_pixels(tile, view, tile_size):
    width, height = view.intrinsics.resolution
    tiles_x, _ = _tile_grid(view, tile_size)
    x0 = (tile % tiles_x) * tile_size
    y0 = (tile // tiles_x) * tile_size
    x1, y1 = min(x0 + tile_size, width), min(y0 + tile_size, height)
    rows, cols = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1),
                             indexing='ij')
    return (slice(y0, y1), slice(x0, x1)), cols.ravel(), rows.ravel()


def _splat_weights(proj, splats, cols, rows, cfg):
    dx = cols[:, None] - proj.mean2d[splats, 0][None, :]
    dy = rows[:, None] - proj.mean2d[splats, 1][None, :]
    conic = proj.conic[splats]
    power = (conic[:, 0] * dx * dx + 2.0 * conic[:, 1] * dx * dy
             + conic[:, 2] * dy * dy)
    # вне эллипса footprint_sigmas вклад сплата равен нулю
    g = np.where(power <= cfg.footprint_sigmas ** 2, np.exp(-0.5 * power),
                 0.0)
    raw_alpha = proj.opacity[splats][None, :] * g
    return dx, dy, g, raw_alpha


def _transmittance_before(start, alpha):
    survive = np.cumprod(1.0 - alpha, axis=1)
    return start[:, None] * np.concatenate(
        [np.ones((alpha.shape[0], 1)), survive[:, :-1]], axis=1)


def _chunks(proj, tile, cfg):
    splats = proj.tile_splats[proj.tile_offsets[tile]:
                              proj.tile_offsets[tile + 1]]
    for start in range(0, splats.size, cfg.chunk_size):
        yield splats[start:start + cfg.chunk_size]


def _composite_tile(proj, view, cfg, tile):
    window, cols, rows = _tile_pixels(tile, view, cfg.tile_size)
    transmittance = np.ones(cols.size)
    color = np.zeros(cols.size)
    for splats in _chunks(proj, tile, cfg):
        *_, raw_alpha = _splat_weights(proj, splats, cols, rows, cfg)
        alpha = np.minimum(cfg.alpha_max, raw_alpha)
        before = _transmittance_before(transmittance, alpha)
        alpha = np.where(before >= cfg.transmittance_min, alpha, 0.0)
        color += np.sum(alpha * before * proj.color[splats], axis=1)
        transmittance = transmittance * np.prod(1.0 - alpha, axis=1)
        if np.all(transmittance < cfg.transmittance_min):
            break
    return window, color + cfg.background * transmittance, transmittance


def _map_tiles(function, tiles, workers):
    if workers == 1:
        return list(map(function, tiles))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, tiles))


def render(scene: GaussianScene, view: CameraView,
           cfg: RenderConfig = None) -> RenderResult:
    """Изображение сцены из ракурса view."""
    cfg = cfg or RenderConfig.from_settings()
    if len(scene) == 0:
        raise ValidationError('Нельзя отрисовать пустую сцену.')
    width, height = view.intrinsics.resolution
    proj = project(scene, view, cfg)
    image = np.full((height, width), float(cfg.background))
    transmittance = np.ones((height, width))

    counts = np.diff(proj.tile_offsets)
    tiles = np.flatnonzero(counts)
    for window, values, final in _map_tiles(
            lambda tile: _composite_tile(proj, view, cfg, tile),
            tiles, cfg.workers):
        shape = (window[0].stop - window[0].start,
                 window[1].stop - window[1].start)
        image[window] = values.reshape(shape)
        transmittance[window] = final.reshape(shape)
    logger.debug('Rendered %d of %d gaussians over %d tiles', len(proj),
                 len(scene), tiles.size)
    return RenderResult(image, transmittance, proj,
                        render_tag(scene, view, cfg))


def render_grayscale_pair(scene: GaussianScene, view_0: CameraView,
                          view_k: CameraView, cfg: RenderConfig = None
                          ) -> Tuple[RenderResult, RenderResult]:
    return render(scene, view_0, cfg), render(scene, view_k, cfg)


def _backward_tile(proj, view, cfg, image, d_image, tile):
    window, cols, rows = _tile_pixels(tile, view, cfg.tile_size)
    d_pixel = d_image[window].ravel()
    final = image[window].ravel()
    transmittance = np.ones(cols.size)
    prefix = np.zeros(cols.size)
    indices, partials = [], []
    for splats in _chunks(proj, tile, cfg):
        dx, dy, g, raw_alpha = _splat_weights(proj, splats, cols, rows,
                                              cfg)
        alpha = np.minimum(cfg.alpha_max, raw_alpha)
        before = _transmittance_before(transmittance, alpha)
        live = before >= cfg.transmittance_min
        alpha = np.where(live, alpha, 0.0)
        color = proj.color[splats][None, :]
        weight = alpha * before
        accumulated = prefix[:, None] + np.cumsum(weight * color, axis=1)
        behind = final[:, None] - accumulated

        d_alpha = d_pixel[:, None] * (color * before
                                      - behind / (1.0 - alpha))
        d_alpha = np.where(live & (raw_alpha < cfg.alpha_max), d_alpha, 0.0)
        # dL/dg, уже умноженный на g
        d_g = d_alpha * proj.opacity[splats][None, :] * g
        conic = proj.conic[splats]

        partial = np.empty((splats.size, 7))
        partial[:, D_U] = np.sum(d_g * (conic[:, 0] * dx + conic[:, 1] * dy),
                                 axis=0)
        partial[:, D_V] = np.sum(d_g * (conic[:, 1] * dx + conic[:, 2] * dy),
                                 axis=0)
        partial[:, D_CONIC_A] = -0.5 * np.sum(d_g * dx * dx, axis=0)
        partial[:, D_CONIC_B] = -np.sum(d_g * dx * dy, axis=0)
        partial[:, D_CONIC_C] = -0.5 * np.sum(d_g * dy * dy, axis=0)
        partial[:, D_OPACITY] = np.sum(d_alpha * g, axis=0)
        partial[:, D_COLOR] = np.sum(d_pixel[:, None] * weight, axis=0)
        indices.append(splats)
        partials.append(partial)

        prefix = accumulated[:, -1]
        transmittance = transmittance * np.prod(1.0 - alpha, axis=1)
        if np.all(transmittance < cfg.transmittance_min):
            break
    return np.concatenate(indices), np.concatenate(partials)


def _sigma2_gradient(proj, partial):
    """Градиент по (a, b, c) = Sigma'[0,0], Sigma'[0,1], Sigma'[1,1]."""
    a, b, c = proj.sigma2.T
    d_conic_a = partial[:, D_CONIC_A]
    d_conic_b = partial[:, D_CONIC_B]
    d_conic_c = partial[:, D_CONIC_C]
    det = a * c - b * b
    det2 = det * det
    grad_a = (d_conic_a * (-c * c / det2) + d_conic_b * (b * c / det2)
              + d_conic_c * (1.0 / det - a * c / det2))
    grad_b = (d_conic_a * (2.0 * b * c / det2)
              + d_conic_b * (-1.0 / det - 2.0 * b * b / det2)
              + d_conic_c * (2.0 * a * b / det2))
    grad_c = (d_conic_a * (1.0 / det - a * c / det2)
              + d_conic_b * (a * b / det2) + d_conic_c * (-a * a / det2))
    return grad_a, grad_b, grad_c


def _chain_to_parameters(proj, view, partial):
    fx, fy = view.intrinsics.focal
    width, height = view.intrinsics.resolution
    grad_a, grad_b, grad_c = _sigma2_gradient(proj, partial)
    d_sigma2 = np.empty((len(proj), 2, 2))
    d_sigma2[:, 0, 0] = grad_a
    d_sigma2[:, 0, 1] = d_sigma2[:, 1, 0] = 0.5 * grad_b
    d_sigma2[:, 1, 1] = grad_c

    transform = proj.transform
    d_sigma = np.swapaxes(transform, -1, -2) @ d_sigma2 @ transform
    d_transform = 2.0 * d_sigma2 @ transform @ proj.sigma
    d_jacobian = d_transform @ view.rotation.T

    x, y, z = proj.mean_cam.T
    d_u, d_v = partial[:, D_U], partial[:, D_V]
    d_cam = np.stack([
        d_u * fx / z + d_jacobian[:, 0, 2] * (-fx / z ** 2),
        d_v * fy / z + d_jacobian[:, 1, 2] * (-fy / z ** 2),
        (-d_u * fx * x / z ** 2 - d_v * fy * y / z ** 2
         - d_jacobian[:, 0, 0] * fx / z ** 2
         + d_jacobian[:, 0, 2] * 2.0 * fx * x / z ** 3
         - d_jacobian[:, 1, 1] * fy / z ** 2
         + d_jacobian[:, 1, 2] * 2.0 * fy * y / z ** 3),
    ], axis=-1)
    d_xyz = d_cam @ view.rotation

    factor = proj.rotation * proj.scale[:, None, :]
    d_factor = 2.0 * d_sigma @ factor
    d_rotation = d_factor * proj.scale[:, None, :]
    d_scale = np.sum(d_factor * proj.rotation, axis=1)
    d_unit = np.einsum('kaij,kij->ka', rotation_jacobian(proj.unit_rotation),
                       d_rotation)
    unit = proj.unit_rotation
    d_quat = (d_unit - unit * np.sum(unit * d_unit, axis=-1, keepdims=True)) \
        / proj.quat_norm[:, None]

    opacity, color = proj.opacity, proj.color
    mean2d_norm = np.hypot(d_u * 0.5 * width, d_v * 0.5 * height)
    return {
        'xyz': d_xyz,
        'color': partial[:, D_COLOR] * color * (1.0 - color),
        'opacity': partial[:, D_OPACITY] * opacity * (1.0 - opacity),
        'rotation': d_quat,
        'scaling': d_scale * proj.scale,
        'mean2d_norm': mean2d_norm,
    }


def render_backward(scene: GaussianScene, view: CameraView,
                    result: RenderResult, d_image,
                    cfg: RenderConfig = None) -> ParamGradients:
    """Градиент L = sum(d_image * image) по всем параметрам сцены."""
    cfg = cfg or RenderConfig.from_settings()
    if result.tag != render_tag(scene, view, cfg):
        raise ValidationError('Результат отрисовки не соответствует сцене, '
                              'ракурсу или настройкам.')
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != result.image.shape:
        raise ValidationError(
            f'Градиент изображения {d_image.shape} не совпадает с '
            f'изображением {result.image.shape}.'
        )
    proj = result.projection
    count = len(scene)
    grads = ParamGradients(
        xyz=np.zeros((count, 3)),
        color=np.zeros(count),
        opacity=np.zeros(count),
        rotation=np.zeros((count, 4)),
        scaling=np.zeros((count, 3)),
        mean2d_norm=np.zeros(count),
        visible=np.zeros(count, dtype=bool),
    )
    if len(proj) == 0:
        return grads

    partial = np.zeros((len(proj), 7))
    tiles = np.flatnonzero(np.diff(proj.tile_offsets))
    for splats, values in _map_tiles(
            lambda tile: _backward_tile(proj, view, cfg, result.image,
                                        d_image, tile),
            tiles, cfg.workers):
        partial[splats] += values

    chained = _chain_to_parameters(proj, view, partial)
    for name in ('xyz', 'color', 'opacity', 'rotation', 'scaling',
                 'mean2d_norm'):
        getattr(grads, name)[proj.ids] = chained[name]
    grads.visible[proj.ids] = True
    return grads
