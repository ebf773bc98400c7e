import logging

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .stream import EventStream

logger = logging.getLogger(__name__)


def neighborhood_offsets(radius: int):
    """Смещения (dx, dy) квадратной окрестности (2r+1)^2, включая центр."""
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing='ij')
    return dx.ravel(), dy.ravel()


def support_mask(stream: EventStream, tau: int, radius: int) -> np.ndarray:
    """Маска событий, у которых есть опора в окрестности за последние tau мкс.

    Для каждого смещения окрестности ищется последнее более раннее событие
    соседнего пикселя: ключи (пиксель, номер события) сортируются один раз,
    дальше всё решает searchsorted.
    """
    count = len(stream)
    supported = np.zeros(count, dtype=bool)
    if count == 0:
        return supported

    width, height = stream.resolution
    order_index = np.arange(count, dtype=np.int64)
    pixel = stream.y.astype(np.int64) * width + stream.x
    keys = np.sort(pixel * count + order_index)

    for dx, dy in zip(*neighborhood_offsets(radius)):
        nx = stream.x.astype(np.int64) + dx
        ny = stream.y.astype(np.int64) + dy
        inside = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
        target = ny[inside] * width + nx[inside]
        queries = target * count + order_index[inside]

        position = np.searchsorted(keys, queries, side='left') - 1
        found = position >= 0
        candidate = keys[np.maximum(position, 0)]
        found &= (candidate // count) == target
        previous = candidate % count

        close = np.zeros(target.shape, dtype=bool)
        close[found] = (stream.t[order_index[inside][found]]
                        - stream.t[previous[found]]) <= tau
        supported[np.flatnonzero(inside)[close]] = True
    return supported


def y_noise_filter(stream: EventStream, tau: int = None,
                   radius: int = None) -> EventStream:
    """Фильтр фоновой активности: оставляет события с опорой у соседей."""
    tau = settings.EVENTS['NOISE_FILTER_TAU_US'] if tau is None else tau
    radius = (settings.EVENTS['NOISE_FILTER_RADIUS']
              if radius is None else radius)
    if tau <= 0:
        raise ValidationError('Окно фильтра tau должно быть больше нуля.')
    if radius < 1:
        raise ValidationError('Радиус фильтра должен быть не меньше 1.')

    keep = support_mask(stream, int(tau), int(radius))
    filtered = stream.take(keep)
    logger.info(
        'y-noise filter: kept %d of %d events (tau=%d us, radius=%d)',
        len(filtered), len(stream), tau, radius,
    )
    return filtered
