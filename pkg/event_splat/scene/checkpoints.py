import logging
import struct

import numpy as np
from django.core.exceptions import ValidationError

from .gaussians import GaussianScene

logger = logging.getLogger(__name__)

MAGIC = b'SWGS'
VERSION = 1
HEADER = struct.Struct('<4sIQ')
RECORD_FLOATS = 14
RECORD = np.dtype(('<f4', (RECORD_FLOATS,)))


def encode_scene(scene: GaussianScene) -> bytes:
    """pos(3), color, opacity_logit, quat(4), log_scale(3), reserved(2)."""
    records = np.zeros((len(scene), RECORD_FLOATS), dtype='<f4')
    records[:, 0:3] = scene.xyz
    records[:, 3] = scene.color
    records[:, 4] = scene.opacity
    records[:, 5:9] = scene.rotation
    records[:, 9:12] = scene.scaling
    return HEADER.pack(MAGIC, VERSION, len(scene)) + records.tobytes()


def decode_scene(payload: bytes, bounds=None) -> GaussianScene:
    if len(payload) < HEADER.size:
        raise ValidationError(
            f'Чекпоинт обрезан: заголовок занимает {HEADER.size} байт.'
        )
    magic, version, count = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise ValidationError(
            f'Неверная сигнатура чекпоинта {magic!r} по смещению 0.'
        )
    if version != VERSION:
        raise ValidationError(
            f'Неподдерживаемая версия чекпоинта {version} по смещению 4.'
        )
    expected = HEADER.size + count * RECORD.itemsize
    if len(payload) < expected:
        raise ValidationError(
            f'Чекпоинт обрезан: ожидалось {expected} байт, '
            f'получено {len(payload)}.'
        )
    records = np.frombuffer(payload, dtype='<f4', count=count * RECORD_FLOATS,
                            offset=HEADER.size).reshape(count, RECORD_FLOATS)
    records = records.astype(np.float64)
    kwargs = {
        'xyz': records[:, 0:3],
        'color': records[:, 3],
        'opacity': records[:, 4],
        'rotation': records[:, 5:9],
        'scaling': records[:, 9:12],
    }
    if bounds is not None:
        kwargs['bounds'] = bounds
    return GaussianScene(**kwargs)


def save_scene(path, scene: GaussianScene) -> None:
    try:
        with open(path, 'wb') as f:
            f.write(encode_scene(scene))
    except OSError:
        logger.error('Failed to write checkpoint %s', path)
        raise
    logger.info('Saved %d gaussians to %s', len(scene), path)


def load_scene(path, bounds=None) -> GaussianScene:
    with open(path, 'rb') as f:
        return decode_scene(f.read(), bounds)
