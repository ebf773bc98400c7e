import logging
import os

import cv2
import numpy as np
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)


def to_uint8(image) -> np.ndarray:
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(image * 255.0).astype(np.uint8)


def write_png(path, image) -> None:
    if not cv2.imwrite(os.fspath(path), to_uint8(image)):
        raise OSError(f'Не удалось записать {path}.')


def read_png(path) -> np.ndarray:
    """Серое изображение в [0, 1]; цветные кадры переводятся в яркость."""
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValidationError(f'Не удалось прочитать изображение {path}.')
    if raw.ndim == 3:
        code = (cv2.COLOR_BGRA2GRAY if raw.shape[2] == 4
                else cv2.COLOR_BGR2GRAY)
        raw = cv2.cvtColor(raw, code)
    peak = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(np.float64) / peak


def write_raw(path, image) -> None:
    """Дамп float32, little-endian, построчно."""
    np.ascontiguousarray(image, dtype='<f4').tofile(os.fspath(path))


def read_raw(path, resolution) -> np.ndarray:
    width, height = resolution
    values = np.fromfile(os.fspath(path), dtype='<f4')
    if values.size != width * height:
        raise ValidationError(
            f'В {path} {values.size} значений, ожидалось {width * height}.'
        )
    return values.reshape(height, width).astype(np.float64)


def read_png_sequence(directory, count=None):
    """Кадры directory в порядке имён файлов."""
    names = sorted(name for name in os.listdir(directory)
                   if name.lower().endswith('.png'))
    if count is not None and len(names) != count:
        raise ValidationError(
            f'В {directory} {len(names)} кадров, ожидалось {count}.'
        )
    frames = np.stack([read_png(os.path.join(directory, name))
                       for name in names]) if names else np.empty((0, 0, 0))
    logger.info('Read %d frames from %s', len(names), directory)
    return frames


def write_png_sequence(directory, frames, pattern='{:06d}.png'):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for index, frame in enumerate(frames):
        path = os.path.join(directory, pattern.format(index))
        write_png(path, frame)
        paths.append(path)
    return paths
