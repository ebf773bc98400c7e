import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from training.supervision import log_image

from .stream import EventStream, accumulate, canonical_threshold

logger = logging.getLogger(__name__)

# Относительный допуск пересечения уровня: скачок ровно на A (с точностью
# до округления) даёт одно событие.
CROSSING_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SimConfig:
    """Параметры модели срабатывания пикселя."""

    contrast_threshold: float = 0.25
    refractory_us: int = 0
    noise_rate: float = 0.0
    gamma: float = 2.2
    epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, 'contrast_threshold',
                           canonical_threshold(self.contrast_threshold))
        if not self.contrast_threshold > 0:
            raise ValidationError('Порог контраста A должен быть больше нуля.')
        if self.refractory_us < 0:
            raise ValidationError('Рефрактерный период не может быть '
                                  'отрицательным.')
        if self.noise_rate < 0:
            raise ValidationError('Интенсивность шума не может быть '
                                  'отрицательной.')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'contrast_threshold': settings.SIMULATION['CONTRAST_THRESHOLD'],
            'refractory_us': settings.SIMULATION['REFRACTORY_US'],
            'noise_rate': settings.SIMULATION['NOISE_RATE'],
            'gamma': settings.LOSS['GAMMA'],
            'epsilon': settings.LOSS['EPSILON'],
        }
        values.update(overrides)
        return cls(**values)


def _validate_sequence(frames, times):
    frames = np.asarray(frames, dtype=np.float64)
    times = np.asarray(times, dtype=np.int64)
    if frames.ndim != 3:
        raise ValidationError('Кадры должны иметь форму (T, H, W).')
    if frames.shape[0] != times.shape[0]:
        raise ValidationError('Число кадров не совпадает с числом меток '
                              'времени.')
    if frames.shape[0] < 2:
        raise ValidationError('Нужно хотя бы два кадра.')
    if np.any(np.diff(times) <= 0):
        raise ValidationError('Метки времени кадров должны строго возрастать.')
    return frames, times


def _interval_crossings(ref, log_a, log_b, t_a, t_b, threshold):
    """Пересечения уровней ref ± kA линейным сигналом на [t_a, t_b]."""
    direction = np.sign(log_b - log_a)
    distance = direction * (log_b - ref) / threshold
    counts = np.where(
        direction != 0,
        np.floor(np.maximum(distance, 0.0) + CROSSING_TOLERANCE),
        0,
    ).astype(np.int64)

    pixels = np.flatnonzero(counts)
    per_pixel = counts[pixels]
    repeated = np.repeat(pixels, per_pixel)
    starts = np.repeat(np.cumsum(per_pixel) - per_pixel, per_pixel)
    level_index = np.arange(repeated.size) - starts + 1

    sign = direction[repeated]
    levels = ref[repeated] + sign * level_index * threshold
    fraction = (levels - log_a[repeated]) / (log_b[repeated] - log_a[repeated])
    fraction = np.clip(fraction, 0.0, 1.0)
    stamps = t_a + np.floor(fraction * (t_b - t_a)).astype(np.int64)

    ref[pixels] += direction[pixels] * per_pixel * threshold
    return repeated, stamps, sign.astype(np.int8)


def _apply_refractory(pixels, stamps, refractory_us):
    """Убирает события пикселя, пришедшие раньше refractory_us после
    предыдущего сохранённого."""
    order = np.lexsort((np.arange(pixels.size), stamps, pixels))
    keep = np.zeros(pixels.size, dtype=bool)
    last_pixel, last_stamp = -1, 0
    for index in order:
        pixel, stamp = pixels[index], stamps[index]
        if pixel != last_pixel or stamp - last_stamp >= refractory_us:
            keep[index] = True
            last_pixel, last_stamp = pixel, stamp
    return keep


def _noise_events(shape, t_first, t_last, rate, rng):
    height, width = shape
    duration_s = (t_last - t_first) / 1e6
    count = int(rng.poisson(rate * width * height * duration_s))
    x = rng.integers(0, width, count)
    y = rng.integers(0, height, count)
    t = rng.integers(t_first, t_last + 1, count)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), count)
    return t, x, y, p


def frames_to_events(frames, times: Sequence[int], cfg: SimConfig = None,
                     seed: int = 0) -> EventStream:
    """Поток событий из последовательности кадров в оттенках серого."""
    cfg = cfg or SimConfig.from_settings()
    frames, times = _validate_sequence(frames, times)
    _, height, width = frames.shape
    log_frames = log_image(frames, cfg).reshape(frames.shape[0], -1)
    threshold = cfg.contrast_threshold

    ref = log_frames[0].copy()
    pixels, stamps, polarity = [], [], []
    for index in range(frames.shape[0] - 1):
        crossing_pixels, crossing_stamps, crossing_polarity = (
            _interval_crossings(
                ref, log_frames[index], log_frames[index + 1],
                int(times[index]), int(times[index + 1]), threshold,
            )
        )
        pixels.append(crossing_pixels)
        stamps.append(crossing_stamps)
        polarity.append(crossing_polarity)

    pixels = np.concatenate(pixels)
    stamps = np.concatenate(stamps)
    polarity = np.concatenate(polarity)
    if cfg.refractory_us > 0 and pixels.size:
        keep = _apply_refractory(pixels, stamps, cfg.refractory_us)
        pixels, stamps, polarity = pixels[keep], stamps[keep], polarity[keep]

    t, x, y, p = stamps, pixels % width, pixels // width, polarity
    if cfg.noise_rate > 0:
        rng = np.random.default_rng(seed)
        noise = _noise_events((height, width), int(times[0]),
                              int(times[-1]), cfg.noise_rate, rng)
        t, x, y, p = (np.concatenate([signal, extra])
                      for signal, extra in zip((t, x, y, p), noise))
        logger.info('Injected %d noise events', noise[0].size)

    stream = EventStream.from_arrays((width, height), threshold, t, x, y, p)
    logger.info('Simulated %d events from %d frames', len(stream),
                frames.shape[0])
    return stream


def roundtrip_check(frames, times: Sequence[int], cfg: SimConfig = None,
                    seed: int = 0) -> float:
    """Максимальная по пикселям ошибка |A * E - (L_end - L_start)|."""
    cfg = cfg or SimConfig.from_settings()
    stream = frames_to_events(frames, times, cfg, seed)
    return roundtrip_residual(stream, frames, times, cfg)


def roundtrip_residual(stream: EventStream, frames, times,
                       cfg: SimConfig) -> float:
    frames, times = _validate_sequence(frames, times)
    polarity_sum = accumulate(stream, int(times[0]), int(times[-1]) + 1)
    log_change = log_image(frames[-1], cfg) - log_image(frames[0], cfg)
    residual = np.abs(cfg.contrast_threshold * polarity_sum - log_change)
    return float(residual.max())
