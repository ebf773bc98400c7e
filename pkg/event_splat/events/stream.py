from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from django.core.exceptions import ValidationError

# Сумма полярностей (E_gt) или предсказанная лог-разность (E_pred),
# массив формы (H, W).
AccumImage = np.ndarray


def canonical_threshold(value) -> float:
    """Порог A, точно представимый в float32 заголовка файла событий."""
    return float(np.float32(value))


class Event(NamedTuple):
    """Одно событие камеры: столбец, строка, время в мкс, полярность."""

    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """Неизменяемый поток событий, отсортированный по (t, y, x, p)."""

    resolution: Tuple[int, int]
    contrast_threshold: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        width, height = self.resolution
        if width <= 0 or height <= 0:
            raise ValidationError(
                f'Некорректное разрешение {self.resolution}.')
        if not canonical_threshold(self.contrast_threshold) > 0:
            raise ValidationError('Порог контраста A должен быть больше нуля.')

        arrays = {
            't': np.array(self.t, dtype=np.int64),
            'x': np.array(self.x, dtype=np.int32),
            'y': np.array(self.y, dtype=np.int32),
            'p': np.array(self.p, dtype=np.int8),
        }
        sizes = {array.shape for array in arrays.values()}
        if len(sizes) != 1 or len(sizes.pop()) != 1:
            raise ValidationError('Массивы t, x, y, p должны быть одномерными '
                                  'и одной длины.')
        for name, array in arrays.items():
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(
            self, 'resolution', (int(width), int(height)),
        )
        object.__setattr__(
            self, 'contrast_threshold',
            canonical_threshold(self.contrast_threshold),
        )

        if len(self) == 0:
            return
        if np.any(np.diff(self.t) < 0):
            raise ValidationError(
                'События должны быть упорядочены по времени.')
        if self.t[0] < 0:
            raise ValidationError('Отрицательная метка времени.')
        if (self.x.min() < 0 or self.x.max() >= width
                or self.y.min() < 0 or self.y.max() >= height):
            raise ValidationError('Координаты события вне разрешения потока.')
        if not np.all(np.abs(self.p) == 1):
            raise ValidationError('Полярность события должна быть -1 или +1.')

    @classmethod
    def from_arrays(cls, resolution, contrast_threshold, t, x, y, p):
        """Поток из неупорядоченных массивов с сортировкой по (t, y, x, p)."""
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        p = np.asarray(p, dtype=np.int8)
        order = np.lexsort((p, x, y, t))
        return cls(resolution, contrast_threshold,
                   t[order], x[order], y[order], p[order])

    @classmethod
    def from_events(cls, resolution, contrast_threshold,
                    events: Sequence[Event]):
        if not events:
            return cls.empty(resolution, contrast_threshold)
        x, y, t, p = (np.array(column) for column in zip(*events))
        return cls.from_arrays(resolution, contrast_threshold, t, x, y, p)

    @classmethod
    def empty(cls, resolution, contrast_threshold):
        return cls(resolution, contrast_threshold,
                   np.empty(0, np.int64), np.empty(0, np.int32),
                   np.empty(0, np.int32), np.empty(0, np.int8))

    def __len__(self):
        return int(self.t.shape[0])

    def __getitem__(self, index) -> Event:
        return Event(int(self.x[index]), int(self.y[index]),
                     int(self.t[index]), int(self.p[index]))

    def __iter__(self):
        return (self[index] for index in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.resolution == other.resolution
                and self.contrast_threshold == other.contrast_threshold
                and all(np.array_equal(getattr(self, name),
                                       getattr(other, name))
                        for name in ('t', 'x', 'y', 'p')))

    @property
    def shape(self):
        width, height = self.resolution
        return height, width

    def take(self, mask_or_index):
        """Подпоток из выбранных событий; порядок сохраняется."""
        return EventStream(self.resolution, self.contrast_threshold,
                           self.t[mask_or_index], self.x[mask_or_index],
                           self.y[mask_or_index], self.p[mask_or_index])

    def with_polarity(self, p):
        return EventStream(self.resolution, self.contrast_threshold,
                           self.t, self.x, self.y, p)

    def window(self, t_start, t_end):
        """Границы среза событий с t_start <= t < t_end."""
        lo = int(np.searchsorted(self.t, t_start, side='left'))
        hi = int(np.searchsorted(self.t, t_end, side='left'))
        return lo, max(lo, hi)


def _accumulate_range(stream: EventStream, lo: int, hi: int) -> np.ndarray:
    width, height = stream.resolution
    flat = stream.y[lo:hi].astype(np.int64) * width + stream.x[lo:hi]
    positive = np.bincount(flat[stream.p[lo:hi] > 0], minlength=width * height)
    negative = np.bincount(flat[stream.p[lo:hi] < 0], minlength=width * height)
    return (positive.astype(np.int64)
            - negative.astype(np.int64)).reshape(height, width)


def accumulate(stream: EventStream, t_start: int, t_end: int) -> AccumImage:
    """Попиксельная сумма полярностей за полуинтервал [t_start, t_end)."""
    if t_start > t_end:
        raise ValidationError(
            f'Некорректное окно: t_start={t_start} больше t_end={t_end}.'
        )
    lo, hi = stream.window(t_start, t_end)
    return _accumulate_range(stream, lo, hi)


def split_windows(stream: EventStream, t0: int,
                  view_times: Sequence[int]) -> list:
    """Накопленные изображения [t0, t_k) для каждого t_k из view_times."""
    view_times = np.asarray(view_times, dtype=np.int64)
    if view_times.size == 0:
        return []
    if view_times[0] < t0:
        raise ValidationError('Моменты ракурсов должны быть не раньше t0.')
    if np.any(np.diff(view_times) <= 0):
        raise ValidationError('Моменты ракурсов должны строго возрастать.')

    windows = []
    running = accumulate(stream, t0, int(view_times[0]))
    windows.append(running.copy())
    for previous, current in zip(view_times[:-1], view_times[1:]):
        running += accumulate(stream, int(previous), int(current))
        windows.append(running.copy())
    return windows
