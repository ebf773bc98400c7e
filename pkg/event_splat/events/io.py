import struct

import numpy as np
from django.core.exceptions import ValidationError

from .stream import EventStream

MAGIC = b'SWEV'
VERSION = 1
# magic, version, width, height, A, count
HEADER = struct.Struct('<4sIHHfQ')
RECORD = np.dtype([
    ('t', '<u8'),
    ('x', '<u2'),
    ('y', '<u2'),
    ('p', 'i1'),
    ('pad', 'V3'),
])
CSV_HEADER = 't_us,x,y,p'


def encode_events(stream: EventStream) -> bytes:
    width, height = stream.resolution
    records = np.zeros(len(stream), dtype=RECORD)
    records['t'] = stream.t
    records['x'] = stream.x
    records['y'] = stream.y
    records['p'] = stream.p
    header = HEADER.pack(MAGIC, VERSION, width, height,
                         stream.contrast_threshold, len(stream))
    return header + records.tobytes()


def decode_header(payload: bytes):
    """(width, height, A, count) из заголовка файла событий."""
    if len(payload) < HEADER.size:
        raise ValidationError(
            f'Файл событий обрезан: заголовок занимает {HEADER.size} байт, '
            f'получено {len(payload)}.'
        )
    magic, version, width, height, threshold, count = HEADER.unpack_from(
        payload)
    if magic != MAGIC:
        raise ValidationError(
            f'Неверная сигнатура {magic!r} по смещению 0, ожидалась {MAGIC!r}.'
        )
    if version != VERSION:
        raise ValidationError(
            f'Неподдерживаемая версия {version} по смещению 4.'
        )
    return width, height, float(threshold), count


def decode_events(payload: bytes) -> EventStream:
    width, height, threshold, count = decode_header(payload)
    expected = HEADER.size + count * RECORD.itemsize
    if len(payload) < expected:
        raise ValidationError(
            f'Файл событий обрезан: ожидалось {expected} байт, '
            f'получено {len(payload)} (обрыв на смещении {len(payload)}).'
        )
    records = np.frombuffer(payload, dtype=RECORD, count=count,
                            offset=HEADER.size)
    return EventStream(
        (width, height), float(threshold),
        records['t'].astype(np.int64), records['x'].astype(np.int32),
        records['y'].astype(np.int32), records['p'].astype(np.int8),
    )


def write_events(path, stream: EventStream) -> None:
    with open(path, 'wb') as f:
        f.write(encode_events(stream))


def read_events(path) -> EventStream:
    with open(path, 'rb') as f:
        return decode_events(f.read())


def read_header(path):
    with open(path, 'rb') as f:
        return decode_header(f.read(HEADER.size))


def write_events_csv(path, stream: EventStream) -> None:
    table = np.column_stack([stream.t, stream.x, stream.y, stream.p])
    np.savetxt(path, table.astype(np.int64), fmt='%d', delimiter=',',
               header=CSV_HEADER, comments='')


def read_events_csv(path, resolution, contrast_threshold) -> EventStream:
    table = np.loadtxt(path, dtype=np.int64, delimiter=',', skiprows=1,
                       ndmin=2)
    if table.size == 0:
        return EventStream.empty(resolution, contrast_threshold)
    if table.shape[1] != 4:
        raise ValidationError(f'Ожидались столбцы {CSV_HEADER}.')
    t, x, y, p = table.T
    return EventStream.from_arrays(resolution, contrast_threshold, t, x, y, p)
