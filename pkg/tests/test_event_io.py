import struct

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from events.io import (HEADER, decode_events, decode_header, encode_events,
                       read_events, read_events_csv, read_header,
                       write_events, write_events_csv)
from events.simulator import SimConfig
from events.stream import Event, EventStream


class TestEventFile:

    def test_empty_stream_size(self):
        payload = encode_events(EventStream.empty((346, 260), 0.25))
        assert len(payload) == 24, (
            'Проверьте, что пустой файл событий состоит из заголовка и '
            'счётчика: 4+4+2+2+4+8 байт'
        )
        assert HEADER.size == 24

    def test_hand_built_record(self):
        payload = (b'SWEV' + struct.pack('<I', 1) + struct.pack('<HH', 64, 48)
                   + struct.pack('<f', 0.25) + struct.pack('<Q', 1)
                   + struct.pack('<QHHb', 123_456, 7, 9, -1) + b'\x00' * 3)
        stream = decode_events(payload)
        assert stream.resolution == (64, 48)
        assert stream.contrast_threshold == 0.25
        assert list(stream) == [Event(x=7, y=9, t=123_456, p=-1)], (
            'Проверьте разбор записи {t: u64, x: u16, y: u16, p: i8, pad}'
        )
        assert encode_events(stream) == payload

    def test_record_size(self):
        stream = EventStream.from_events((8, 8), 0.5, [Event(1, 2, 3, 1)])
        assert len(encode_events(stream)) == 24 + 16

    def test_bad_magic(self):
        payload = bytearray(encode_events(EventStream.empty((8, 8), 0.5)))
        payload[:4] = b'XXXX'
        with pytest.raises(ValidationError, match='смещению 0'):
            decode_events(bytes(payload))

    def test_bad_version(self):
        payload = bytearray(encode_events(EventStream.empty((8, 8), 0.5)))
        payload[4:8] = struct.pack('<I', 99)
        with pytest.raises(ValidationError, match='смещению 4'):
            decode_events(bytes(payload))

    def test_truncated(self):
        stream = EventStream.from_events((8, 8), 0.5, [Event(1, 2, 3, 1)])
        payload = encode_events(stream)
        with pytest.raises(ValidationError):
            decode_events(payload[:-1])
        with pytest.raises(ValidationError):
            decode_header(payload[:10])

    def test_fuzzed_rewrite_is_byte_identical(self, rng):
        for _ in range(1_000):
            count = int(rng.integers(0, 40))
            width, height = (int(v) for v in rng.integers(1, 400, 2))
            stream = EventStream.from_arrays(
                (width, height), float(rng.uniform(0.05, 1.0)),
                rng.integers(0, 2 ** 40, count),
                rng.integers(0, width, count),
                rng.integers(0, height, count),
                rng.choice([-1, 1], count),
            )
            payload = encode_events(stream)
            decoded = decode_events(payload)
            assert encode_events(decoded) == payload, (
                'Проверьте, что запись после чтения побайтно совпадает'
            )
            assert decoded == stream, (
                'Проверьте, что чтение записанного потока даёт равный поток'
            )

    def test_files(self, tmp_path):
        stream = EventStream.from_events((16, 12), 0.25, [
            Event(1, 2, 10, 1), Event(15, 11, 20, -1),
        ])
        path = tmp_path / 'events.swev'
        write_events(path, stream)
        assert read_events(path) == stream
        assert read_header(path)[:2] == (16, 12)


class TestEventCsv:

    def test_round_trip(self, tmp_path, rng):
        stream = EventStream.from_arrays(
            (32, 32), 0.25, rng.integers(0, 10 ** 6, 200),
            rng.integers(0, 32, 200), rng.integers(0, 32, 200),
            rng.choice([-1, 1], 200),
        )
        path = tmp_path / 'events.csv'
        write_events_csv(path, stream)
        assert path.read_text().splitlines()[0] == 't_us,x,y,p'
        assert read_events_csv(path, (32, 32), 0.25) == stream

    def test_empty(self, tmp_path):
        path = tmp_path / 'events.csv'
        write_events_csv(path, EventStream.empty((4, 4), 0.25))
        assert len(read_events_csv(path, (4, 4), 0.25)) == 0

    def test_out_of_range_rejected(self, tmp_path):
        path = tmp_path / 'events.csv'
        path.write_text('t_us,x,y,p\n0,9,0,1\n')
        with pytest.raises(ValidationError):
            read_events_csv(path, (4, 4), 0.25)

    def test_threshold_round_trip(self):
        stream = EventStream.from_events((4, 4), 0.1, [Event(1, 2, 5, -1)])
        assert stream.contrast_threshold == float(np.float32(0.1))
        decoded = decode_events(encode_events(stream))
        assert decoded == stream, (
            'Проверьте, что порог A не меняется при записи и чтении'
        )

    def test_simulator_threshold_matches_file(self):
        cfg = SimConfig(contrast_threshold=0.1)
        stream = EventStream.empty((4, 4), cfg.contrast_threshold)
        decoded = decode_events(encode_events(stream))
        assert decoded.contrast_threshold == cfg.contrast_threshold
