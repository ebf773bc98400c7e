import os

import numpy as np
from django.core.exceptions import ValidationError
from events.io import (read_events, read_events_csv, write_events,
                       write_events_csv)
from render.images import read_png
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from .serializers import (DatasetManifestSerializer, PoseFileSerializer,
                          TrajectorySerializer)

MANIFEST_NAME = 'dataset.json'


def read_json(path):
    with open(path, 'rb') as f:
        return JSONParser().parse(f)


def write_json(path, data) -> None:
    with open(path, 'wb') as f:
        f.write(JSONRenderer().render(data, renderer_context={'indent': 2}))


def validated(serializer_class, data, **context):
    """Проверка данных сериализатором и сборка доменного объекта."""
    serializer = serializer_class(data=data, context=context)
    serializer.is_valid(raise_exception=True)
    return serializer.save()


def read_times(path) -> np.ndarray:
    times = np.loadtxt(path, dtype=np.int64, ndmin=1)
    if np.any(np.diff(times) <= 0):
        raise ValidationError(f'Моменты в {path} должны строго возрастать.')
    return times


def write_times(path, times) -> None:
    np.savetxt(path, np.asarray(times, dtype=np.int64), fmt='%d')


def write_poses(path, views) -> None:
    document = {'intrinsics': views[0].intrinsics, 'poses': views}
    write_json(path, PoseFileSerializer(document).data)


def read_poses(path):
    return validated(PoseFileSerializer, read_json(path))


def write_stream(path, stream, csv=False) -> None:
    if csv:
        write_events_csv(path, stream)
    else:
        write_events(path, stream)


def write_manifest(directory, trajectory, contrast_threshold, events,
                   events_format='swev', initial_frame=None,
                   frames_dir=None) -> str:
    """Манифест с путями относительно directory."""
    width, height = trajectory.intrinsics.resolution
    document = {
        'events': events,
        'events_format': events_format,
        'trajectory': TrajectorySerializer(trajectory).data,
        'poses': 'poses.json',
        'times': 'times.txt',
        'initial_frame': initial_frame,
        'frames_dir': frames_dir,
        'resolution': [width, height],
        'contrast_threshold': contrast_threshold,
    }
    path = os.path.join(directory, MANIFEST_NAME)
    write_json(path, document)
    return path


def load_manifest(path) -> dict:
    """Проверенный манифест с загруженными событиями и кадрами."""
    manifest = validated(DatasetManifestSerializer, read_json(path),
                         base_dir=os.path.dirname(os.path.abspath(path)))
    if manifest['events_format'] == 'csv':
        stream = read_events_csv(manifest['events'], manifest['resolution'],
                                 manifest['contrast_threshold'])
    else:
        stream = read_events(manifest['events'])
    manifest['stream'] = stream
    manifest['view_times'] = read_times(manifest['times'])
    manifest['initial_frame_image'] = (
        read_png(manifest['initial_frame'])
        if manifest['initial_frame'] else None
    )
    return manifest
