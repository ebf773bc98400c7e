import os

import numpy as np
from django.core.exceptions import ValidationError
from render.images import write_png, write_raw
from render.rasterizer import render
from scene.cameras import jitter_view, pose_at
from scene.checkpoints import load_scene

from pipeline.mixins import PipelineCommand
from pipeline.utils import (load_manifest, read_poses, read_times,
                            write_poses)


def requested_views(options):
    """Ракурсы из --poses или из проводки манифеста в моменты --times."""
    if options['poses']:
        views = read_poses(options['poses'])
    elif options['manifest']:
        manifest = load_manifest(options['manifest'])
        times = (read_times(options['times']) if options['times']
                 else manifest['view_times'])
        views = [pose_at(manifest['trajectory'], int(t)) for t in times]
    else:
        raise ValidationError('Нужен --poses или --manifest.')
    rng = np.random.default_rng(options['seed'])
    return [jitter_view(view, options['jitter'], rng) for view in views]


def add_view_arguments(parser):
    parser.add_argument('checkpoint', help='Файл сцены .swgs.')
    parser.add_argument('--poses', help='JSON с позами камер.')
    parser.add_argument('--manifest', help='dataset.json с проводкой.')
    parser.add_argument('--times', help='Моменты ракурсов вдоль проводки.')
    parser.add_argument('--jitter', type=float, default=0.0,
                        help='Случайный сдвиг центра камеры.')


class Command(PipelineCommand):
    help = 'Отрисовка ракурсов обученной сцены в PNG.'

    def add_command_arguments(self, parser):
        add_view_arguments(parser)
        parser.add_argument('--out', required=True)
        parser.add_argument('--raw', action='store_true',
                            help='Дополнительно писать float32 дампы.')

    def run(self, **options):
        scene = load_scene(options['checkpoint'])
        views = requested_views(options)
        render_cfg = self.render_config(options)
        out = options['out']
        os.makedirs(out, exist_ok=True)
        for index, view in enumerate(views):
            image = render(scene, view, render_cfg).image
            write_png(os.path.join(out, f'{index:06d}.png'), image)
            if options['raw']:
                write_raw(os.path.join(out, f'{index:06d}.raw'), image)
        write_poses(os.path.join(out, 'poses.json'), views)
        self.stdout.write(self.style.SUCCESS(
            f'{len(views)} ракурсов -> {out}'
        ))
