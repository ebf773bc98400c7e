import logging
import os

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from events.simulator import frames_to_events, roundtrip_residual
from render.images import read_png_sequence, write_png, write_png_sequence
from render.rasterizer import render
from scene.cameras import (SWEEP_KINDS, Intrinsics, SweepTrajectory,
                           jittered_views, pose_at, sample_view_times)
from scene.checkpoints import load_scene
from scene.presets import builtin_scene
from tqdm import tqdm

from pipeline.mixins import PipelineCommand
from pipeline.serializers import SimConfigSerializer
from pipeline.utils import (validated, write_manifest, write_poses,
                            write_stream, write_times)

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = ('Проводка камеры вокруг сцены: кадры, позы, начальный кадр и '
            'поток событий.')

    def add_command_arguments(self, parser):
        simulation = settings.SIMULATION
        parser.add_argument('--out', required=True)
        parser.add_argument('--scene', help='Чекпоинт .swgs; по умолчанию '
                            'встроенная тестовая сцена.')
        parser.add_argument('--frames-dir', help='Внешние PNG-кадры вместо '
                            'отрисовки сцены.')
        parser.add_argument('--times', help='Моменты внешних кадров, мкс.')
        parser.add_argument('--frames', type=int,
                            default=simulation['FRAME_COUNT'])
        parser.add_argument('--frame-step-us', type=int,
                            default=simulation['FRAME_STEP_US'])
        parser.add_argument('--kind', choices=SWEEP_KINDS,
                            default=SWEEP_KINDS[0])
        parser.add_argument('--arc-deg', type=float,
                            default=simulation['ARC_DEGREES'])
        parser.add_argument('--radius', type=float,
                            default=settings.CAMERA['RADIUS'])
        parser.add_argument('--elevation-deg', type=float,
                            default=settings.CAMERA['ELEVATION_DEGREES'])
        parser.add_argument('--start', type=float, nargs=3)
        parser.add_argument('--displacement', type=float, nargs=3)
        parser.add_argument('--camera', choices=('default', 'desk'),
                            default='default')
        parser.add_argument('--contrast-threshold', type=float,
                            default=simulation['CONTRAST_THRESHOLD'])
        parser.add_argument('--refractory-us', type=int,
                            default=simulation['REFRACTORY_US'])
        parser.add_argument('--noise-rate', type=float,
                            default=simulation['NOISE_RATE'])
        parser.add_argument('--holdout', type=int, default=0,
                            help='Число отложенных ракурсов для оценки.')
        parser.add_argument('--jitter', type=float, default=0.0)
        parser.add_argument('--csv', action='store_true',
                            help='Писать события в CSV t_us,x,y,p.')

    def _trajectory(self, options, frame_count, duration):
        intrinsics = (Intrinsics.desk() if options['camera'] == 'desk'
                      else Intrinsics.default())
        values = {
            'kind': options['kind'],
            'frame_count': frame_count,
            'duration': duration,
            'intrinsics': intrinsics,
            'arc_degrees': options['arc_deg'],
            'radius': options['radius'],
            'elevation_degrees': options['elevation_deg'],
        }
        if options['start']:
            values['start'] = tuple(options['start'])
        if options['displacement']:
            values['displacement'] = tuple(options['displacement'])
        return SweepTrajectory(**values)

    def _render_frames(self, scene, views, render_cfg):
        return np.stack([render(scene, view, render_cfg).image
                         for view in tqdm(views, desc='frames',
                                          disable=self.quiet)])

    def run(self, **options):
        out = options['out']
        self.quiet = options['verbosity'] < 1
        os.makedirs(out, exist_ok=True)
        render_cfg = self.render_config(options)
        sim_cfg = validated(SimConfigSerializer, {
            'contrast_threshold': options['contrast_threshold'],
            'refractory_us': options['refractory_us'],
            'noise_rate': options['noise_rate'],
            'gamma': settings.LOSS['GAMMA'],
            'epsilon': settings.LOSS['EPSILON'],
        })

        scene = None
        if options['frames_dir']:
            if not options['times']:
                raise ValidationError('Для --frames-dir нужен --times.')
            if options['holdout']:
                raise ValidationError('Отложенные ракурсы требуют сцены, '
                                      'а не готовых кадров.')
            frames = read_png_sequence(options['frames_dir'])
            times = np.loadtxt(options['times'], dtype=np.int64, ndmin=1)
            trajectory = self._trajectory(options, len(frames),
                                          int(times[-1]))
            if frames.shape[1:] != (trajectory.intrinsics.height,
                                    trajectory.intrinsics.width):
                raise ValidationError(
                    f'Кадры {frames.shape[2]}x{frames.shape[1]} не '
                    f'совпадают с камерой {trajectory.intrinsics.resolution}.'
                )
            views = [pose_at(trajectory, int(t)) for t in times]
        else:
            scene = (load_scene(options['scene']) if options['scene']
                     else builtin_scene())
            frame_count = options['frames']
            trajectory = self._trajectory(
                options, frame_count,
                (frame_count - 1) * options['frame_step_us'])
            times = sample_view_times(trajectory)
            views = [pose_at(trajectory, int(t)) for t in times]
            frames = self._render_frames(scene, views, render_cfg)

        stream = frames_to_events(frames, times, sim_cfg, options['seed'])
        if sim_cfg.noise_rate == 0 and sim_cfg.refractory_us == 0:
            residual = roundtrip_residual(stream, frames, times, sim_cfg)
            logger.info('Roundtrip residual %.6f (A = %.3f)', residual,
                        sim_cfg.contrast_threshold)

        write_png_sequence(os.path.join(out, 'frames'), frames)
        write_times(os.path.join(out, 'times.txt'), times)
        write_poses(os.path.join(out, 'poses.json'), views)
        write_png(os.path.join(out, 'initial_frame.png'), frames[0])
        events_name = 'events.csv' if options['csv'] else 'events.swev'
        write_stream(os.path.join(out, events_name), stream, options['csv'])
        write_manifest(
            out, trajectory, sim_cfg.contrast_threshold, events_name,
            events_format='csv' if options['csv'] else 'swev',
            initial_frame='initial_frame.png', frames_dir='frames',
        )
        if options['holdout']:
            self._write_holdout(out, scene, trajectory, options, render_cfg)
        self.stdout.write(self.style.SUCCESS(
            f'{len(frames)} кадров, {len(stream)} событий -> {out}'
        ))

    def _write_holdout(self, out, scene, trajectory, options, render_cfg):
        directory = os.path.join(out, 'holdout')
        os.makedirs(directory, exist_ok=True)
        times = np.linspace(0, trajectory.duration,
                            options['holdout']).astype(np.int64)
        views = jittered_views(trajectory, times, options['jitter'],
                               options['seed'])
        frames = self._render_frames(scene, views, render_cfg)
        write_png_sequence(os.path.join(directory, 'frames'), frames)
        write_times(os.path.join(directory, 'times.txt'), times)
        write_poses(os.path.join(directory, 'poses.json'), views)
        logger.info('Wrote %d held-out views with jitter %.3f',
                    len(views), options['jitter'])
