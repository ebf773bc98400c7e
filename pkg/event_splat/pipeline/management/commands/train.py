import logging
import os
from dataclasses import asdict

from django.conf import settings
from events.filters import y_noise_filter
from scene.checkpoints import save_scene
from training.supervision import LossConfig
from training.trainer import (LOSS_KINDS, LOSS_OURS, TrainConfig,
                              TrainingDataset, initial_state, train,
                              write_loss_csv)

from pipeline.mixins import PipelineCommand
from pipeline.serializers import (LossConfigSerializer,
                                  RenderConfigSerializer,
                                  TrainConfigSerializer)
from pipeline.utils import load_manifest, validated, write_json

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Обучение гауссианов по событиям набора данных.'

    def add_command_arguments(self, parser):
        training = settings.TRAINING
        parser.add_argument('manifest', help='Путь к dataset.json.')
        parser.add_argument('--out', required=True)
        parser.add_argument('--iterations', type=int,
                            default=training['ITERATIONS'])
        parser.add_argument('--init-count', type=int,
                            default=settings.SCENE['INIT_COUNT'])
        parser.add_argument('--densify-from', type=int,
                            default=training['DENSIFY_FROM_ITER'])
        parser.add_argument('--densify-until', type=int,
                            default=training['DENSIFY_UNTIL_ITER'])
        parser.add_argument('--densification-interval', type=int,
                            default=training['DENSIFICATION_INTERVAL'])
        parser.add_argument('--opacity-reset-interval', type=int,
                            default=training['OPACITY_RESET_INTERVAL'])
        parser.add_argument('--checkpoint-interval', type=int,
                            default=training['CHECKPOINT_INTERVAL'])
        parser.add_argument('--loss', choices=LOSS_KINDS, default=LOSS_OURS)
        parser.add_argument('--lambda', dest='dssim_weight', type=float,
                            default=settings.LOSS['DSSIM_WEIGHT'])
        parser.add_argument('--frame-anchor-weight', type=float,
                            default=training['FRAME_ANCHOR_WEIGHT'])
        parser.add_argument('--no-frame-anchor', action='store_true')
        parser.add_argument('--no-noise-filter', action='store_true')
        parser.add_argument('--filter-tau-us', type=int,
                            default=settings.EVENTS['NOISE_FILTER_TAU_US'])
        parser.add_argument('--filter-radius', type=int,
                            default=settings.EVENTS['NOISE_FILTER_RADIUS'])

    def _train_config(self, options, render_cfg):
        loss_defaults = asdict(LossConfig.from_settings())
        loss_cfg = validated(LossConfigSerializer, dict(
            loss_defaults, dssim_weight=options['dssim_weight']))
        defaults = TrainConfig.from_settings()
        data = {name: getattr(defaults, name)
                for name in TrainConfigSerializer().fields}
        data.update(
            iterations=options['iterations'],
            init_count=options['init_count'],
            densify_from_iter=options['densify_from'],
            densify_until_iter=options['densify_until'],
            densification_interval=options['densification_interval'],
            opacity_reset_interval=options['opacity_reset_interval'],
            checkpoint_interval=options['checkpoint_interval'],
            loss=options['loss'],
            frame_anchor_weight=(0.0 if options['no_frame_anchor']
                                 else options['frame_anchor_weight']),
            seed=options['seed'],
        )
        return validated(TrainConfigSerializer, data, loss_config=loss_cfg,
                         render_config=render_cfg)

    def run(self, **options):
        out = options['out']
        checkpoints = os.path.join(out, 'checkpoints')
        os.makedirs(checkpoints, exist_ok=True)
        render_cfg = self.render_config(options)
        cfg = self._train_config(options, render_cfg)
        manifest = load_manifest(options['manifest'])

        stream = manifest['stream']
        if not options['no_noise_filter']:
            stream = y_noise_filter(stream, options['filter_tau_us'],
                                    options['filter_radius'])
        dataset = TrainingDataset(
            stream=stream,
            trajectory=manifest['trajectory'],
            view_times=manifest['view_times'],
            initial_frame=manifest['initial_frame_image'],
        )
        state = initial_state(cfg)

        write_json(os.path.join(out, 'config.json'), {
            'train': TrainConfigSerializer(cfg).data,
            'loss': LossConfigSerializer(cfg.loss_config).data,
            'render': RenderConfigSerializer(render_cfg).data,
            'noise_filter': {
                'enabled': not options['no_noise_filter'],
                'tau_us': options['filter_tau_us'],
                'radius': options['filter_radius'],
            },
            'manifest': os.path.abspath(options['manifest']),
        })
        scene, rows = train(dataset, cfg, checkpoint_dir=checkpoints,
                            state=state,
                            progress=options['verbosity'] > 0)
        save_scene(os.path.join(out, 'scene.swgs'), scene)
        write_loss_csv(os.path.join(out, 'loss.csv'), rows)
        self.stdout.write(self.style.SUCCESS(
            f'{cfg.iterations} итераций, {len(scene)} гауссианов -> {out}'
        ))
