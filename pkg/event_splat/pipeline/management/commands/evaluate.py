from metrics.quality import evaluate_views
from render.images import read_png_sequence
from scene.checkpoints import load_scene

from pipeline.management.commands.render import (add_view_arguments,
                                                 requested_views)
from pipeline.mixins import PipelineCommand
from pipeline.serializers import EvalReportSerializer
from pipeline.utils import write_json


class Command(PipelineCommand):
    help = 'PSNR и SSIM отрисованных ракурсов против эталонных кадров.'

    def add_command_arguments(self, parser):
        add_view_arguments(parser)
        parser.add_argument('--gt-dir', required=True,
                            help='Каталог эталонных PNG-кадров.')
        parser.add_argument('--out', help='Куда записать отчёт JSON.')

    def run(self, **options):
        scene = load_scene(options['checkpoint'])
        views = requested_views(options)
        frames = read_png_sequence(options['gt_dir'])
        report = evaluate_views(scene, views, frames,
                                self.render_config(options))
        data = EvalReportSerializer(report).data
        if options['out']:
            write_json(options['out'], data)
        mean_psnr = ('inf' if data['mean_psnr'] is None
                     else f"{data['mean_psnr']:.3f}")
        self.stdout.write(self.style.SUCCESS(
            f'{len(report)} ракурсов: PSNR {mean_psnr} дБ, '
            f"SSIM {data['mean_ssim']:.4f}"
        ))
