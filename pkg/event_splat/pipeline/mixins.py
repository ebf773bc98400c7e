import logging
from dataclasses import asdict

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError
from render.rasterizer import RenderConfig
from rest_framework.exceptions import APIException
from training.exceptions import TrainingDiverged

from .serializers import RenderConfigSerializer
from .utils import validated

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class PipelineCommand(BaseCommand):
    """Общая основа команд: --seed, --workers, --background и коды выхода.

    0 - успех, 2 - ошибка проверки входных данных, 3 - сбой вычислений.
    """

    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--workers', type=int,
                            default=settings.RENDER['WORKERS'],
                            help='Потоки растеризатора (по тайлам).')
        parser.add_argument('--background', type=float,
                            default=settings.RENDER['BACKGROUND'],
                            help='Цвет фона в [0, 1].')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def run(self, **options):
        raise NotImplementedError

    def render_config(self, options) -> RenderConfig:
        defaults = asdict(RenderConfig.from_settings())
        return validated(RenderConfigSerializer, dict(
            defaults, workers=options['workers'],
            background=options['background'],
        ))

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except ValidationError as error:
            raise CommandError('; '.join(error.messages),
                               returncode=EXIT_VALIDATION)
        except APIException as error:
            raise CommandError(str(error.detail), returncode=EXIT_VALIDATION)
        except FileNotFoundError as error:
            raise CommandError(f'Файл не найден: {error.filename}',
                               returncode=EXIT_VALIDATION)
        except TrainingDiverged as error:
            logger.error('%s', error)
            raise CommandError(str(error), returncode=EXIT_RUNTIME)
        except (OSError, RuntimeError, FloatingPointError) as error:
            raise CommandError(str(error), returncode=EXIT_RUNTIME)
