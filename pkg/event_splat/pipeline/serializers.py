import math
import os

from django.core.exceptions import ValidationError as DjangoValidationError
from events.io import read_header
from events.simulator import SimConfig
from render.images import read_png
from render.rasterizer import RenderConfig
from rest_framework import serializers
from scene.cameras import SWEEP_KINDS, CameraView, Intrinsics, SweepTrajectory
from training.supervision import LossConfig
from training.trainer import LOSS_KINDS, TrainConfig

EVENT_FORMATS = ('swev', 'csv')


def _build(factory, **values):
    """Доменный объект из проверенных данных; ошибки домена -> DRF."""
    try:
        return factory(**values)
    except DjangoValidationError as error:
        raise serializers.ValidationError(error.messages)


def _vector(length):
    return serializers.ListField(child=serializers.FloatField(),
                                 min_length=length, max_length=length)


class IntrinsicsSerializer(serializers.Serializer):
    """Сериализатор внутренних параметров камеры."""

    fx = serializers.FloatField()
    fy = serializers.FloatField()
    cx = serializers.FloatField()
    cy = serializers.FloatField()
    width = serializers.IntegerField(min_value=1, max_value=65535)
    height = serializers.IntegerField(min_value=1, max_value=65535)

    def validate(self, data):
        _build(Intrinsics, **data)
        return data

    def create(self, validated_data):
        return Intrinsics(**validated_data)


class PoseSerializer(serializers.Serializer):
    t_us = serializers.IntegerField(min_value=0)
    R = _vector(9)
    t = _vector(3)

    def to_representation(self, view):
        return {
            't_us': view.timestamp,
            'R': [float(value) for value in view.rotation.ravel()],
            't': [float(value) for value in view.translation],
        }


class PoseFileSerializer(serializers.Serializer):
    """Файл поз: внутренние параметры и список world_to_cam."""

    intrinsics = IntrinsicsSerializer()
    poses = PoseSerializer(many=True)

    def validate(self, data):
        intrinsics = Intrinsics(**data['intrinsics'])
        views = [_build(CameraView, rotation=pose['R'],
                        translation=pose['t'], timestamp=pose['t_us'],
                        intrinsics=intrinsics)
                 for pose in data['poses']]
        data['views'] = views
        return data

    def create(self, validated_data):
        return validated_data['views']


class TrajectorySerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=SWEEP_KINDS)
    duration = serializers.IntegerField(min_value=1)
    frame_count = serializers.IntegerField(min_value=2)
    intrinsics = IntrinsicsSerializer()
    arc_degrees = serializers.FloatField()
    radius = serializers.FloatField()
    elevation_degrees = serializers.FloatField()
    center = _vector(3)
    start = _vector(3)
    displacement = _vector(3)

    def validate(self, data):
        values = dict(data, intrinsics=Intrinsics(**data['intrinsics']))
        for name in ('center', 'start', 'displacement'):
            values[name] = tuple(values[name])
        data['trajectory'] = _build(SweepTrajectory, **values)
        return data

    def create(self, validated_data):
        return validated_data['trajectory']


class DatasetManifestSerializer(serializers.Serializer):
    """Манифест набора данных; пути задаются относительно его каталога."""

    events = serializers.CharField()
    events_format = serializers.ChoiceField(choices=EVENT_FORMATS,
                                            default='swev')
    trajectory = TrajectorySerializer()
    poses = serializers.CharField()
    times = serializers.CharField()
    initial_frame = serializers.CharField(required=False, allow_null=True,
                                          default=None)
    frames_dir = serializers.CharField(required=False, allow_null=True,
                                       default=None)
    resolution = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2,
        max_length=2)
    contrast_threshold = serializers.FloatField()

    def _path(self, relative):
        return os.path.join(self.context.get('base_dir', ''), relative)

    def validate(self, data):
        for name in ('events', 'poses', 'times', 'initial_frame',
                     'frames_dir'):
            if data.get(name) is None:
                continue
            data[name] = self._path(data[name])
            if not os.path.exists(data[name]):
                raise serializers.ValidationError(
                    {name: f'Файл {data[name]} не найден.'})

        resolution = tuple(data['resolution'])
        camera = data['trajectory']['trajectory'].intrinsics.resolution
        if tuple(camera) != resolution:
            raise serializers.ValidationError(
                f'Разрешение манифеста {resolution} не совпадает с камерой '
                f'{tuple(camera)}.'
            )
        if data['events_format'] == 'swev':
            try:
                width, height, *_ = read_header(data['events'])
            except DjangoValidationError as error:
                raise serializers.ValidationError({'events': error.messages})
            if (width, height) != resolution:
                raise serializers.ValidationError(
                    f'Разрешение файла событий {(width, height)} не '
                    f'совпадает с манифестом {resolution}.'
                )
        if data['initial_frame'] is not None:
            shape = read_png(data['initial_frame']).shape
            if (shape[1], shape[0]) != resolution:
                raise serializers.ValidationError(
                    f'Начальный кадр {shape[1]}x{shape[0]} не совпадает с '
                    f'разрешением {resolution}.'
                )
        return data

    def create(self, validated_data):
        return dict(validated_data,
                    trajectory=validated_data['trajectory']['trajectory'])


class LossConfigSerializer(serializers.Serializer):
    gamma = serializers.FloatField()
    epsilon = serializers.FloatField()
    linlog_threshold = serializers.FloatField()
    dssim_weight = serializers.FloatField(min_value=0.0)
    ssim_window = serializers.IntegerField(min_value=1)
    ssim_sigma = serializers.FloatField()
    ssim_k1 = serializers.FloatField()
    ssim_k2 = serializers.FloatField()

    def validate(self, data):
        _build(LossConfig, **data)
        return data

    def create(self, validated_data):
        return LossConfig(**validated_data)


class SimConfigSerializer(serializers.Serializer):
    contrast_threshold = serializers.FloatField()
    refractory_us = serializers.IntegerField(min_value=0)
    noise_rate = serializers.FloatField(min_value=0.0)
    gamma = serializers.FloatField()
    epsilon = serializers.FloatField()

    def validate(self, data):
        _build(SimConfig, **data)
        return data

    def create(self, validated_data):
        return SimConfig(**validated_data)


class RenderConfigSerializer(serializers.Serializer):
    tile_size = serializers.IntegerField(min_value=1)
    near_plane = serializers.FloatField()
    low_pass_floor = serializers.FloatField(min_value=0.0)
    footprint_sigmas = serializers.FloatField()
    alpha_max = serializers.FloatField()
    transmittance_min = serializers.FloatField()
    chunk_size = serializers.IntegerField(min_value=1)
    background = serializers.FloatField(min_value=0.0, max_value=1.0)
    workers = serializers.IntegerField(min_value=1)

    def validate(self, data):
        _build(RenderConfig, **data)
        return data

    def create(self, validated_data):
        return RenderConfig(**validated_data)


class TrainConfigSerializer(serializers.Serializer):
    """Гиперпараметры обучения.

    Вложенные настройки потерь и растеризатора передаются через context
    как готовые объекты.
    """

    iterations = serializers.IntegerField(min_value=0)
    position_lr_init = serializers.FloatField()
    position_lr_final = serializers.FloatField()
    feature_lr = serializers.FloatField()
    opacity_lr = serializers.FloatField()
    scaling_lr = serializers.FloatField()
    rotation_lr = serializers.FloatField()
    densification_interval = serializers.IntegerField(min_value=1)
    densify_from_iter = serializers.IntegerField(min_value=0)
    densify_until_iter = serializers.IntegerField(min_value=0)
    densify_grad_threshold = serializers.FloatField(min_value=0.0)
    percent_dense = serializers.FloatField(min_value=0.0)
    min_opacity = serializers.FloatField(min_value=0.0, max_value=1.0)
    opacity_reset_interval = serializers.IntegerField(min_value=1)
    opacity_reset_value = serializers.FloatField(min_value=0.0,
                                                 max_value=1.0)
    split_count = serializers.IntegerField(min_value=1)
    split_scale_divisor = serializers.FloatField()
    beta1 = serializers.FloatField()
    beta2 = serializers.FloatField()
    adam_eps = serializers.FloatField()
    frame_anchor_weight = serializers.FloatField(min_value=0.0)
    checkpoint_interval = serializers.IntegerField(min_value=1)
    loss = serializers.ChoiceField(choices=LOSS_KINDS)
    init_count = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0)

    def _nested(self):
        return {
            'loss_config': self.context.get('loss_config',
                                            LossConfig.from_settings()),
            'render_config': self.context.get('render_config',
                                              RenderConfig.from_settings()),
        }

    def validate(self, data):
        _build(TrainConfig, **data, **self._nested())
        return data

    def create(self, validated_data):
        return TrainConfig(**validated_data, **self._nested())


def _finite_or_none(value):
    return None if math.isinf(value) else value


class EvalReportSerializer(serializers.Serializer):
    """Отчёт метрик; бесконечный PSNR записывается как null с флагом."""

    views = serializers.SerializerMethodField()
    mean_psnr = serializers.SerializerMethodField()
    mean_ssim = serializers.FloatField()
    psnr_infinite = serializers.BooleanField()

    def get_views(self, report):
        return [
            {
                'view_id': view_id,
                'psnr': _finite_or_none(psnr),
                'psnr_infinite': math.isinf(psnr),
                'ssim': ssim,
            }
            for view_id, psnr, ssim in zip(report.view_ids, report.psnr,
                                           report.ssim)
        ]

    def get_mean_psnr(self, report):
        return _finite_or_none(report.mean_psnr)
