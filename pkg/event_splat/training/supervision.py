"""Функции потерь событийного обучения и их градиенты по E_pred."""
import math
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.ndimage import correlate1d


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.2
    epsilon: float = 1e-5
    linlog_threshold: float = 20.0
    dssim_weight: float = 0.1
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03

    def __post_init__(self):
        positive = ('gamma', 'epsilon', 'linlog_threshold', 'ssim_window',
                    'ssim_sigma', 'ssim_k1', 'ssim_k2')
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f'Параметр {name} должен быть больше '
                                      f'нуля.')
        if self.dssim_weight < 0:
            raise ValidationError('Вес D-SSIM не может быть отрицательным.')
        if self.ssim_window % 2 == 0:
            raise ValidationError('Окно SSIM должно быть нечётным.')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'gamma': settings.LOSS['GAMMA'],
            'epsilon': settings.LOSS['EPSILON'],
            'linlog_threshold': settings.LOSS['LINLOG_THRESHOLD'],
            'dssim_weight': settings.LOSS['DSSIM_WEIGHT'],
            'ssim_window': settings.LOSS['SSIM_WINDOW'],
            'ssim_sigma': settings.LOSS['SSIM_SIGMA'],
            'ssim_k1': settings.LOSS['SSIM_K1'],
            'ssim_k2': settings.LOSS['SSIM_K2'],
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class LossValue:
    total: float
    event_term: float
    dssim_term: float
    d_Epred: np.ndarray
    anchor_term: float = 0.0

    @property
    def objective(self):
        return self.total + self.anchor_term


def check_same_shape(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(
            f'Разрешения не совпадают: {x.shape} и {y.shape}.'
        )
    return x, y


def log_image(image, cfg) -> np.ndarray:
    """L(I) = log(I^g + eps)."""
    image = np.asarray(image, dtype=np.float64)
    return np.log(image ** cfg.gamma + cfg.epsilon)


def log_image_grad(image, cfg) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    powered = image ** cfg.gamma
    return cfg.gamma * image ** (cfg.gamma - 1.0) / (powered + cfg.epsilon)


def predicted_difference(image_0, image_k, cfg) -> np.ndarray:
    """E_pred = L(I_0) - L(I_k)."""
    image_0, image_k = check_same_shape(image_0, image_k)
    return log_image(image_0, cfg) - log_image(image_k, cfg)


def linlog(u, cfg) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    threshold = cfg.linlog_threshold
    slope = math.log(threshold) / threshold
    return np.where(u < threshold, u * slope,
                    np.log(np.maximum(u, threshold)))


def signed_linlog(u, cfg):
    """sign(u) * linlog(|u|) и производная по u."""
    u = np.asarray(u, dtype=np.float64)
    magnitude = np.abs(u)
    threshold = cfg.linlog_threshold
    slope = math.log(threshold) / threshold
    derivative = np.where(magnitude <= threshold, slope,
                          1.0 / np.maximum(magnitude, threshold))
    return np.sign(u) * linlog(magnitude, cfg), derivative


def event_loss(e_pred, e_gt, cfg):
    """Нормированная L2 между отображёнными квадратами E_pred и E_gt."""
    e_pred, e_gt = check_same_shape(e_pred, e_gt)
    mapped_pred, chain = signed_linlog(e_pred, cfg)
    mapped_gt, _ = signed_linlog(e_gt, cfg)
    residual = mapped_pred ** 2 - mapped_gt ** 2
    size = e_pred.size
    loss = float(np.sum(residual ** 2) / size)
    grad = 4.0 * mapped_pred * residual * chain / size
    return loss, grad


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - size // 2
    kernel = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def _blur(image, kernel):
    blurred = correlate1d(image, kernel, axis=0, mode='constant')
    return correlate1d(blurred, kernel, axis=1, mode='constant')


def structural_similarity(x, y, dynamic_range, cfg, with_grad=True):
    """Средний SSIM по окнам, целиком лежащим в изображении.

    Возвращает значение и градиент по x (или None).
    """
    x, y = check_same_shape(x, y)
    size = cfg.ssim_window
    if x.ndim != 2 or min(x.shape) < size:
        raise ValidationError(
            f'Изображение {x.shape} меньше окна SSIM {size}x{size}.'
        )
    kernel = gaussian_window(size, cfg.ssim_sigma)
    c1 = (cfg.ssim_k1 * dynamic_range) ** 2
    c2 = (cfg.ssim_k2 * dynamic_range) ** 2

    r = size // 2
    valid = (slice(r, x.shape[0] - r), slice(r, x.shape[1] - r))
    mu_x = _blur(x, kernel)[valid]
    mu_y = _blur(y, kernel)[valid]
    e_xx = _blur(x * x, kernel)[valid]
    e_yy = _blur(y * y, kernel)[valid]
    e_xy = _blur(x * y, kernel)[valid]

    sigma_x = e_xx - mu_x ** 2
    sigma_y = e_yy - mu_y ** 2
    sigma_xy = e_xy - mu_x * mu_y

    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * sigma_xy + c2
    b1 = mu_x ** 2 + mu_y ** 2 + c1
    b2 = sigma_x + sigma_y + c2
    ssim_map = (a1 * a2) / (b1 * b2)
    count = ssim_map.size
    value = float(ssim_map.mean())
    if not with_grad:
        return value, None

    d_mu_x = (2.0 * mu_y * (a2 - a1) / (b1 * b2)
              - 2.0 * mu_x * ssim_map * (1.0 / b1 - 1.0 / b2))
    d_e_xx = -ssim_map / b2
    d_e_xy = 2.0 * a1 / (b1 * b2)

    def spread(local):
        full = np.zeros_like(x)
        full[valid] = local / count
        return _blur(full, kernel)

    grad = spread(d_mu_x) + 2.0 * x * spread(d_e_xx) + y * spread(d_e_xy)
    return value, grad


def dssim(x, y, cfg):
    """SSIM(x, y) и градиент по x; динамический диапазон max|y|, не меньше 1.
    """
    x, y = check_same_shape(x, y)
    dynamic_range = max(float(np.abs(y).max(initial=0.0)), 1.0)
    return structural_similarity(x, y, dynamic_range, cfg)


def total_loss(e_pred, e_gt, cfg) -> LossValue:
    event_term, d_event = event_loss(e_pred, e_gt, cfg)
    weight = cfg.dssim_weight
    if weight == 0:
        return LossValue(total=event_term, event_term=event_term,
                         dssim_term=1.0, d_Epred=d_event)
    ssim_value, d_ssim = dssim(e_pred, e_gt, cfg)
    return LossValue(
        total=event_term + weight * (1.0 - ssim_value),
        event_term=event_term,
        dssim_term=ssim_value,
        d_Epred=d_event - weight * d_ssim,
    )


def mse_loss(e_pred, e_gt):
    e_pred, e_gt = check_same_shape(e_pred, e_gt)
    residual = e_pred - e_gt
    return float(np.mean(residual ** 2)), 2.0 * residual / residual.size


def mse_loss_value(e_pred, e_gt) -> LossValue:
    """MSE-ветка абляции в виде LossValue (D-SSIM с нулевым весом)."""
    loss, grad = mse_loss(e_pred, e_gt)
    return LossValue(total=loss, event_term=loss, dssim_term=1.0,
                     d_Epred=grad)
