import math

import numpy as np
from django.core.exceptions import ValidationError


def exponential_lr(lr_init: float, lr_final: float, max_steps: int):
    """Log-линейный спуск lr от lr_init (шаг 0) до lr_final (max_steps)."""
    if lr_init <= 0 or lr_final <= 0:
        raise ValidationError('Концы расписания lr должны быть больше нуля.')

    def schedule(step):
        if max_steps <= 0:
            return lr_init
        t = min(max(step / max_steps, 0.0), 1.0)
        return math.exp((1.0 - t) * math.log(lr_init) + t * math.log(lr_final))

    return schedule


class Adam:
    """Adam с отдельным lr на каждую группу параметров сцены.

    Моменты хранятся по строкам (по одному гауссиану) и переупорядочиваются
    вместе со сценой при уплотнении и прореживании.
    """

    def __init__(self, params: dict, lrs: dict, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-15):
        missing = set(params) - set(lrs)
        if missing:
            raise ValidationError(f'Не задан lr для групп {sorted(missing)}.')
        if any(lr <= 0 for lr in lrs.values()):
            raise ValidationError('Все lr должны быть больше нуля.')
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}
        self.t = 0

    def __len__(self):
        return len(next(iter(self.m.values())))

    def step(self, params: dict, grads: dict) -> None:
        """Обновляет массивы params на месте."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, value in params.items():
            g = grads[name]
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(self.v[name] / bc2) + self.epsilon
            value -= (self.lrs[name] / bc1) * self.m[name] / denom

    def select(self, mask) -> None:
        for moments in (self.m, self.v):
            for name in moments:
                moments[name] = moments[name][mask]

    def append(self, count: int) -> None:
        """Нулевые моменты для count новых гауссианов."""
        for moments in (self.m, self.v):
            for name, value in moments.items():
                moments[name] = np.concatenate(
                    [value, np.zeros((count, *value.shape[1:]))])

    def reset(self, name: str) -> None:
        self.m[name] = np.zeros_like(self.m[name])
        self.v[name] = np.zeros_like(self.v[name])
