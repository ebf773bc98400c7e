"""Встроенная тестовая сцена для симуляции без внешних файлов."""
import numpy as np

from .gaussians import GaussianScene, inverse_sigmoid, normalize_quaternion

TEST_SCENE_COUNT = 50
TEST_SCENE_SEED = 7
TEST_SCENE_HALF_SIZE = 0.3


def builtin_scene(count: int = TEST_SCENE_COUNT,
                  seed: int = TEST_SCENE_SEED) -> GaussianScene:
    """Фиксированная сцена из анизотропных гауссианов в кубе [-0.3, 0.3]^3.

    Яркости разнесены по всему диапазону, чтобы проводка давала
    достаточно событий.
    """
    rng = np.random.default_rng(seed)
    half = TEST_SCENE_HALF_SIZE
    xyz = rng.uniform(-half, half, size=(count, 3))
    color = inverse_sigmoid(rng.uniform(0.15, 0.95, size=count))
    opacity = inverse_sigmoid(rng.uniform(0.5, 0.95, size=count))
    rotation = normalize_quaternion(rng.normal(size=(count, 4)))
    scaling = np.log(rng.uniform(0.02, 0.08, size=(count, 3)))
    return GaussianScene(
        xyz=xyz, color=color, opacity=opacity, rotation=rotation,
        scaling=scaling, bounds=((-half,) * 3, (half,) * 3),
    )
