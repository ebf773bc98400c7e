import os
import sys
from os.path import abspath, dirname

import numpy as np
import pytest
from scene.cameras import CameraView, Intrinsics

root_dir = dirname(dirname(abspath(__file__)))
sys.path.append(root_dir)

pytest_plugins = [
]


def pytest_collection_modifyitems(config, items):
    if os.getenv('SPLAT_SLOW_TESTS') == '1':
        return
    skip_slow = pytest.mark.skip(
        reason='долгий прогон, включается через SPLAT_SLOW_TESTS=1')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_intrinsics():
    return Intrinsics(fx=20.0, fy=20.0, cx=8.0, cy=8.0, width=16, height=16)


@pytest.fixture
def tiny_view(tiny_intrinsics):
    return CameraView(np.eye(3), np.zeros(3), 0, tiny_intrinsics)


@pytest.fixture
def desk_intrinsics():
    return Intrinsics.desk()


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
