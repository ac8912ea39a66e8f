import os

import numpy as np
import pytest

os.environ.setdefault("EQUIBURST_THREADS", "1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def natural_image(size=128, top=100, left=180):
    """Crop of a standard photograph as an RGB image on the unit square."""
    from skimage import data

    from equiburst.grid import Image

    rgb = data.astronaut()[top : top + size, left : left + size].astype(np.float64) / 255.0
    return Image(rgb, 1.0 / size)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
