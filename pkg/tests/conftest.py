import numpy as np
import pytest

from grapl.imagegrid import Image, SegmentationMap


def two_region_image(size=192, seed=0, noise=0.02,
                     color_a=(0.15, 0.2, 0.7), color_b=(0.85, 0.75, 0.2),
                     split=0.5):
    """Vertical two-region test image: flat colors plus mild noise.

    Returns (Image, SegmentationMap ground truth).
    """
    rng = np.random.default_rng(seed)
    h = w = size
    edge = int(w * split)
    data = np.zeros((h, w, 3))
    data[:, :edge] = color_a
    data[:, edge:] = color_b
    data += rng.normal(0.0, noise, data.shape)
    gt = np.ones((h, w), dtype=np.int32)
    gt[:, edge:] = 2
    return Image(np.clip(data, 0.0, 1.0)), SegmentationMap(gt)


@pytest.fixture
def small_two_region():
    return two_region_image(size=160)


def random_image(h, w, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return Image(rng.random((h, w, c)))
