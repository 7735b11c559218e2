from __future__ import annotations

import functools
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

MINICORPUS = Path(__file__).resolve().parents[1] / "src" / "mdis" / "data" / "minicorpus"

# name -> loader; all ship with scikit-image and need no download
NATURAL = [
    "astronaut", "camera", "chelsea", "coffee", "coins", "moon", "rocket", "brick",
    "grass", "gravel", "immunohistochemistry", "clock", "page", "text", "hubble_deep_field",
]


@functools.lru_cache(maxsize=None)
def natural_image(name: str) -> np.ndarray:
    """An RGB uint8 test image from scikit-image's bundled data."""
    import skimage.data

    img = getattr(skimage.data, name)()
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return np.ascontiguousarray(img[..., :3].astype(np.uint8))


def natural_crop(name: str, side: int = 256) -> np.ndarray:
    img = natural_image(name)
    h, w = img.shape[:2]
    s = min(side, h, w)
    r, c = (h - s) // 2, (w - s) // 2
    return img[r : r + s, c : c + s]


def patch_scene(seed: int, side: int = 256, patch: int = 32):
    """Smooth shaded background with one high-variance texture square.

    Returns the luminance image in [0, 1] and the boolean patch mask.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    img = 0.3 + 0.3 * xx + 0.1 * yy + 0.01 * rng.standard_normal((side, side))
    r, c = rng.integers(0, side - patch, size=2)
    img[r : r + patch, c : c + patch] = 0.5 + 0.25 * rng.standard_normal((patch, patch))
    mask = np.zeros((side, side), dtype=bool)
    mask[r : r + patch, c : c + patch] = True
    return np.clip(img, 0.0, 1.0), mask


def halves_scene(seed: int, side: int = 128):
    """Left half smooth, right half strong noise."""
    rng = np.random.default_rng(seed)
    img = np.full((side, side), 0.5) + 0.002 * rng.standard_normal((side, side))
    img[:, side // 2 :] += 0.2 * rng.standard_normal((side, side // 2))
    return np.clip(img, 0.0, 1.0)


@pytest.fixture(scope="session")
def minicorpus() -> Path:
    return MINICORPUS


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
