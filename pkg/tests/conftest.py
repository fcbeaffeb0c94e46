import numpy as np
import pytest

from interlaced_inr.tomo import ProjectorGeometry, radon_forward


def dense_projector(geom: ProjectorGeometry) -> np.ndarray:
    """Materialise the forward operator column by column."""
    h, w = geom.shape
    cols = []
    for i in range(h * w):
        e = np.zeros(h * w)
        e[i] = 1.0
        cols.append(radon_forward(e.reshape(h, w), geom).ravel())
    return np.stack(cols, axis=1)


def disk(n: int, radius_px: float, value: float = 1.0, supersample: int = 8) -> np.ndarray:
    """Anti-aliased centred disk on an ``n x n`` grid (pixel-area coverage)."""
    sub = (np.arange(n * supersample) + 0.5) / supersample - 0.5
    yy, xx = np.meshgrid(sub, sub, indexing="ij")
    c = (n - 1) / 2.0
    inside = ((xx - c) ** 2 + (yy - c) ** 2) <= radius_px**2
    return value * inside.reshape(n, supersample, n, supersample).mean(axis=(1, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geom():
    return ProjectorGeometry((16, 16), np.linspace(0, np.pi, 12, endpoint=False), n_det=24, pixel_size=1.0)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
