from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"
CROPS = ("camera", "coins", "astronaut")

_acceptance_lines: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    _acceptance_lines.append(f"[{status}] criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def load_crop(name: str) -> np.ndarray:
    from dualsparse.io import read_image

    return read_image(DATA / f"{name}_128.pgm").values


def make_phantom(size: int = 128) -> np.ndarray:
    """Piecewise-constant test scene: background 100, bright bar, dark disc, mid square."""
    img = np.full((size, size), 100.0)
    img[16:60, 16:112] = 200.0
    yy, xx = np.mgrid[:size, :size]
    img[(yy - 92) ** 2 + (xx - 44) ** 2 < 24**2] = 40.0
    img[76:116, 76:116] = 150.0
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def phantom():
    return make_phantom()
