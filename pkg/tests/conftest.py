"""Shared fixtures: deterministic RNGs and synthetic CT/label phantoms."""

from __future__ import annotations

import numpy as np
import pytest

from synthabd import Volume

_acceptance_lines: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    """Collect one PASS/FAIL/SKIP verdict per acceptance test, in run order."""
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance_lines.append((name, "PASS" if report.passed else "FAIL"))
    elif report.when == "setup":
        if report.skipped:
            _acceptance_lines.append((name, "SKIP"))
        elif report.failed:
            _acceptance_lines.append((name, "FAIL"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, word in _acceptance_lines:
        terminalreporter.write_line(f"{word} {name}")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def make_phantom(
    rng: np.random.Generator,
    shape=(32, 32, 32),
    n_organs: int = 3,
    spacing=(1.5, 1.5, 1.5),
    noise: float = 0.02,
    max_target: int = 26,
) -> tuple[Volume, Volume]:
    """A label map of random non-overlapping boxes plus a matching CT.

    Organ ids are drawn from 1..max_target without replacement; each organ
    gets a distinct base intensity with additive Gaussian noise, so mixture
    fits have real structure to find.
    """
    labels = np.zeros(shape, dtype=np.int32)
    ids = rng.choice(np.arange(1, max_target + 1), size=n_organs, replace=False)
    ids = [int(v) for v in ids]
    for organ in ids:
        for _attempt in range(20):
            size = rng.integers(5, max(6, min(shape) // 2), size=3)
            lo = [int(rng.integers(0, s - sz + 1)) for s, sz in zip(shape, size)]
            sl = tuple(slice(l, l + int(sz)) for l, sz in zip(lo, size))
            if not labels[sl].any():
                labels[sl] = organ
                break

    base = np.full(shape, 0.1)
    present = [int(v) for v in np.unique(labels) if v != 0]
    for i, organ in enumerate(present):
        base[labels == organ] = 0.3 + 0.5 * (i + 1) / (len(present) + 1)
    ct = base + rng.normal(0.0, noise, shape)

    return (
        Volume(ct, spacing, kind="image"),
        Volume(labels, spacing, kind="label"),
    )


@pytest.fixture
def phantom(rng):
    return make_phantom(rng)
