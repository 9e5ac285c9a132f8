"""Shared fixtures plus the always-visible acceptance line reporter."""

import numpy as np
import pytest

from rotasep import SceneConfig, SourceSpec, synth_speechlike

RATE = 16000

# one line per acceptance criterion, echoed in the terminal summary so the
# verdicts survive pytest's output capture
_CRITERION_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"[CRITERION {number}] {'PASS' if passed else 'FAIL'} {detail}"
    _CRITERION_LINES[number] = line
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERION_LINES):
        terminalreporter.write_line(_CRITERION_LINES[number])


@pytest.fixture(scope="session")
def criterion_recorder():
    return record_criterion


def make_scene(aoas_deg, duration_s=2.0, snr_db=None, room="anechoic",
               t60_ms=0.0, seed=0, distance_m=2.5, rate=RATE) -> SceneConfig:
    sources = [
        SourceSpec(
            aoa_deg=aoa,
            distance_m=distance_m,
            waveform=synth_speechlike(duration_s, rate, seed=[seed, i]),
        )
        for i, aoa in enumerate(aoas_deg)
    ]
    return SceneConfig(sources=sources, room=room, t60_ms=t60_ms,
                       snr_db=snr_db, seed=seed)


@pytest.fixture(scope="session")
def bank3_scene() -> SceneConfig:
    """Noiseless three-source scene reused by delay-analysis tests."""
    return make_scene([170.0, 70.0, -50.0], duration_s=4.0)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
