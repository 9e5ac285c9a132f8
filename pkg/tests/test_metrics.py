"""Scale-invariant distortion scoring and assignment of estimates to truth."""

import numpy as np
import pytest

from rotasep import (SampleBuffer, correlation_score, match_angles,
                     match_sources, pick_best, si_sdr, si_sdr_improvement,
                     synth_speechlike)

RATE = 16000


def _unit(rng, n=8000):
    x = rng.standard_normal(n)
    return x / np.sqrt(np.dot(x, x))


def _orthogonalize(v, against):
    out = v - np.dot(v, against) / np.dot(against, against) * against
    return out / np.sqrt(np.dot(out, out))


def test_si_sdr_scale_invariant():
    rng = np.random.default_rng(0)
    ref = _unit(rng)
    est = ref + 0.1 * _orthogonalize(_unit(rng), ref)
    base = si_sdr(est, ref)
    for scale in (1e-3, 0.37, 42.0, 1e3):
        assert abs(si_sdr(scale * est, ref) - base) < 1e-9


def test_si_sdr_known_ratio():
    rng = np.random.default_rng(1)
    ref = _unit(rng)
    noise = _orthogonalize(_unit(rng), ref)
    est = ref + 0.1 * noise  # orthogonal residual at -20 dB
    assert si_sdr(est, ref) == pytest.approx(20.0, abs=1e-6)
    equal = ref + noise
    assert si_sdr(equal, ref) == pytest.approx(0.0, abs=1e-6)


def test_si_sdr_caps_and_errors():
    rng = np.random.default_rng(2)
    ref = _unit(rng)
    assert si_sdr(ref, ref) == 60.0
    assert si_sdr(2.5 * ref, ref) == 60.0
    orth = _orthogonalize(_unit(rng), ref)
    assert si_sdr(orth, ref) == -60.0
    with pytest.raises(ValueError):
        si_sdr(ref, np.zeros(100))
    with pytest.raises(ValueError):
        si_sdr(np.array([]), np.array([]))


def test_si_sdr_improvement_of_mixture_is_zero():
    rng = np.random.default_rng(3)
    ref = _unit(rng)
    mixture = ref + 0.5 * _orthogonalize(_unit(rng), ref)
    assert si_sdr_improvement(mixture, ref, mixture) == 0.0


def test_si_sdr_accepts_buffers_and_length_mismatch():
    a = synth_speechlike(0.5, RATE, seed=1)
    longer = SampleBuffer(np.concatenate([a.samples, np.zeros(100)]), RATE)
    assert si_sdr(longer, a) == 60.0


def test_correlation_score():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(4000)
    assert correlation_score(x, x) == pytest.approx(1.0)
    assert correlation_score(-2.0 * x, x) == pytest.approx(1.0)
    y = _orthogonalize(rng.standard_normal(4000), x - x.mean())
    assert correlation_score(y, x) < 0.05
    assert correlation_score(np.ones(100), x[:100]) == 0.0


def test_pick_best():
    rng = np.random.default_rng(5)
    ref = rng.standard_normal(4000)
    off = rng.standard_normal(4000)
    noisy = ref + 0.3 * rng.standard_normal(4000)
    idx, score = pick_best([off, noisy], ref)
    assert idx == 1
    assert score > 0.9


def test_match_sources_recovers_permutation():
    rng = np.random.default_rng(6)
    refs = [synth_speechlike(0.5, RATE, seed=s) for s in (30, 31, 32)]
    estimates = [refs[2], refs[0], refs[1]]
    matches = match_sources(estimates, refs)
    mapping = {e: r for e, r, _ in matches}
    assert mapping == {0: 2, 1: 0, 2: 1}
    assert all(score > 0.99 for _, _, score in matches)


def test_match_angles_circular():
    matches = match_angles([10.0, 170.0], [172.0, 8.0])
    mapping = {e: (r, err) for e, r, err in matches}
    assert mapping[0][0] == 1 and mapping[0][1] == pytest.approx(2.0)
    assert mapping[1][0] == 0 and mapping[1][1] == pytest.approx(2.0)
    # wrap across the half-turn boundary
    wrap = match_angles([179.0], [-179.0])
    assert wrap[0][2] == pytest.approx(2.0)


def test_match_angles_unequal_counts():
    matches = match_angles([0.0, 90.0, -90.0], [1.0])
    assert len(matches) == 1
    assert matches[0][1] == 0
    assert matches[0][2] == pytest.approx(1.0)
    assert match_angles([], [10.0]) == []
