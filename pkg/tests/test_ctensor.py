import numpy as np
import pytest

from specseg.ctensor import (IQFrame, SpectrumFrame, cabs, cadd, cmul, dft, fft,
                             fft_array)
from specseg.errors import NonPowerOfTwoLength, ShapeMismatch


def dft_loop_oracle(r):
    """Direct per-bin summation, scalar Python loops."""
    n = len(r)
    out = np.zeros(n, dtype=np.complex128)
    for f in range(n):
        acc = 0j
        for i in range(n):
            acc += r[i] * np.exp(-2j * np.pi * f * i / n)
        out[f] = acc
    return out


def random_frame(n, rng, fs=20e6):
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    return IQFrame(x.astype(np.complex128), fs)


def test_dft_impulse_flat_spectrum():
    out = dft(IQFrame(np.array([1, 0, 0, 0], dtype=np.complex128), 1.0))
    assert np.allclose(out.coeffs, np.ones(4), atol=1e-15)


def test_dft_single_tone_bin():
    n, k = 8, 3
    r = np.exp(2j * np.pi * k * np.arange(n) / n)
    out = dft(IQFrame(r, 1.0)).coeffs
    expected = np.zeros(n, dtype=np.complex128)
    expected[k] = n
    assert np.max(np.abs(out - expected)) < 1e-12


def test_dft_matches_loop_oracle(rng):
    frame = random_frame(64, rng)
    out = dft(frame).coeffs
    assert np.max(np.abs(out - dft_loop_oracle(frame.samples))) < 1e-9


@pytest.mark.parametrize("n", [8, 64, 1024])
def test_fft_matches_dft(n, rng):
    frame = random_frame(n, rng)
    assert np.max(np.abs(fft(frame).coeffs - dft(frame).coeffs)) < 1e-9


def test_fft_impulse():
    out = fft(IQFrame(np.eye(1, 8, 0, dtype=np.complex128)[0], 1.0))
    assert np.allclose(out.coeffs, np.ones(8), atol=1e-12)


def test_fft_rejects_non_power_of_two(rng):
    with pytest.raises(NonPowerOfTwoLength):
        fft(random_frame(12, rng))


def test_parseval(rng):
    frame = random_frame(1024, rng)
    coeffs = fft(frame).coeffs
    time_energy = np.sum(np.abs(frame.samples) ** 2)
    freq_energy = np.sum(np.abs(coeffs) ** 2) / 1024
    assert abs(time_energy - freq_energy) / time_energy < 1e-9


def test_dft_linearity(rng):
    u = random_frame(64, rng)
    v = random_frame(64, rng)
    a, b = 2.5 - 1j, -0.3 + 0.7j
    mixed = IQFrame(a * u.samples + b * v.samples, u.sample_rate_hz)
    lhs = dft(mixed).coeffs
    rhs = a * dft(u).coeffs + b * dft(v).coeffs
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_bin_width():
    frame = random_frame(64, np.random.default_rng(0), fs=20e6)
    assert fft(frame).bin_width_hz == pytest.approx(20e6 / 64)


def test_fft_array_batched(rng):
    x = (rng.normal(size=(3, 64)) + 1j * rng.normal(size=(3, 64)))
    out = fft_array(x)
    for i in range(3):
        row = fft(IQFrame(x[i], 1.0)).coeffs
        assert np.max(np.abs(out[i] - row)) < 1e-9


def test_elementwise_ops(rng):
    assert cmul(np.array([1 + 1j]), np.array([1 - 1j]))[0] == 2 + 0j
    assert cabs(np.array([3 + 4j]))[0] == pytest.approx(5.0)
    a = rng.normal(size=17) + 1j * rng.normal(size=17)
    b = rng.normal(size=17) + 1j * rng.normal(size=17)
    expected = np.array([a[i] * b[i] for i in range(17)])
    assert np.allclose(cmul(a, b), expected, atol=1e-15)
    assert np.allclose(cadd(a, b), np.array([a[i] + b[i] for i in range(17)]), atol=1e-15)
    with pytest.raises(ShapeMismatch):
        cmul(a, b[:5])


def test_frames_reject_non_finite():
    with pytest.raises(ValueError):
        IQFrame(np.array([1.0, np.nan], dtype=np.complex128), 1.0)
    with pytest.raises(ValueError):
        SpectrumFrame(np.array([np.inf + 0j]), 1.0)
