"""Complex tensor carriers and Fourier transforms.

All array data in the toolkit lives in plain numpy arrays with a complex
dtype (complex64 for single precision, complex128 for double); the real
part carries the in-phase / x component and the imaginary part the
quadrature / y component.  This module owns the frame containers and the
frequency-domain transforms every other module builds on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPowerOfTwoLength, ShapeMismatch

# Alias used in signatures throughout the package: an ndarray of complex
# (or, for real-mode models, float) dtype.
ComplexTensor = np.ndarray

_COMPLEX_FOR_REAL = {np.dtype(np.float32): np.complex64, np.dtype(np.float64): np.complex128}


def _as_complex_dtype(dtype: np.dtype) -> np.dtype:
    if np.issubdtype(dtype, np.complexfloating):
        return np.dtype(dtype)
    return np.dtype(_COMPLEX_FOR_REAL.get(np.dtype(dtype), np.complex128))


def require_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise ValueError if the array holds NaN or Inf entries."""
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{what} contains non-finite values")
    return t


@dataclass
class IQFrame:
    """A window of complex baseband samples captured at `sample_rate_hz`."""

    samples: np.ndarray
    sample_rate_hz: float
    center_freq_hz: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ShapeMismatch("IQ frame must be a non-empty 1-D array")
        if not np.issubdtype(self.samples.dtype, np.complexfloating):
            self.samples = self.samples.astype(np.complex128)
        require_finite(self.samples, "IQ samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class SpectrumFrame:
    """DFT coefficients of one IQFrame, in natural bin order f = 0..L-1."""

    coeffs: np.ndarray
    bin_width_hz: float

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        if self.coeffs.ndim != 1:
            raise ShapeMismatch("spectrum must be 1-D")
        require_finite(self.coeffs, "spectrum coefficients")

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def power(self) -> np.ndarray:
        """Per-bin power |R[f]|^2 as a real array."""
        return (self.coeffs.real ** 2 + self.coeffs.imag ** 2).astype(np.float64)


def dft(frame: IQFrame) -> SpectrumFrame:
    """Unnormalized forward DFT by direct summation.

    coeffs[f] = sum_n r[n] * exp(-2j*pi*f*n/L).  O(L^2); this is the
    reference path the fast transform is checked against.
    """
    r = frame.samples
    n = r.shape[0]
    dtype = _as_complex_dtype(r.dtype)
    out = np.empty(n, dtype=np.complex128)
    idx = np.arange(n)
    # chunk the coefficient rows so the twiddle matrix never exceeds ~32 MB
    chunk = max(1, (1 << 21) // max(n, 1))
    rd = r.astype(np.complex128)
    for f0 in range(0, n, chunk):
        f = np.arange(f0, min(f0 + chunk, n))
        w = np.exp((-2j * np.pi / n) * np.outer(f, idx))
        out[f0:f0 + f.size] = w @ rd
    return SpectrumFrame(out.astype(dtype), frame.sample_rate_hz / n)


def fft(frame: IQFrame) -> SpectrumFrame:
    """Radix-2 iterative FFT; same convention and output as `dft`.

    Raises NonPowerOfTwoLength when the frame length is not 2^k.
    """
    r = frame.samples
    n = r.shape[0]
    if n & (n - 1) or n == 0:
        raise NonPowerOfTwoLength(f"fft requires power-of-two length, got {n}")
    dtype = _as_complex_dtype(r.dtype)
    return SpectrumFrame(fft_array(r).astype(dtype), frame.sample_rate_hz / n)


def fft_array(r: np.ndarray) -> np.ndarray:
    """Radix-2 FFT over the last axis of a power-of-two-length array."""
    n = r.shape[-1]
    if n & (n - 1) or n == 0:
        raise NonPowerOfTwoLength(f"fft requires power-of-two length, got {n}")
    a = r.astype(np.complex128)[..., _bit_reversal(n)].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return a


def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


# -- elementwise helpers ----------------------------------------------------
#
# Thin wrappers over numpy ufuncs; they exist to carry the shape checks and
# the finiteness contract at module boundaries.  Hot paths use numpy
# directly.

def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} vs {b.shape}")


def cadd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return require_finite(a + b)


def cmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return require_finite(a * b)


def cscale(t: np.ndarray, s: complex) -> np.ndarray:
    return require_finite(t * s)


def cconj(t: np.ndarray) -> np.ndarray:
    return np.conj(t)


def cabs(t: np.ndarray) -> np.ndarray:
    """Elementwise magnitude sqrt(x^2 + y^2), returned as a real array."""
    return np.abs(t).astype(np.float64 if t.dtype == np.complex128 else np.float32)
