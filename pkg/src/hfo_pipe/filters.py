"""Causal second-order band-pass filters for the Ripple and Fast-Ripple bands.

Each band is a single biquad: the first-order Butterworth low-pass prototype
transformed to a band-pass, then mapped to z with the bilinear transform.
Both edges are pre-warped, so the -3 dB points land on the requested edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .signal_io import Recording

RIPPLE = (80.0, 250.0)
FAST_RIPPLE = (250.0, 500.0)
LOWPASS_CUTOFF_HZ = 80.0


class FilterDesignError(ValueError):
    pass


@dataclass(frozen=True)
class BandSpec:
    name: str
    low_hz: float
    high_hz: float

    def validate(self, sample_rate_hz: float) -> None:
        nyquist = sample_rate_hz / 2.0
        if self.name == "lowpass":
            if not 0 < self.high_hz < nyquist:
                raise FilterDesignError(f"{self.name}: cutoff {self.high_hz} Hz must lie in (0, {nyquist:g})")
            return
        if not 0 < self.low_hz < self.high_hz:
            raise FilterDesignError(f"{self.name}: need 0 < low_hz < high_hz, got {self.low_hz}, {self.high_hz}")
        if self.high_hz >= nyquist:
            raise FilterDesignError(
                f"{self.name}: band edge {self.high_hz} Hz is at or above Nyquist ({nyquist:g} Hz)"
            )


RIPPLE_BAND = BandSpec("ripple", *RIPPLE)
FAST_RIPPLE_BAND = BandSpec("fast_ripple", *FAST_RIPPLE)
LOWPASS_BAND = BandSpec("lowpass", 0.0, LOWPASS_CUTOFF_HZ)


@dataclass(frozen=True)
class BiquadCoeffs:
    """Cascaded sections, each (b0, b1, b2, a1, a2) with a0 = 1."""

    sections: tuple[tuple[float, float, float, float, float], ...]
    band: str

    def sos(self) -> np.ndarray:
        return np.array([[b0, b1, b2, 1.0, a1, a2] for b0, b1, b2, a1, a2 in self.sections])

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for _, _, _, a1, a2 in self.sections])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz: np.ndarray, sample_rate_hz: float) -> np.ndarray:
        """Complex frequency response evaluated directly on the unit circle."""
        z1 = np.exp(-2j * math.pi * np.asarray(freqs_hz, dtype=float) / sample_rate_hz)
        h = np.ones_like(z1)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * z1 + b2 * z1 ** 2) / (1.0 + a1 * z1 + a2 * z1 ** 2)
        return h


def _prewarp(f_hz: float, fs: float) -> float:
    return 2.0 * fs * math.tan(math.pi * f_hz / fs)


def design_bandpass(band: BandSpec, sample_rate_hz: float) -> BiquadCoeffs:
    band.validate(sample_rate_hz)
    if band.name == "lowpass":
        return design_lowpass(band.high_hz, sample_rate_hz)
    k = 2.0 * sample_rate_hz
    w1 = _prewarp(band.low_hz, sample_rate_hz)
    w2 = _prewarp(band.high_hz, sample_rate_hz)
    bw = w2 - w1
    w0_sq = w1 * w2
    # H(s) = bw*s / (s^2 + bw*s + w0^2), s = k (1 - z^-1) / (1 + z^-1)
    a0 = k * k + bw * k + w0_sq
    a1 = (2.0 * w0_sq - 2.0 * k * k) / a0
    a2 = (k * k - bw * k + w0_sq) / a0
    g = bw * k / a0
    coeffs = BiquadCoeffs(((g, 0.0, -g, a1, a2),), band.name)
    if not coeffs.is_stable():
        raise FilterDesignError(f"{band.name}: designed filter is unstable")
    return coeffs


def design_lowpass(cutoff_hz: float, sample_rate_hz: float) -> BiquadCoeffs:
    """Second-order Butterworth low-pass, H(s) = wc^2 / (s^2 + sqrt(2) wc s + wc^2)."""
    k = 2.0 * sample_rate_hz
    wc = _prewarp(cutoff_hz, sample_rate_hz)
    q = math.sqrt(2.0) * wc * k
    a0 = k * k + q + wc * wc
    g = wc * wc / a0
    return BiquadCoeffs(((g, 2.0 * g, g, (2.0 * wc * wc - 2.0 * k * k) / a0, (k * k - q + wc * wc) / a0),), "lowpass")


def filter_signal(x: np.ndarray, coeffs: BiquadCoeffs) -> np.ndarray:
    """Causal filtering from a zero initial state (transposed direct form II)."""
    return signal.sosfilt(coeffs.sos(), np.asarray(x, dtype=float), axis=-1)


def apply_filter(recording: Recording, coeffs: BiquadCoeffs) -> Recording:
    out = filter_signal(recording.samples, coeffs)
    band = coeffs.band if recording.band is None else f"{recording.band}+{coeffs.band}"
    return recording.with_samples(out, band=band)


def parse_band(text: str, name: str) -> BandSpec:
    """Parse a ``low:high`` flag value such as ``80:250``."""
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise FilterDesignError(f"band {name!r}: expected LOW:HIGH, got {text!r}") from None
    return BandSpec(name, lo, hi)
