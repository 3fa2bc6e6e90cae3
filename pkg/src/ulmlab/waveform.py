"""Transmit pulse and analytic-signal envelope detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


@dataclass(frozen=True, eq=False)
class Pulse:
    center_frequency: float
    n_cycles: float
    sampling_frequency: float
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return self.n_cycles / self.center_frequency

    @property
    def center_time(self) -> float:
        """Delay from pulse onset to the peak of its Hann envelope."""
        return 0.5 * (self.samples.size - 1) / self.sampling_frequency

    def template(self, oversample: int = 16) -> tuple[np.ndarray, float]:
        """Closed-form pulse on a grid ``oversample`` times finer than ``fs``.

        Returns ``(values, dt)``. The template spans the same support as
        ``samples`` and is normalized to unit peak magnitude.
        """
        oversample = int(oversample)
        if oversample < 1:
            raise ValueError("oversample must be >= 1")
        n = self.samples.size
        m = (n - 1) * oversample + 1
        values = _hann_tone(m, self.center_frequency, self.sampling_frequency * oversample)
        return values, 1.0 / (self.sampling_frequency * oversample)


def _hann_tone(n: int, f0: float, fs: float) -> np.ndarray:
    k = np.arange(n)
    u = k / (n - 1) if n > 1 else np.zeros(1)
    window = 0.5 * (1.0 - np.cos(2 * np.pi * u))
    s = np.sin(2 * np.pi * f0 * k / fs) * window
    peak = np.abs(s).max()
    return s / peak if peak > 0 else s


def make_pulse(f0: float = 7.8e6, cycles: float = 2, fs: float = 31.24e6) -> Pulse:
    """Hann-weighted sine burst of ``cycles`` periods sampled at ``fs``."""
    if not fs > 2 * f0:
        raise ValueError(f"sampling frequency {fs} Hz does not exceed twice the center frequency {f0} Hz")
    if cycles < 1:
        raise ValueError("a pulse needs at least one cycle")
    n = int(round(cycles * fs / f0)) + 1
    return Pulse(f0, cycles, fs, _hann_tone(n, f0, fs))


def analytic_signal(x, axis: int = -1, upsample: int = 1, pad: int = 0) -> np.ndarray:
    """Analytic signal by one-sided spectrum construction.

    With ``upsample > 1`` the spectrum is zero-padded, giving the band-limited
    interpolation of the analytic signal at ``upsample`` times the input rate
    (sample ``k * upsample`` of the output matches input sample ``k``).
    ``pad`` zeros are appended before the transform to keep circular
    wrap-around away from the end of the record; they are cropped again.
    """
    x = np.asarray(x)
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    nfft = sfft.next_fast_len(n + int(pad))
    spec = sfft.fft(x, nfft, axis=-1)
    half = nfft // 2
    out_len = nfft * upsample
    full = np.zeros(x.shape[:-1] + (out_len,), dtype=np.result_type(spec.dtype, np.complex64))
    full[..., 0] = spec[..., 0]
    full[..., 1 : (nfft + 1) // 2] = 2 * spec[..., 1 : (nfft + 1) // 2]
    if nfft % 2 == 0:
        full[..., half] = spec[..., half]
    z = sfft.ifft(full, axis=-1) * upsample
    z = z[..., : n * upsample]
    return np.moveaxis(z, -1, axis)


def envelope(trace, axis: int = -1) -> np.ndarray:
    """Magnitude of the analytic signal of a real trace."""
    trace = np.asarray(trace, dtype=float)
    if trace.shape[axis] < 4:
        raise ValueError("envelope needs at least 4 samples")
    return np.abs(analytic_signal(trace, axis=axis))
