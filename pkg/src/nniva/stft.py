"""Short-time Fourier transform with perfect-reconstruction window pairs.

Spectrograms are stored as ``(channels, bins, frames)`` complex arrays with a
one-sided spectrum, ``bins = frame_size // 2 + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ParameterError

__all__ = [
    "WindowPair",
    "Spectrogram",
    "design_windows",
    "pr_residual",
    "stft",
    "istft",
    "n_frames",
    "interior",
]


@dataclass(frozen=True)
class WindowPair:
    analysis: np.ndarray
    synthesis: np.ndarray
    hop: int

    @property
    def frame_size(self) -> int:
        return self.analysis.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1


@dataclass
class Spectrogram:
    """Multichannel one-sided STFT, ``data`` has shape (channels, bins, frames)."""

    data: np.ndarray
    sample_rate: float
    frame_size: int
    hop: int

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ParameterError(f"spectrogram data must be 3-D, got shape {self.data.shape}")
        if self.data.shape[1] != self.frame_size // 2 + 1:
            raise ParameterError(
                f"{self.data.shape[1]} bins inconsistent with frame size {self.frame_size}"
            )

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return Spectrogram(data, self.sample_rate, self.frame_size, self.hop)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _overlap_sum(w: np.ndarray, hop: int) -> np.ndarray:
    """Sum of ``w`` shifted by multiples of ``hop``, folded onto one hop period."""
    F = w.shape[0]
    n_periods = -(-F // hop)
    padded = np.zeros(n_periods * hop)
    padded[:F] = w
    return padded.reshape(n_periods, hop).sum(axis=0)


def design_windows(frame_size: int, hop: int) -> WindowPair:
    """Build an analysis/synthesis window pair satisfying overlap-add PR.

    Without overlap (``hop == frame_size``) the analysis window is rectangular.
    Otherwise it is the square root of a periodic Hann window. The synthesis
    window is the least-squares dual ``a / sum_m a(n + m hop)**2``, which
    reduces to the analysis window itself whenever the squared window already
    sums to one (e.g. 50 % overlap).
    """
    frame_size = int(frame_size)
    hop = int(hop)
    if not _is_power_of_two(frame_size) or frame_size < 2:
        raise ParameterError(f"frame_size must be a power of two >= 2, got {frame_size}")
    if not 0 < hop <= frame_size:
        raise ParameterError(f"hop must satisfy 0 < hop <= frame_size, got {hop}")

    if hop == frame_size:
        analysis = np.ones(frame_size)
    else:
        n = np.arange(frame_size)
        analysis = np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_size))

    energy = _overlap_sum(analysis**2, hop)
    if np.any(energy <= 0.0):
        raise ParameterError("window pair cannot satisfy perfect reconstruction at this hop")
    synthesis = analysis / np.tile(energy, -(-frame_size // hop))[:frame_size]
    return WindowPair(analysis, synthesis, hop)


def pr_residual(windows: WindowPair) -> float:
    """Max deviation from 1 of the overlap-added analysis*synthesis product."""
    total = _overlap_sum(windows.analysis * windows.synthesis, windows.hop)
    return float(np.max(np.abs(total - 1.0)))


def n_frames(n_samples: int, frame_size: int, hop: int) -> int:
    return (n_samples - frame_size) // hop + 1


def interior(n_frames: int, windows: WindowPair) -> slice:
    """Samples of the synthesized signal covered by every overlapping frame."""
    return slice(windows.frame_size - windows.hop, n_frames * windows.hop)


def stft(signal: np.ndarray, windows: WindowPair, sample_rate: float = 16000.0) -> Spectrogram:
    """Analyze a ``(channels, samples)`` real signal.

    Frame ``t`` covers samples ``[t * hop, t * hop + frame_size)``; trailing
    samples that do not fill a whole frame are dropped.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ParameterError(f"signal must be (channels, samples), got shape {x.shape}")
    F, H = windows.frame_size, windows.hop
    if x.shape[1] < F:
        raise ParameterError(f"signal of {x.shape[1]} samples is shorter than one frame ({F})")

    T = n_frames(x.shape[1], F, H)
    frames = sliding_window_view(x, F, axis=1)[:, : (T - 1) * H + 1 : H, :]
    spec = np.fft.rfft(frames * windows.analysis, axis=-1)
    return Spectrogram(spec.transpose(0, 2, 1), sample_rate, F, H)


def istft(spec: Spectrogram, windows: WindowPair) -> np.ndarray:
    """Overlap-add synthesis; returns ``(channels, (frames - 1) * hop + frame_size)``."""
    if spec.frame_size != windows.frame_size or spec.hop != windows.hop:
        raise ParameterError(
            f"spectrogram (F={spec.frame_size}, hop={spec.hop}) does not match windows "
            f"(F={windows.frame_size}, hop={windows.hop})"
        )
    F, H = windows.frame_size, windows.hop
    C, _, T = spec.data.shape
    frames = np.fft.irfft(spec.data.transpose(0, 2, 1), n=F, axis=-1) * windows.synthesis

    out = np.zeros((C, (T - 1) * H + F))
    for t in range(T):
        out[:, t * H : t * H + F] += frames[:, t]
    return out
