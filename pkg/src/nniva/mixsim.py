"""Synthetic convolutive mixing systems.

A :class:`MixingSystem` is a bank of FIR filters ``fir[m, n]`` from source
``n`` to microphone ``m`` with an optional common all-pole denominator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from . import fileio
from .exceptions import FormatError, ParameterError

RANDOM_TAP_REACH = 16
RIR_KIND = "rir-bank"
RIR_VERSION = 1
MAX_RIR_LENGTH = 1 << 16


@dataclass
class MixingSystem:
    kind: str
    fir: np.ndarray
    denominator: np.ndarray | None = None
    sample_rate: float | None = None

    def __post_init__(self):
        self.fir = np.asarray(self.fir, dtype=float)
        if self.fir.ndim != 3:
            raise ParameterError(f"fir bank must be (mics, sources, taps), got {self.fir.shape}")
        if not np.all(np.isfinite(self.fir)):
            raise ParameterError("mixing filters contain non-finite values")

    @property
    def n_mics(self) -> int:
        return self.fir.shape[0]

    @property
    def n_sources(self) -> int:
        return self.fir.shape[1]


def tap_scale() -> np.ndarray:
    j = np.arange(-RANDOM_TAP_REACH, RANDOM_TAP_REACH + 1)
    return 1.0 / (1.0 + np.abs(j))


def random_taps_system(A: np.ndarray) -> MixingSystem:
    """System from raw tap matrices ``A[j + 16]``, ``j = -16..16``.

    The non-causal filter is realized with a 16-sample latency.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 3 or A.shape[0] != 2 * RANDOM_TAP_REACH + 1 or A.shape[1] != A.shape[2]:
        raise ParameterError(f"expected tap matrices of shape (33, N, N), got {A.shape}")
    fir = (A * tap_scale()[:, None, None]).transpose(1, 2, 0)
    return MixingSystem("random_taps", fir)


def sample_random_system(n_sources: int, seed=None) -> MixingSystem:
    if n_sources < 2:
        raise ParameterError("need at least two sources")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2 * RANDOM_TAP_REACH + 1, n_sources, n_sources))
    return random_taps_system(A)


def identity_system(n: int) -> MixingSystem:
    fir = np.eye(n)[:, :, None]
    return MixingSystem("identity", fir)


def butterworth_system() -> MixingSystem:
    """2x2 low/high-pass cross mixer with common denominator 1 + 0.17 z^-2."""
    low = [1.0, 2.0, 1.0]
    high = [1.0, -2.0, 1.0]
    fir = np.array([[low, high], [high, low]])
    return MixingSystem("butterworth", fir, denominator=np.array([1.0, 0.0, 0.17]))


def rir_system(rirs: np.ndarray, sample_rate: float | None = None) -> MixingSystem:
    rirs = np.asarray(rirs, dtype=float)
    if rirs.ndim != 3 or rirs.shape[2] > MAX_RIR_LENGTH:
        raise ParameterError(f"bad RIR bank shape {rirs.shape}")
    return MixingSystem("rir_bank", rirs, sample_rate=sample_rate)


def mix(system: MixingSystem, sources: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Convolve ``(N, samples)`` sources through ``system``.

    Returns ``(mixtures, images)`` with ``images[n, m]`` the contribution of
    source ``n`` at microphone ``m``; ``mixtures = images.sum(axis=0)``.
    Outputs are truncated to the source length.
    """
    s = np.asarray(sources, dtype=float)
    if s.ndim != 2 or s.shape[0] != system.n_sources:
        raise ParameterError(
            f"system expects {system.n_sources} sources, got array of shape {s.shape}"
        )
    L = s.shape[1]
    M, N, _ = system.fir.shape
    images = np.empty((N, M, L))
    for n in range(N):
        for m in range(M):
            images[n, m] = sps.oaconvolve(s[n], system.fir[m, n])[:L]
    if system.denominator is not None:
        images = sps.lfilter([1.0], system.denominator, images, axis=-1)
    return images.sum(axis=0), images


def save_rir_bank(system: MixingSystem, path) -> None:
    """RIR bank file; array ``rir`` is (mics, sources, length)."""
    fileio.write_arrays(
        path,
        RIR_KIND,
        RIR_VERSION,
        {
            "n_src": system.n_sources,
            "n_mic": system.n_mics,
            "length": system.fir.shape[2],
            "sample_rate": system.sample_rate or 0,
        },
        {"rir": system.fir},
    )


def load_rir_bank(path) -> MixingSystem:
    version, scalars, arrays = fileio.read_arrays(path, RIR_KIND)
    if version != RIR_VERSION:
        raise FormatError(f"{path}: unsupported RIR format version {version}")
    try:
        shape = (int(scalars["n_mic"]), int(scalars["n_src"]), int(scalars["length"]))
        rate = float(scalars["sample_rate"]) or None
        rir = arrays["rir"].astype(float)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete RIR header") from exc
    if rir.shape != shape:
        raise FormatError(f"{path}: payload shape {rir.shape} disagrees with header {shape}")
    try:
        return rir_system(rir, rate)
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc
