"""Separation quality measures: permutation-invariant coherence and SIR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ParameterError
from .separator import apply_demixing, resolve_scaling
from .stft import Spectrogram, WindowPair, istft, stft

SIR_CAP_DB = 80.0
_TINY = 1e-300

__all__ = [
    "CoherenceReport",
    "best_permutation",
    "coherence_matrix",
    "coherence",
    "sir",
    "sir_matrix",
    "hf_emphasis",
    "output_contributions",
    "energy_db",
]


@dataclass
class CoherenceReport:
    """``permutation[n]`` is the output index matched to source ``n``."""

    value: float
    permutation: np.ndarray
    per_pair: np.ndarray


def best_permutation(score: np.ndarray) -> np.ndarray:
    """Assignment of rows (outputs) to columns (sources) maximizing the total."""
    rows, cols = linear_sum_assignment(np.asarray(score), maximize=True)
    perm = np.empty(len(cols), dtype=int)
    perm[cols] = rows
    return perm


def _data(x):
    return x.data if isinstance(x, Spectrogram) else np.asarray(x)


def coherence_matrix(Y, S, eps: float = 1e-20) -> np.ndarray:
    """Bin-averaged absolute coherence between every output and every source.

    Expectations are plain means over frames, no mean removal. Pairs whose
    energy product is below ``eps`` contribute zero.
    """
    Y, S = _data(Y), _data(S)
    if Y.shape != S.shape or Y.ndim != 3:
        raise ParameterError(f"shape mismatch: outputs {Y.shape}, sources {S.shape}")
    if Y.shape[2] < 2:
        raise ParameterError("coherence needs at least two frames")
    T = Y.shape[2]
    cross = np.abs(np.einsum("mkt,nkt->mnk", Y, S.conj())) / T
    py = np.mean(np.abs(Y) ** 2, axis=2)
    ps = np.mean(np.abs(S) ** 2, axis=2)
    denom = np.sqrt(py[:, None, :] * ps[None, :, :])
    valid = denom > eps
    coh = np.where(valid, cross / np.where(valid, denom, 1.0), 0.0)
    return coh.mean(axis=2)


def coherence(Y, S) -> CoherenceReport:
    per_pair = coherence_matrix(Y, S)
    perm = best_permutation(per_pair)
    N = per_pair.shape[1]
    value = float(per_pair[perm, np.arange(N)].mean())
    return CoherenceReport(min(max(value, 0.0), 1.0), perm, per_pair)


def sir_matrix(contributions: np.ndarray) -> np.ndarray:
    """``out[m, n]``: SIR in dB of output ``m`` if source ``n`` is its target.

    ``contributions[m, n]`` is the part of output ``m`` caused by source ``n``.
    Values are clipped to +-80 dB.
    """
    c = np.asarray(contributions, dtype=float)
    if c.ndim != 3 or c.shape[0] != c.shape[1]:
        raise ParameterError(f"contributions must be (N, N, samples), got {c.shape}")
    energy = np.sum(c**2, axis=-1)
    interference = energy.sum(axis=1, keepdims=True) - energy
    with np.errstate(divide="ignore"):
        ratio = 10.0 * (np.log10(np.maximum(energy, _TINY)) - np.log10(np.maximum(interference, _TINY)))
    ratio = np.where(interference <= 0.0, SIR_CAP_DB, ratio)
    ratio = np.where(energy <= 0.0, -SIR_CAP_DB, ratio)
    return np.clip(ratio, -SIR_CAP_DB, SIR_CAP_DB)


def sir(contributions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-source SIR (dB) under the output permutation maximizing total SIR.

    Returns ``(sir_db, permutation)`` with ``sir_db[n]`` measured on output
    ``permutation[n]``.
    """
    table = sir_matrix(contributions)
    perm = best_permutation(table)
    return table[perm, np.arange(table.shape[1])], perm


def hf_emphasis(x: np.ndarray) -> np.ndarray:
    """First difference ``y[i] = x[i] - x[i - 1]`` along the last axis, x[-1] = 0."""
    x = np.asarray(x, dtype=float)
    y = x.copy()
    y[..., 1:] -= x[..., :-1]
    return y


def energy_db(x: np.ndarray, floor_db: float = -SIR_CAP_DB * 2) -> float:
    e = float(np.sum(np.asarray(x, dtype=float) ** 2))
    if e <= 0.0:
        return floor_db
    return max(10.0 * np.log10(e), floor_db)


def output_contributions(
    W: np.ndarray, images: np.ndarray, windows: WindowPair, resolve: bool = True
) -> np.ndarray:
    """Pass each source's microphone images through a frozen demixing system.

    ``images`` is ``(sources, mics, samples)``; returns
    ``(outputs, sources, samples')`` with ``samples'`` the synthesized length.
    """
    W = resolve_scaling(W) if resolve else W
    parts = []
    for img in images:
        X = stft(img, windows).data
        parts.append(istft(Spectrogram(apply_demixing(W, X), 1.0, windows.frame_size, windows.hop), windows))
    return np.stack(parts, axis=1)
