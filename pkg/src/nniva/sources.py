"""Source material: WAV corpora and a synthetic speech-like generator.

The generator exists so tests and demos run without a speech corpus. It
produces voiced syllables (gliding harmonic series under random formant
envelopes), unvoiced noise bursts and pauses, which gives the cross-band
energy co-modulation that IVA relies on.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal as sps

from .exceptions import ParameterError
from .fileio import read_wav, write_wav

SILENCE_DBFS = -60.0


def speech_like(duration: float, sample_rate: int = 16000, rng=None) -> np.ndarray:
    """Synthetic sparse, co-modulated source, peak-normalized to 0.9."""
    rng = np.random.default_rng(rng)
    n_total = int(round(duration * sample_rate))
    out = np.zeros(n_total)
    pos = int(rng.integers(0, sample_rate // 10))
    while pos < n_total:
        kind = rng.choice(["voiced", "unvoiced", "pause"], p=[0.6, 0.15, 0.25])
        if kind == "pause":
            pos += int(rng.uniform(0.05, 0.3) * sample_rate)
            continue
        n = int(rng.uniform(0.08, 0.3) * sample_rate)
        n = min(n, n_total - pos)
        if n < 16:
            break
        t = np.arange(n) / sample_rate
        if kind == "voiced":
            f0 = rng.uniform(90.0, 260.0) * (1.0 + rng.uniform(-0.25, 0.25) * t / t[-1])
            phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
            n_harm = int(min(40, 0.45 * sample_rate / f0.max()))
            formants = rng.uniform([250, 900, 2200], [900, 2300, 3500])
            seg = np.zeros(n)
            for h in range(1, n_harm + 1):
                fh = h * f0.mean()
                amp = sum(np.exp(-0.5 * ((fh - fc) / 120.0) ** 2) for fc in formants)
                seg += (amp + 0.02) / np.sqrt(h) * np.sin(h * phase)
        else:
            lo = rng.uniform(1500.0, 3000.0)
            b, a = sps.butter(2, [lo / (sample_rate / 2), min(0.95, (lo + 3000.0) / (sample_rate / 2))], "band")
            seg = 0.5 * sps.lfilter(b, a, rng.standard_normal(n))
        env = np.sin(np.pi * np.arange(n) / n) ** 2
        out[pos : pos + n] += rng.uniform(0.3, 1.0) * env * seg
        pos += n
    peak = np.max(np.abs(out))
    return 0.9 * out / peak if peak > 0 else out


def write_synthetic_corpus(directory, n_files: int = 8, duration: float = 10.0, sample_rate: int = 16000, seed=None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_files):
        path = directory / f"synth_{i:03d}.wav"
        write_wav(path, sample_rate, speech_like(duration, sample_rate, rng), subtype="pcm16")
        paths.append(path)
    return paths


def rms_dbfs(x: np.ndarray) -> float:
    r = np.sqrt(np.mean(np.square(x)))
    return -np.inf if r <= 0 else 20.0 * np.log10(r)


class SourceCorpus:
    """Mono WAV files held in memory, sampled as random peak-normalized segments."""

    def __init__(self, signals: list[np.ndarray], sample_rate: int):
        if not signals:
            raise ParameterError("source corpus is empty")
        self.signals = signals
        self.sample_rate = int(sample_rate)

    @classmethod
    def from_directory(cls, directory) -> "SourceCorpus":
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise ParameterError(f"no WAV files in {directory}")
        signals, rate = [], None
        for p in paths:
            r, x = read_wav(p)
            if rate is not None and r != rate:
                raise ParameterError(f"{p}: sample rate {r} differs from {rate}")
            rate = r
            signals.append(x[0])
        return cls(signals, rate)

    def segment(self, length: int, rng, max_tries: int = 50) -> np.ndarray:
        """A random segment of ``length`` samples; near-silent draws are retried."""
        candidates = [s for s in self.signals if len(s) >= length]
        if not candidates:
            raise ParameterError(f"no corpus file is at least {length} samples long")
        for _ in range(max_tries):
            x = candidates[rng.integers(len(candidates))]
            start = rng.integers(0, len(x) - length + 1)
            seg = x[start : start + length]
            peak = np.max(np.abs(seg))
            if peak > 0 and rms_dbfs(seg / peak) > SILENCE_DBFS:
                return seg / peak
        raise ParameterError("could not draw a non-silent segment from the corpus")

    def sample(self, n_sources: int, length: int, rng) -> np.ndarray:
        return np.stack([self.segment(length, rng) for _ in range(n_sources)])
