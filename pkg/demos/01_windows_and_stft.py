"""
Windows, frames and perfect reconstruction
==========================================

Builds the analysis/synthesis window pair for a 512-sample frame with a
160-sample hop, checks that overlap-add reconstructs the signal, and shows
where the frames fall on a one-second signal.

Run with ``python3 demos/01_windows_and_stft.py``.
"""
import numpy as np

from nniva import stft

rate = 16000
windows = stft.design_windows(512, 160)
print(f"frame {windows.frame_size}, hop {windows.hop}, {windows.n_bins} bins")
print(f"overlap-add residual: {stft.pr_residual(windows):.2e}")

# With half overlap the synthesis window coincides with the analysis window.
half = stft.design_windows(512, 256)
print(f"half overlap, max |analysis - synthesis| = {np.max(np.abs(half.analysis - half.synthesis)):.2e}")

# One second of white noise: frames are placed without padding, so the last
# partial hop is dropped and only the fully covered interior is compared.
rng = np.random.default_rng(0)
x = rng.standard_normal(rate)
spec = stft.stft(x, windows, rate)
print(f"{spec.n_frames} frames cover samples 0..{spec.n_frames * windows.hop + windows.frame_size - windows.hop}")

y = stft.istft(spec, windows)[0]
sl = stft.interior(spec.n_frames, windows)
err = y[sl] - x[sl]
snr = 10 * np.log10(np.sum(x[sl] ** 2) / np.sum(err**2))
print(f"round trip over samples {sl.start}..{sl.stop}: SNR {snr:.1f} dB")

# A cosine centred on bin 20 of a 512-point frame puts nearly all its
# energy in bins 19..21 once the window has smeared it.
tone = np.cos(2 * np.pi * 20 * np.arange(rate) / 512)
energy = np.mean(np.abs(stft.stft(tone, windows).data[0]) ** 2, axis=1)
print(f"tone energy in bins 19..21: {energy[19:22].sum() / energy.sum():.4f}")
