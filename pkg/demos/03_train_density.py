"""
Training a small neural density
===============================

Fits the gain network on a synthetic corpus with a deliberately small
setup (65-point frames, 64 hidden units, 8 lanes) so it runs on a laptop.
Coherence between the outputs and the true sources is printed as a moving
average; the weights are written to ``density_small.bin`` and can be used
with ``04_butterworth_permutation.py --weights``.

Run with ``python3 demos/03_train_density.py [iterations] [out.bin]``.
"""
import sys
import tempfile
import time

import numpy as np

from nniva import sources
from nniva.density import save_weights
from nniva.trainer import TrainConfig, Trainer

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out_path = sys.argv[2] if len(sys.argv) > 2 else "density_small.bin"

corpus_dir = tempfile.mkdtemp(prefix="nniva_corpus_")
sources.write_synthetic_corpus(corpus_dir, n_files=16, duration=10.0, seed=0)
corpus = sources.SourceCorpus.from_directory(corpus_dir)

config = TrainConfig(
    n_sources=4, coherence_window=128, mu0=0.01, batch_size=8, frame_size=64, hop=20, width=64,
    iterations=iterations, seed=0,
)
trainer = Trainer(config, corpus)
print(f"{config.n_bins} bins, width {config.width}, {config.batch_size} lanes of {config.n_sources} sources")

t0 = time.time()
for it in range(iterations):
    trainer.step()
    if (it + 1) % 50 == 0 or it == 0:
        recent = np.mean(trainer.history[-50:])
        print(f"iteration {it + 1:5d}  coherence (last 50) {recent:.4f}  [{time.time() - t0:.0f} s]")

save_weights(trainer.weights, out_path)
print(f"weights written to {out_path}")
