"""Source density models expressed through their nonnegative gain vectors.

For a full-band source vector ``S`` (length K) every model returns gains
``f >= 0`` such that the score ``-d log p / dS*`` equals ``f * S``. Only these
gains enter the separation update, so a model never needs a normalized pdf.

All functions accept leading batch dimensions: ``S`` may have shape
``(..., K)`` and hidden states ``(..., hidden_dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fileio
from .exceptions import FormatError, ParameterError

EPS = 1e-12
WEIGHTS_KIND = "density-weights"
WEIGHTS_VERSION = 1

__all__ = [
    "EPS",
    "NNWeights",
    "GainResult",
    "LaplaceModel",
    "NeuralModel",
    "laplace_gains",
    "nn_gains",
    "score",
    "softplus",
    "init_weights",
    "allowed_hidden_dims",
    "save_weights",
    "load_weights",
]


def allowed_hidden_dims(width: int) -> tuple[int, int]:
    """Hidden sizes accepted for a given layer width: none, or a quarter of it."""
    return (0, width // 4)


@dataclass
class NNWeights:
    """Parameters of the three-layer gain network.

    ``theta1`` has ``K + 2 + hidden_dim`` columns for the input layout
    ``[log|S_bar|^2; log||S||; h; 1]``; ``theta2`` and ``theta3`` carry one
    trailing bias column each.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    hidden_dim: int = 0

    def __post_init__(self):
        self.hidden_dim = int(self.hidden_dim)
        t1, t2, t3 = (np.asarray(t) for t in (self.theta1, self.theta2, self.theta3))
        if t1.ndim != 2 or t2.ndim != 2 or t3.ndim != 2:
            raise ParameterError("all theta matrices must be 2-D")
        width = t1.shape[0]
        K = t3.shape[0]
        if t1.shape[1] != K + 2 + self.hidden_dim:
            raise ParameterError(
                f"theta1 has {t1.shape[1]} columns, expected K + 2 + hidden_dim = "
                f"{K + 2 + self.hidden_dim}"
            )
        if t2.shape != (width, width + 1):
            raise ParameterError(f"theta2 shape {t2.shape}, expected {(width, width + 1)}")
        if t3.shape[1] != width + 1:
            raise ParameterError(f"theta3 has {t3.shape[1]} columns, expected {width + 1}")
        if self.hidden_dim not in allowed_hidden_dims(width):
            raise ParameterError(
                f"hidden_dim {self.hidden_dim} not allowed for width {width}; "
                f"use one of {allowed_hidden_dims(width)}"
            )
        if not all(np.all(np.isfinite(t)) for t in (t1, t2, t3)):
            raise ParameterError("weights contain non-finite entries")
        self.theta1, self.theta2, self.theta3 = t1, t2, t3

    @property
    def n_bins(self) -> int:
        return self.theta3.shape[0]

    @property
    def width(self) -> int:
        return self.theta1.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.theta1, self.theta2, self.theta3


@dataclass
class GainResult:
    gains: np.ndarray
    hidden_next: np.ndarray


def softplus(x: np.ndarray) -> np.ndarray:
    """``log(1 + exp(x))``, returning ``x`` itself above 30 where they agree."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def _norm(S: np.ndarray) -> np.ndarray:
    power = S.real**2 + S.imag**2
    return np.maximum(np.sqrt(power.sum(axis=-1)), EPS)


def laplace_gains(S: np.ndarray) -> GainResult:
    """Gains of the multivariate Laplace density ``p(S) ~ exp(-||S||)``."""
    S = np.asarray(S)
    g = 1.0 / (2.0 * _norm(S))
    gains = np.broadcast_to(g[..., None], S.shape).astype(float)
    return GainResult(gains, np.zeros(S.shape[:-1] + (0,)))


def nn_gains(S: np.ndarray, h: np.ndarray | None, w: NNWeights) -> GainResult:
    """Gains of the neural density model.

    The network sees log-compressed normalized magnitudes, the log norm and
    the previous hidden state, and outputs ``gamma``. The score is
    ``softplus(gamma) * S / ||S||``, so the per-bin gain is
    ``softplus(gamma) / ||S||``.
    """
    S = np.asarray(S)
    if S.shape[-1] != w.n_bins:
        raise ParameterError(f"input has {S.shape[-1]} bins, weights expect {w.n_bins}")
    batch = S.shape[:-1]
    if h is None:
        h = np.zeros(batch + (w.hidden_dim,))
    h = np.asarray(h, dtype=float)
    if h.shape != batch + (w.hidden_dim,):
        raise ParameterError(f"hidden state shape {h.shape}, expected {batch + (w.hidden_dim,)}")

    norm = _norm(S)
    power = S.real**2 + S.imag**2
    features = np.concatenate(
        [
            np.log(power / norm[..., None] ** 2 + EPS),
            np.log(norm)[..., None],
            h,
            np.ones(batch + (1,)),
        ],
        axis=-1,
    )
    alpha = np.tanh(features @ w.theta1.T)
    beta = np.tanh(alpha @ w.theta2[:, :-1].T + w.theta2[:, -1])
    gamma = beta @ w.theta3[:, :-1].T + w.theta3[:, -1]
    gains = softplus(gamma) / norm[..., None]
    return GainResult(gains, alpha[..., : w.hidden_dim].copy())


def score(S: np.ndarray, gains: GainResult | np.ndarray) -> np.ndarray:
    g = gains.gains if isinstance(gains, GainResult) else gains
    return g * S


class LaplaceModel:
    """Closed-form multivariate Laplace source prior."""

    hidden_dim = 0
    n_bins = None

    def gains(self, S, hidden=None) -> GainResult:
        return laplace_gains(S)

    def __repr__(self):
        return "LaplaceModel()"


class NeuralModel:
    """Learned gain network; recurrent when ``weights.hidden_dim > 0``."""

    def __init__(self, weights: NNWeights):
        self.weights = weights

    @property
    def hidden_dim(self) -> int:
        return self.weights.hidden_dim

    @property
    def n_bins(self) -> int:
        return self.weights.n_bins

    def gains(self, S, hidden=None) -> GainResult:
        return nn_gains(S, hidden, self.weights)

    def __repr__(self):
        kind = "RNN" if self.hidden_dim else "FNN"
        return f"NeuralModel({kind}, K={self.n_bins}, width={self.weights.width})"


def init_weights(n_bins: int, width: int = 512, hidden_dim: int = 0, rng=None) -> NNWeights:
    """Random weights with N(0, 1/fan_in) entries."""
    rng = np.random.default_rng(rng)
    shapes = [
        (width, n_bins + 2 + hidden_dim),
        (width, width + 1),
        (n_bins, width + 1),
    ]
    thetas = [rng.standard_normal(s) / np.sqrt(s[1]) for s in shapes]
    return NNWeights(*thetas, hidden_dim=hidden_dim)


def save_weights(w: NNWeights, path) -> None:
    """Write weights as float32; see :mod:`nniva.fileio` for the layout."""
    fileio.write_arrays(
        path,
        WEIGHTS_KIND,
        WEIGHTS_VERSION,
        {"K": w.n_bins, "hidden_dim": w.hidden_dim},
        {"theta1": w.theta1, "theta2": w.theta2, "theta3": w.theta3},
    )


def load_weights(path) -> NNWeights:
    version, scalars, arrays = fileio.read_arrays(path, WEIGHTS_KIND)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weight format version {version}")
    try:
        K = int(scalars["K"])
        hidden_dim = int(scalars["hidden_dim"])
        thetas = [arrays[name] for name in ("theta1", "theta2", "theta3")]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete weight header") from exc
    if thetas[2].ndim != 2 or thetas[2].shape[0] != K:
        raise FormatError(f"{path}: theta3 shape {thetas[2].shape} disagrees with K = {K}")
    try:
        return NNWeights(*thetas, hidden_dim=hidden_dim)
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc
