"""Natural-gradient IVA with bin-wise normalized step size.

Separation matrices are stored as ``W[k]`` of shape ``(K, N, N)``. At every
update the per-bin direction is ``(I - g Y^H) W`` where ``g`` is the score
vector of the current outputs. The step is divided by (an upper bound of)
the spectral norm of ``I - g Y^H``, which keeps every ``W[k]`` invertible for
``0 < mu0 < 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .exceptions import FormatError, NumericError, ParameterError
from .stft import Spectrogram

log = logging.getLogger(__name__)

MAX_RESETS = 3

__all__ = [
    "StepControl",
    "SeparationState",
    "Trajectory",
    "spectral_norm_rank1",
    "cheap_norm",
    "g_vector",
    "natural_gradient_step",
    "update_bins",
    "online_separate",
    "batch_separate",
    "resolve_scaling",
    "apply_demixing",
    "save_state",
    "load_state",
]


@dataclass(frozen=True)
class StepControl:
    """Normalized step size, constant or linearly scheduled over epochs."""

    mu0: float = 0.03
    mu_end: float | None = None
    epochs: int = 1

    def __post_init__(self):
        for mu in (self.mu0, self.mu_end if self.mu_end is not None else self.mu0):
            if not 0.0 < mu < 1.0:
                raise ParameterError(f"normalized step must lie in (0, 1), got {mu}")
        if self.epochs < 1:
            raise ParameterError("epochs must be positive")

    def at_epoch(self, epoch: int) -> float:
        if self.mu_end is None or self.epochs == 1:
            return self.mu0
        return self.mu0 + (self.mu_end - self.mu0) * epoch / (self.epochs - 1)


@dataclass
class SeparationState:
    W: np.ndarray
    hidden: np.ndarray
    frame_index: int = 0
    resets: int = 0

    @classmethod
    def initial(cls, n_bins: int, n_sources: int, hidden_dim: int = 0) -> "SeparationState":
        W = np.tile(np.eye(n_sources, dtype=complex), (n_bins, 1, 1))
        return cls(W, np.zeros((n_sources, hidden_dim)))

    def copy(self) -> "SeparationState":
        return SeparationState(self.W.copy(), self.hidden.copy(), self.frame_index, self.resets)


@dataclass
class Trajectory:
    """Final state of a run plus optional snapshots of ``W``."""

    final: SeparationState
    frames: list = field(default_factory=list)
    W: list = field(default_factory=list)


def _lagrange_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # ||a||^2 ||b||^2 - |a^H b|^2 as a sum of squares, exact to rounding
    cross = a[..., :, None] * b[..., None, :] - a[..., None, :] * b[..., :, None]
    return 0.5 * np.sum(cross.real**2 + cross.imag**2, axis=(-2, -1))


def spectral_norm_rank1(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spectral norm of ``I - a b^H``: exact value and the cheap upper bound.

    With ``s = 2 - 2 Re(a^H b) + ||a||^2 ||b||^2`` and ``p = |1 - a^H b|^2`` the
    two non-unit eigenvalues of ``(I - a b^H)(I - a b^H)^H`` have sum ``s``
    and product ``p``; for ``N >= 2`` the exact norm is the square root of the
    larger one (never below 1) and the cheap bound is ``sqrt(s)``. Works on
    batches ``(..., N)``.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite input to spectral_norm_rank1")

    one_minus_c = 1.0 - np.sum(a.conj() * b, axis=-1)
    p = one_minus_c.real**2 + one_minus_c.imag**2
    gap = _lagrange_gap(a, b)
    s = 1.0 + p + gap
    # discriminant (lambda1 - lambda2)^2 written as a sum of squares
    disc = (p - 1.0 + gap) ** 2 + 4.0 * gap
    exact = np.sqrt(0.5 * (s + np.sqrt(disc)))
    if a.shape[-1] == 1:
        # 1x1 case: no unit eigenvalue, the norm is |1 - a conj(b)|
        exact = np.sqrt(p)
    cheap = np.sqrt(s)
    return np.minimum(exact, cheap), cheap


def cheap_norm(g: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``sqrt(2 - 2 Re(Y^H g) + ||g||^2 ||Y||^2)`` over the last axis."""
    gy = np.sum(Y.conj() * g, axis=-1)
    gg = np.sum(g.real**2 + g.imag**2, axis=-1)
    yy = np.sum(Y.real**2 + Y.imag**2, axis=-1)
    return np.sqrt(np.maximum(2.0 - 2.0 * gy.real + gg * yy, 1.0))


def g_vector(Y_frame: np.ndarray, gains, k: int) -> np.ndarray:
    """Score vector of bin ``k`` for an ``(N, K)`` frame of outputs.

    ``gains`` is an ``(N, K)`` array or a sequence of per-source
    :class:`~nniva.density.GainResult`.
    """
    if not isinstance(gains, np.ndarray):
        gains = np.stack([r.gains for r in gains])
    return gains[:, k] * Y_frame[:, k]


def update_bins(W: np.ndarray, Y: np.ndarray, G: np.ndarray, mu0: float) -> np.ndarray:
    """Natural-gradient step for all bins at once.

    ``W`` is ``(..., N, N)``, ``Y`` and ``G`` are ``(..., N)``.
    """
    N = W.shape[-1]
    M = np.eye(N) - G[..., :, None] * Y[..., None, :].conj()
    mu = mu0 / cheap_norm(G, Y)
    return W + mu[..., None, None] * (M @ W)


def natural_gradient_step(W_k, Y_k, g_k, control: StepControl | float) -> np.ndarray:
    mu0 = control.mu0 if isinstance(control, StepControl) else float(control)
    W_new = update_bins(np.asarray(W_k, dtype=complex), np.asarray(Y_k), np.asarray(g_k), mu0)
    if not np.all(np.isfinite(W_new)):
        raise NumericError("non-finite separation matrix after update")
    return W_new


def _guard(state: SeparationState) -> None:
    bad = ~np.all(np.isfinite(state.W), axis=(-2, -1))
    if not np.any(bad):
        return
    state.resets += 1
    if state.resets > MAX_RESETS:
        raise NumericError(f"separation diverged more than {MAX_RESETS} times")
    log.warning("resetting %d diverged bins to identity", int(bad.sum()))
    state.W[bad] = np.eye(state.W.shape[-1])


def resolve_scaling(W: np.ndarray) -> np.ndarray:
    """Scale each output so the estimated mixing matrix has unit diagonal."""
    W = np.asarray(W)
    try:
        A = np.linalg.inv(W)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular separation matrix") from exc
    if not np.all(np.isfinite(A)):
        raise NumericError("singular separation matrix")
    d = np.diagonal(A, axis1=-2, axis2=-1)
    return d[..., :, None] * W


def apply_demixing(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``Y[:, k, t] = W[k] @ X[:, k, t]`` for ``X`` of shape ``(N, K, T)``."""
    return np.einsum("kij,jkt->ikt", W, X)


def online_separate(
    mixture: Spectrogram,
    model,
    control: StepControl | float,
    state: SeparationState | None = None,
    record_every: int | None = None,
    resolve: bool = False,
) -> tuple[Spectrogram, Trajectory]:
    """Frame-by-frame separation, one update of every bin per frame.

    Frame ``t`` is demixed with the matrices as they were before its own
    update. With ``resolve=True`` the outputs (not the recursion) use the
    scaling-resolved matrices.
    """
    mu0 = control.mu0 if isinstance(control, StepControl) else float(control)
    X = mixture.data
    N, K, T = X.shape
    if N < 2:
        raise ParameterError("online separation needs at least two channels")
    if state is None:
        state = SeparationState.initial(K, N, model.hidden_dim)
    traj = Trajectory(state)

    Y_out = np.empty_like(X, dtype=complex)
    for t in range(T):
        if record_every and state.frame_index % record_every == 0:
            traj.frames.append(state.frame_index)
            traj.W.append(state.W.copy())
        Y = np.einsum("kij,jk->ik", state.W, X[:, :, t])
        Y_out[:, :, t] = np.einsum("kij,jk->ik", resolve_scaling(state.W), X[:, :, t]) if resolve else Y
        res = model.gains(Y, state.hidden)
        G = res.gains * Y
        state.W = update_bins(state.W, Y.T, G.T, mu0)
        state.hidden = res.hidden_next
        state.frame_index += 1
        _guard(state)
    return mixture.with_data(Y_out), traj


def batch_separate(
    mixture: Spectrogram,
    model,
    control: StepControl,
    epochs: int | None = None,
    iterations_per_epoch: int | None = None,
    seed=None,
) -> tuple[np.ndarray, Spectrogram]:
    """Stochastic natural gradient over randomly drawn frames.

    Each iteration draws one frame uniformly at random. The step size of
    epoch ``e`` follows ``control.at_epoch(e)``. Returns the final matrices
    and the raw (not scaling-resolved) outputs for every frame.
    """
    if model.hidden_dim:
        raise ParameterError("recurrent density models cannot be used in batch mode")
    X = mixture.data
    N, K, T = X.shape
    epochs = control.epochs if epochs is None else int(epochs)
    if iterations_per_epoch is None:
        iterations_per_epoch = T
    rng = np.random.default_rng(seed)
    state = SeparationState.initial(K, N)

    Xt = np.ascontiguousarray(X.transpose(2, 1, 0))  # (T, K, N)
    for epoch in range(epochs):
        mu0 = control.at_epoch(min(epoch, control.epochs - 1))
        for t in rng.integers(0, T, size=iterations_per_epoch):
            Y = np.einsum("kij,kj->ki", state.W, Xt[t])
            G = model.gains(Y.T).gains.T * Y
            state.W = update_bins(state.W, Y, G, mu0)
            _guard(state)
    return state.W, mixture.with_data(apply_demixing(state.W, X))


STATE_KIND = "separation-state"
STATE_VERSION = 1


def save_state(state: SeparationState, path) -> None:
    """Checkpoint ``W`` (complex, interleaved) and hidden states as float32."""
    fileio.write_arrays(
        path,
        STATE_KIND,
        STATE_VERSION,
        {"frame_index": state.frame_index, "resets": state.resets},
        {"W": state.W, "hidden": state.hidden},
    )


def load_state(path) -> SeparationState:
    version, scalars, arrays = fileio.read_arrays(path, STATE_KIND)
    if version != STATE_VERSION:
        raise FormatError(f"{path}: unsupported state format version {version}")
    try:
        W = arrays["W"].astype(complex)
        hidden = arrays["hidden"].astype(float)
        frame_index = int(scalars["frame_index"])
        resets = int(scalars.get("resets", 0))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete state file") from exc
    if W.ndim != 3 or W.shape[1] != W.shape[2] or hidden.ndim != 2 or hidden.shape[0] != W.shape[1]:
        raise FormatError(f"{path}: inconsistent shapes W {W.shape}, hidden {hidden.shape}")
    return SeparationState(W, hidden, frame_index, resets)
