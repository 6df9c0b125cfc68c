"""Fit the neural gain network by maximizing separation coherence.

Each training iteration runs a batch of independent *lanes*. A lane owns a
random-tap mixing system and the separation state (``W`` and hidden vectors)
that persists across iterations until the mixing system is redrawn. For every
iteration fresh source segments are mixed, the online separation recursion is
unrolled over ``coherence_window`` frames in torch, and the permutation
invariant coherence between outputs and sources is back-propagated to the
network weights.

The recursion is written once here in torch (float64). Its forward pass
agrees with :func:`nniva.separator.online_separate`; tests check this.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import mixsim
from .density import EPS, NNWeights, allowed_hidden_dims, init_weights, save_weights
from .exceptions import ParameterError
from .metrics import best_permutation
from .sources import SourceCorpus
from .stft import design_windows, stft

log = logging.getLogger(__name__)

DTYPE = torch.float64
CDTYPE = torch.complex128


@dataclass
class TrainConfig:
    n_sources: int = 4
    coherence_window: int = 128
    mu0: float = 0.01
    reset_probability: float = 0.02
    batch_size: int = 64
    iterations: int = 20000
    optimizer_step: float = 0.01
    seed: int = 0
    frame_size: int = 512
    hop: int = 160
    width: int = 512
    recurrent: bool = False
    differentiate_step_size: bool = True
    checkpoint_every: int = 1000

    def __post_init__(self):
        for name in ("n_sources", "coherence_window", "batch_size", "frame_size", "hop", "width"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.iterations < 0:
            raise ParameterError("iterations must be non-negative")
        if not 0.0 <= self.reset_probability <= 1.0:
            raise ParameterError("reset_probability must lie in [0, 1]")
        if not 0.0 < self.mu0 < 1.0:
            raise ParameterError("mu0 must lie in (0, 1)")
        if self.optimizer_step <= 0:
            raise ParameterError("optimizer_step must be positive")

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    @property
    def hidden_dim(self) -> int:
        return allowed_hidden_dims(self.width)[1] if self.recurrent else 0

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(raw, types[key])
        values.update(overrides)
        return cls(**values)


def _parse_value(raw: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"not a boolean: {raw!r}")
    return {"int": int, "float": float}.get(typ, str)(raw)


def to_torch(weights: NNWeights, requires_grad: bool = True) -> list[torch.Tensor]:
    return [
        torch.tensor(np.asarray(t, dtype=np.float64), dtype=DTYPE, requires_grad=requires_grad)
        for t in weights.arrays()
    ]


def make_nn_gain_fn(thetas: list[torch.Tensor], hidden_dim: int) -> Callable:
    """Torch twin of :func:`nniva.density.nn_gains` over ``(..., K)`` inputs."""
    t1, t2, t3 = thetas

    def gain_fn(S, h):
        power = S.real**2 + S.imag**2
        # clamp before the root: sqrt has an infinite slope at an all-zero frame
        norm = power.sum(-1).clamp_min(EPS**2).sqrt()
        ones = torch.ones(S.shape[:-1] + (1,), dtype=DTYPE)
        features = torch.cat(
            [torch.log(power / norm[..., None] ** 2 + EPS), torch.log(norm)[..., None], h, ones],
            dim=-1,
        )
        alpha = torch.tanh(features @ t1.T)
        beta = torch.tanh(alpha @ t2[:, :-1].T + t2[:, -1])
        gamma = beta @ t3[:, :-1].T + t3[:, -1]
        gains = torch.nn.functional.softplus(gamma, beta=1.0, threshold=30.0) / norm[..., None]
        return gains, alpha[..., :hidden_dim]

    gain_fn.hidden_dim = hidden_dim
    return gain_fn


def laplace_gain_fn(S, h):
    power = S.real**2 + S.imag**2
    norm = power.sum(-1).clamp_min(EPS**2).sqrt()
    return (0.5 / norm)[..., None].expand(S.shape), h


laplace_gain_fn.hidden_dim = 0


@dataclass
class RolloutBatch:
    """Inputs of one unrolled evaluation for ``B`` lanes.

    ``X`` and ``S`` are complex ``(B, N, K, T)``; ``W0`` is ``(B, K, N, N)``;
    ``h0`` is ``(B, N, hidden_dim)``.
    """

    X: np.ndarray
    S: np.ndarray
    W0: np.ndarray
    h0: np.ndarray


@dataclass
class RolloutResult:
    coherence: torch.Tensor
    W: torch.Tensor
    hidden: torch.Tensor
    Y: torch.Tensor
    valid: np.ndarray
    permutations: list = field(default_factory=list)


def torch_coherence(Y: torch.Tensor, S: torch.Tensor):
    """Per-lane permutation-invariant coherence and the chosen permutations.

    The assignment is computed on detached values; the objective is then a
    differentiable sum of the selected per-pair terms.
    """
    T = Y.shape[-1]
    z = torch.einsum("bmkt,bnkt->bmnk", Y, S.conj())
    cross = (z.real**2 + z.imag**2).clamp_min(1e-300).sqrt() / T
    py = (Y.real**2 + Y.imag**2).mean(-1)
    ps = (S.real**2 + S.imag**2).mean(-1)
    denom = (py[:, :, None, :] * ps[:, None, :, :]).clamp_min(1e-40).sqrt()
    per_pair = (cross / denom).mean(-1)
    values, perms = [], []
    cols = torch.arange(per_pair.shape[-1])
    for pp in per_pair:
        perm = best_permutation(pp.detach().numpy())
        perms.append(perm)
        values.append(pp[torch.as_tensor(perm), cols].mean())
    return torch.stack(values), perms


def rollout(gain_fn: Callable, batch: RolloutBatch, mu0: float, differentiate_step_size: bool = True) -> RolloutResult:
    """Unrolled online separation over all frames of ``batch``."""
    X = torch.as_tensor(batch.X, dtype=CDTYPE)
    S = torch.as_tensor(batch.S, dtype=CDTYPE)
    W = torch.as_tensor(batch.W0, dtype=CDTYPE)
    h = torch.as_tensor(batch.h0, dtype=DTYPE)
    B, N, K, T = X.shape
    eye = torch.eye(N, dtype=CDTYPE)

    outputs = []
    for t in range(T):
        Y = torch.einsum("bkij,bjk->bki", W, X[..., t])
        gains, h = gain_fn(Y.transpose(1, 2), h)
        G = gains.transpose(1, 2) * Y
        M = eye - G[..., :, None] * Y.conj()[..., None, :]
        gy = (Y.conj() * G).sum(-1).real
        s = 2.0 - 2.0 * gy + (G.real**2 + G.imag**2).sum(-1) * (Y.real**2 + Y.imag**2).sum(-1)
        mu = mu0 / s.clamp_min(1.0).sqrt()
        if not differentiate_step_size:
            mu = mu.detach()
        W = W + mu[..., None, None] * (M @ W)
        outputs.append(Y.transpose(1, 2))

    valid = torch.isfinite(torch.view_as_real(W)).reshape(B, -1).all(-1).numpy()
    if T == 0:
        return RolloutResult(torch.zeros(B, dtype=DTYPE), W, h, X, valid)
    Y_all = torch.stack(outputs, dim=-1)
    values, perms = torch_coherence(Y_all, S)
    return RolloutResult(values, W, h, Y_all, valid, perms)


def gradient(
    weights: NNWeights | None,
    batch: RolloutBatch,
    mu0: float,
    differentiate_step_size: bool = True,
) -> tuple[float, list[np.ndarray], RolloutResult]:
    """Mean lane coherence and its exact gradient with respect to the weights.

    Lanes that diverge are excluded from the mean. With ``weights=None`` the
    Laplace model is unrolled instead; its gradient is identically zero.
    """
    if weights is None:
        thetas, gain_fn = [], laplace_gain_fn
    else:
        thetas = to_torch(weights)
        gain_fn = make_nn_gain_fn(thetas, weights.hidden_dim)
    result = rollout(gain_fn, batch, mu0, differentiate_step_size)
    mask = torch.as_tensor(result.valid) & torch.isfinite(result.coherence)
    if batch.X.shape[-1] == 0 or not bool(mask.any()):
        zeros = [np.zeros_like(np.asarray(t, dtype=float)) for t in (weights.arrays() if weights else [])]
        return 0.0, zeros, result
    objective = result.coherence[mask].mean()
    grads = torch.autograd.grad(objective, thetas, allow_unused=True) if thetas else []
    grads = [
        np.zeros(tuple(t.shape)) if g is None else g.numpy().copy()
        for g, t in zip(grads, thetas)
    ]
    return float(objective.detach()), grads, result


class AdamAscent:
    """Diagonal adaptive ascent step (Adam) behind a ``(params, grads) -> params`` contract."""

    def __init__(self, step: float = 0.01):
        self.step_size = step
        self._params = None
        self._opt = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self._params is None:
            self._params = [torch.tensor(p, dtype=DTYPE) for p in params]
            self._opt = torch.optim.Adam(self._params, lr=self.step_size, maximize=True)
        with torch.no_grad():
            for tp, p, g in zip(self._params, params, grads):
                tp.copy_(torch.as_tensor(p, dtype=DTYPE))
                tp.grad = torch.as_tensor(g, dtype=DTYPE).clone()
        self._opt.step()
        return [tp.detach().numpy().copy() for tp in self._params]


@dataclass
class Lane:
    system: mixsim.MixingSystem
    W: np.ndarray
    hidden: np.ndarray


class Trainer:
    """Stateful training loop; see :func:`train` for the one-call entry point."""

    def __init__(self, config: TrainConfig, corpus: SourceCorpus, weights: NNWeights | None = None, optimizer=None):
        self.config = config
        self.corpus = corpus
        self.rng = np.random.default_rng(config.seed)
        self.windows = design_windows(config.frame_size, config.hop)
        if weights is None:
            weights = init_weights(config.n_bins, config.width, config.hidden_dim, self.rng)
        if weights.n_bins != config.n_bins or weights.hidden_dim != config.hidden_dim:
            raise ParameterError("initial weights do not match the configuration")
        self.weights = weights
        self.optimizer = optimizer if optimizer is not None else AdamAscent(config.optimizer_step)
        self.lanes = [self._new_lane() for _ in range(config.batch_size)]
        self.history: list[float] = []
        self.iteration = 0

    def _new_lane(self) -> Lane:
        c = self.config
        system = mixsim.sample_random_system(c.n_sources, self.rng)
        W = np.tile(np.eye(c.n_sources, dtype=complex), (c.n_bins, 1, 1))
        return Lane(system, W, np.zeros((c.n_sources, c.hidden_dim)))

    def segment_length(self) -> int:
        c = self.config
        return (c.coherence_window - 1) * c.hop + c.frame_size

    def make_batch(self) -> RolloutBatch:
        """Fresh sources for every lane, mixed through the lane's system.

        The random-tap mixer has a 16-sample latency and a 32-sample span, so
        sources are drawn with 32 samples of leading context and the mixture
        is compared against the sources delayed by 16 samples.
        """
        reach = mixsim.RANDOM_TAP_REACH
        L = self.segment_length()
        Xs, Ss = [], []
        for lane in self.lanes:
            s = self.corpus.sample(self.config.n_sources, L + 2 * reach, self.rng)
            x, _ = mixsim.mix(lane.system, s)
            Xs.append(stft(x[:, 2 * reach :], self.windows).data)
            Ss.append(stft(s[:, reach : reach + L], self.windows).data)
        return RolloutBatch(
            np.stack(Xs),
            np.stack(Ss),
            np.stack([lane.W for lane in self.lanes]),
            np.stack([lane.hidden for lane in self.lanes]),
        )

    def step(self) -> float:
        c = self.config
        batch = self.make_batch()
        value, grads, result = gradient(self.weights, batch, c.mu0, c.differentiate_step_size)
        if all(np.all(np.isfinite(g)) for g in grads):
            params = self.optimizer.step(list(self.weights.arrays()), grads)
            self.weights = NNWeights(*params, hidden_dim=self.weights.hidden_dim)
        else:
            log.warning("non-finite gradient at iteration %d; update skipped", self.iteration)

        W = result.W.detach().numpy()
        h = result.hidden.detach().numpy()
        for i, lane in enumerate(self.lanes):
            if not result.valid[i] or self.rng.random() < c.reset_probability:
                if not result.valid[i]:
                    log.warning("lane %d diverged; resetting", i)
                self.lanes[i] = self._new_lane()
            else:
                lane.W, lane.hidden = W[i].copy(), h[i].copy()
        self.iteration += 1
        self.history.append(value)
        return value

    def run(self, iterations: int | None = None, log_path=None, checkpoint_path=None) -> list[float]:
        iterations = self.config.iterations if iterations is None else iterations
        writer = None
        fh = None
        if log_path is not None:
            fh = open(log_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(["iteration", "coherence"])
        try:
            for _ in range(iterations):
                value = self.step()
                if writer:
                    writer.writerow([self.iteration - 1, f"{value:.8f}"])
                if checkpoint_path is not None and self.iteration % self.config.checkpoint_every == 0:
                    save_weights(self.weights, checkpoint_path)
                if self.iteration % 100 == 0:
                    log.info("iteration %d coherence %.4f", self.iteration, np.mean(self.history[-100:]))
        finally:
            if fh:
                fh.close()
        if checkpoint_path is not None:
            save_weights(self.weights, checkpoint_path)
        return self.history


def train(config: TrainConfig, corpus: SourceCorpus, weights: NNWeights | None = None, log_path=None, checkpoint_path=None, optimizer=None) -> tuple[NNWeights, list[float]]:
    trainer = Trainer(config, corpus, weights, optimizer)
    history = trainer.run(log_path=log_path, checkpoint_path=checkpoint_path)
    return trainer.weights, history
