"""Conditional DDPM on low-dimensional points.

The epsilon-predictor is a DenseNet over [noisy point, timestep embedding,
concept flags]. Timesteps run 1..T with index 0 reserved for the
alphabar_0 = 1 convention, so a schedule array has length T+1. Sampling is
standard ancestral DDPM with the posterior noise scale (which vanishes at
t=1 automatically).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .backends import kernels

EMB_DIM = 7
SAMPLE_CHUNK = 8192


class ScheduleError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class NoiseSchedule:
    T: int
    betas: np.ndarray      # (T+1,), betas[0] = 0 by convention
    alphas: np.ndarray     # 1 - beta
    alphabar: np.ndarray   # running product, alphabar[0] = 1

    def coeffs(self):
        """Per-step sampler coefficients (c_scale, c_eps, sigma), length T+1."""
        c_scale = np.zeros(self.T + 1)
        c_eps = np.zeros(self.T + 1)
        sigma = np.zeros(self.T + 1)
        for t in range(1, self.T + 1):
            c_scale[t] = 1.0 / np.sqrt(self.alphas[t])
            c_eps[t] = self.betas[t] / np.sqrt(1.0 - self.alphabar[t])
            var = (1.0 - self.alphabar[t - 1]) / (1.0 - self.alphabar[t]) * self.betas[t]
            sigma[t] = np.sqrt(var)
        return c_scale, c_eps, sigma


def build_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta ramp from beta_min to beta_max over T steps."""
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.zeros(T + 1)
    betas[1:] = np.linspace(beta_min, beta_max, T)
    alphas = 1.0 - betas
    alphabar = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alphabar=alphabar)


def timestep_embedding(T: int) -> np.ndarray:
    """Deterministic (T+1, EMB_DIM) table: linear ramp plus sinusoids."""
    t = np.arange(T + 1) / T
    cols = [t]
    for k in (1, 2, 4):
        cols.append(np.sin(2.0 * np.pi * k * t))
        cols.append(np.cos(2.0 * np.pi * k * t))
    return np.stack(cols, axis=1)


@dataclass
class DiffusionModel:
    eps_net: nn.DenseNet
    frozen_net: nn.DenseNet
    schedule: NoiseSchedule
    d: int
    n_flags: int
    emb: np.ndarray = field(default=None)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.emb is None:
            self.emb = timestep_embedding(self.schedule.T)
        if not np.array_equal(self.eps_net.sizes, self.frozen_net.sizes):
            raise nn.DimensionError("live and frozen nets must share architecture")

    @property
    def input_dim(self) -> int:
        return self.d + EMB_DIM + self.n_flags

    def freeze(self):
        """Capture the current live net as the trajectory anchor."""
        self.frozen_net = self.eps_net.copy()

    def copy(self) -> "DiffusionModel":
        return DiffusionModel(
            eps_net=self.eps_net.copy(), frozen_net=self.frozen_net.copy(),
            schedule=self.schedule, d=self.d, n_flags=self.n_flags,
            emb=self.emb, meta=dict(self.meta),
        )


def init_model(d: int, n_flags: int, hidden, T: int, beta_min: float,
               beta_max: float, seed: int) -> DiffusionModel:
    sched = build_schedule(T, beta_min, beta_max)
    sizes = [d + EMB_DIM + n_flags, *hidden, d]
    acts = ["tanh"] * len(hidden) + ["identity"]
    net = nn.init_net(sizes, acts, seed)
    return DiffusionModel(eps_net=net, frozen_net=net.copy(), schedule=sched,
                          d=d, n_flags=n_flags)


def build_inputs(model: DiffusionModel, z: np.ndarray, flags: np.ndarray,
                 t: np.ndarray) -> np.ndarray:
    """Assemble [z_t, embedding(t), flags] rows; t is per-item."""
    b = z.shape[0]
    x = np.empty((b, model.input_dim))
    x[:, : model.d] = z
    x[:, model.d : model.d + EMB_DIM] = model.emb[t]
    x[:, model.d + EMB_DIM :] = flags
    return x


def eps_forward(net: nn.DenseNet, model: DiffusionModel, z: np.ndarray,
                flags: np.ndarray, t: np.ndarray):
    """Predict noise with caching; the seam every loss goes through."""
    x = build_inputs(model, z, flags, t)
    return nn.forward(net, x)


def forward_noise(x0: np.ndarray, t, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ScheduleError("t out of range")
    ab = schedule.alphabar[t]
    if x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(z_t: np.ndarray, t, eps_hat: np.ndarray,
               schedule: NoiseSchedule) -> np.ndarray:
    """One-step denoised estimate; exact inverse of forward_noise when
    eps_hat is the true noise."""
    t = np.asarray(t, dtype=np.int64)
    ab = schedule.alphabar[t]
    if np.any(ab <= 0):
        raise ScheduleError("alphabar must be positive for x0 prediction")
    if z_t.ndim == 2:
        ab = ab[:, None]
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddpm_train_step(model: DiffusionModel, x0: np.ndarray, flags: np.ndarray,
                    rng: np.random.Generator):
    """One epsilon-prediction step: loss = mean_i ||eps_hat_i - eps_i||^2.

    Returns (loss, flat gradient for the live net).
    """
    b = x0.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, model.schedule.T + 1, size=b)
    eps = rng.standard_normal((b, model.d))
    z = forward_noise(x0, t, eps, model.schedule)
    eps_hat, cache = eps_forward(model.eps_net, model, z, flags, t)
    diff = eps_hat - eps
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    grads, _ = nn.backward(model.eps_net, cache, 2.0 * diff / b)
    return loss, grads


def train_base(model: DiffusionModel, points: np.ndarray, flags: np.ndarray,
               steps: int, batch_size: int, lr: float,
               rng: np.random.Generator, weight_decay: float = 1e-4):
    """Train the epsilon net on labeled points, then freeze the anchor copy.

    Returns the per-step loss history. Raises DivergenceError on a
    non-finite loss, with the history so far attached.
    """
    if points.shape[0] == 0:
        raise ValueError("empty dataset")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = nn.AdamWState.for_net(model.eps_net, lr=lr, weight_decay=weight_decay)
    history = np.empty(steps)
    n = points.shape[0]
    for s in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        loss, grads = ddpm_train_step(model, points[idx], flags[idx], rng)
        if not np.isfinite(loss):
            err = DivergenceError(f"non-finite loss at step {s}")
            err.history = history[:s]
            raise err
        history[s] = loss
        nn.adamw_step(model.eps_net, grads, state)
    model.freeze()
    return history


def sample(model: DiffusionModel, flags: np.ndarray, rng: np.random.Generator,
           n: int, net: nn.DenseNet | None = None) -> np.ndarray:
    """Ancestral sampling, deterministic given the generator state.

    flags is either a single flag row applied to every sample or an (n,
    n_flags) matrix. Work is chunked so noise buffers stay small; chunking
    does not change the draw sequence consumed per chunk.
    """
    net = model.eps_net if net is None else net
    flags = np.asarray(flags, dtype=np.float64)
    if flags.ndim == 1:
        flags = np.broadcast_to(flags, (n, flags.shape[0]))
    if flags.shape != (n, model.n_flags):
        raise ValueError(f"flags must be ({n}, {model.n_flags})")
    c_scale, c_eps, sigma = model.schedule.coeffs()
    out = np.empty((n, model.d))
    pos = 0
    while pos < n:
        m = min(SAMPLE_CHUNK, n - pos)
        z = rng.standard_normal((m, model.d))
        noises = rng.standard_normal((model.schedule.T + 1, m, model.d))
        z = kernels.ddpm_sampler(
            net.params, net.sizes, net.acts, net.w_off, net.b_off,
            model.emb, np.ascontiguousarray(flags[pos : pos + m]),
            z, noises, c_scale, c_eps, sigma,
        )
        out[pos : pos + m] = z
        pos += m
    return out


def anchor_cutoff(schedule: NoiseSchedule, fraction: float) -> int:
    return int(round(fraction * schedule.T))


def trajectory_loss(model: DiffusionModel, neutral_x0: np.ndarray,
                    neutral_flags: np.ndarray, rng: np.random.Generator,
                    anchor_fraction: float = 0.3, anchor_window: str = "low"):
    """Anchor the live net to the frozen one on concept-absent inputs.

    Timesteps are drawn from the low window [1, T0) by default, i.e. the
    late, data-proximal end of denoising; `anchor_window="high"` flips to
    [T0, T]. Loss = mean ||eps_live - eps_frozen||^2; gradients flow into
    the live net only.
    """
    b = neutral_x0.shape[0]
    if b == 0:
        raise ValueError("empty neutral batch")
    t0 = anchor_cutoff(model.schedule, anchor_fraction)
    if anchor_window == "low":
        lo, hi = 1, max(t0, 2)
    elif anchor_window == "high":
        lo, hi = min(t0, model.schedule.T), model.schedule.T + 1
    else:
        raise ValueError(f"anchor_window must be low|high, got {anchor_window!r}")
    t = rng.integers(lo, hi, size=b)
    eps = rng.standard_normal((b, model.d))
    z = forward_noise(neutral_x0, t, eps, model.schedule)
    live, cache = eps_forward(model.eps_net, model, z, neutral_flags, t)
    ref, _ = eps_forward(model.frozen_net, model, z, neutral_flags, t)
    diff = live - ref
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    grads, _ = nn.backward(model.eps_net, cache, 2.0 * diff / b)
    return loss, grads
