"""Minimal dense networks with explicit reverse-mode gradients.

Everything is 64-bit and deterministic. A network is a flat float64
parameter vector plus layer metadata; the flat index of every weight and
bias is stable, which is what the saliency mask and the checkpoint format
rely on. Matrices are row-major: W_l[i, j] sits at w_off[l] + i*n_out + j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import ACTIVATION_CODES, kernels

EPS_FLOOR = 1e-12


class DimensionError(ValueError):
    """Layer shapes or input sizes do not chain."""


@dataclass
class DenseNet:
    sizes: np.ndarray          # int64, widths including input layer
    acts: np.ndarray           # int64 activation codes, one per layer
    params: np.ndarray         # flat float64
    w_off: np.ndarray          # int64 per-layer weight offsets
    b_off: np.ndarray          # int64 per-layer bias offsets
    meta: dict = field(default_factory=dict)

    @property
    def n_in(self) -> int:
        return int(self.sizes[0])

    @property
    def n_out(self) -> int:
        return int(self.sizes[-1])

    @property
    def parameter_count(self) -> int:
        return int(self.params.shape[0])

    def weight(self, layer: int) -> np.ndarray:
        """View of layer's weight matrix (n_in, n_out) into the flat vector."""
        n_in, n_out = int(self.sizes[layer]), int(self.sizes[layer + 1])
        off = int(self.w_off[layer])
        return self.params[off : off + n_in * n_out].reshape(n_in, n_out)

    def bias(self, layer: int) -> np.ndarray:
        off = int(self.b_off[layer])
        return self.params[off : off + int(self.sizes[layer + 1])]

    def copy(self) -> "DenseNet":
        return DenseNet(
            sizes=self.sizes.copy(),
            acts=self.acts.copy(),
            params=self.params.copy(),
            w_off=self.w_off.copy(),
            b_off=self.b_off.copy(),
            meta=dict(self.meta),
        )

    def flag_columns(self, start: int, count: int) -> np.ndarray:
        """Flat indices of first-layer weight rows start..start+count-1."""
        n_out = int(self.sizes[1])
        rows = []
        for r in range(start, start + count):
            rows.append(np.arange(r * n_out, (r + 1) * n_out) + int(self.w_off[0]))
        return np.concatenate(rows)


def layer_offsets(sizes: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    n_layers = len(sizes) - 1
    w_off = np.zeros(n_layers, dtype=np.int64)
    b_off = np.zeros(n_layers, dtype=np.int64)
    pos = 0
    for l in range(n_layers):
        w_off[l] = pos
        pos += int(sizes[l]) * int(sizes[l + 1])
        b_off[l] = pos
        pos += int(sizes[l + 1])
    return w_off, b_off, pos


def init_net(layer_sizes, activations, seed) -> DenseNet:
    """Fan-in-scaled Gaussian weights (std = sqrt(2/fan_in)), zero biases.

    Identical seed gives bit-identical parameters.
    """
    sizes = np.asarray(layer_sizes, dtype=np.int64)
    if sizes.shape[0] < 2:
        raise DimensionError("need at least one layer (two widths)")
    if np.any(sizes <= 0):
        raise DimensionError(f"layer sizes must be positive, got {layer_sizes}")
    if len(activations) != sizes.shape[0] - 1:
        raise DimensionError(
            f"{sizes.shape[0] - 1} layers but {len(activations)} activations"
        )
    acts = np.array([ACTIVATION_CODES[a] for a in activations], dtype=np.int64)
    w_off, b_off, n_params = layer_offsets(sizes)
    params = np.zeros(n_params)
    rng = np.random.Generator(np.random.PCG64(seed))
    for l in range(sizes.shape[0] - 1):
        n_in, n_out = int(sizes[l]), int(sizes[l + 1])
        std = np.sqrt(2.0 / n_in)
        params[w_off[l] : w_off[l] + n_in * n_out] = std * rng.standard_normal(
            n_in * n_out
        )
    return DenseNet(sizes=sizes, acts=acts, params=params, w_off=w_off, b_off=b_off)


def forward(net: DenseNet, x: np.ndarray):
    """Forward pass on a batch (or single vector). Returns (output, cache).

    The cache feeds backward(); it holds per-layer post-activations.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.n_in:
        raise DimensionError(f"input width {x.shape[1]}, net expects {net.n_in}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    posts = kernels.mlp_forward(
        net.params, net.sizes, net.acts, net.w_off, net.b_off,
        np.ascontiguousarray(x),
    )
    out = posts[-1, :, : net.n_out].copy()
    return (out[0] if single else out), posts


def forward_out(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Forward without caching (inference paths, large batches)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[1] != net.n_in:
        raise DimensionError(f"input width {x.shape[1]}, net expects {net.n_in}")
    return kernels.mlp_forward_out(
        net.params, net.sizes, net.acts, net.w_off, net.b_off, x
    )


def backward(net: DenseNet, cache: np.ndarray, upstream: np.ndarray):
    """Exact reverse accumulation. upstream is dLoss/d(output), (B, n_out).

    Returns (GradBuffer over the flat params, dLoss/d(input)).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    if cache.shape[1] != upstream.shape[0] or upstream.shape[1] != net.n_out:
        raise DimensionError("cache/upstream shapes do not match this net")
    grads, dx = kernels.mlp_backward(
        net.params, net.sizes, net.acts, net.w_off, net.b_off,
        cache, np.ascontiguousarray(upstream),
    )
    return grads, dx[:, : net.n_in]


def finite_diff_check(net: DenseNet, loss_fn, h: float = 1e-5) -> float:
    """Max relative error between loss_fn's analytic gradient and central
    finite differences over every parameter.

    loss_fn(net) must return (scalar loss, flat gradient) deterministically.
    """
    _, analytic = loss_fn(net)
    base = net.params.copy()
    worst = 0.0
    probe = net.copy()
    for i in range(net.parameter_count):
        probe.params[:] = base
        probe.params[i] = base[i] + h
        lo_p, _ = loss_fn(probe)
        probe.params[i] = base[i] - h
        lo_m, _ = loss_fn(probe)
        if not (np.isfinite(lo_p) and np.isfinite(lo_m)):
            raise ValueError("non-finite loss during finite differences")
        numeric = (lo_p - lo_m) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), EPS_FLOOR)
        err = abs(analytic[i] - numeric) / denom
        if err > worst:
            worst = err
    return worst


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def for_net(cls, net: DenseNet, lr=1e-3, beta1=0.9, beta2=0.999,
                eps=1e-8, weight_decay=1e-4) -> "AdamWState":
        n = net.parameter_count
        return cls(m=np.zeros(n), v=np.zeros(n), step=0, lr=lr, beta1=beta1,
                   beta2=beta2, eps=eps, weight_decay=weight_decay)


def adamw_step(net: DenseNet, grads: np.ndarray, state: AdamWState,
               mask: np.ndarray | None = None) -> bool:
    """One AdamW update in place. Parameters where mask == 0 stay bitwise
    untouched (moments included). Returns False when the step was skipped
    because a masked-in gradient was non-finite."""
    if grads.shape != net.params.shape:
        raise DimensionError("gradient buffer does not match parameter count")
    if mask is None:
        mask_u8 = np.ones(net.parameter_count, dtype=np.uint8)
    else:
        if mask.shape[0] != net.parameter_count:
            raise DimensionError("mask does not match parameter count")
        mask_u8 = np.ascontiguousarray(mask, dtype=np.uint8)
    state.step += 1
    skipped = kernels.adamw_update(
        net.params, np.ascontiguousarray(grads, dtype=np.float64),
        state.m, state.v, state.step, state.lr, state.beta1, state.beta2,
        state.eps, state.weight_decay, mask_u8,
    )
    if skipped:
        state.step -= 1
        return False
    return True
