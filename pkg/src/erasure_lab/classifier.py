"""Small dense binary classifiers: BCE training and calibrated probabilities.

Used for the erasure discriminator, held-out probes, and concept
detectors. Output probabilities are clamped to [P_CLAMP, 1 - P_CLAMP]
inside the loss so every loss value stays finite; the closed-form anchor
values quoted in tests sit far away from the clamp.
"""

from __future__ import annotations

import numpy as np

from . import nn

P_CLAMP = 1e-7
PREDICT_CHUNK = 65536


def make_classifier(n_in: int, hidden, seed: int) -> nn.DenseNet:
    sizes = [n_in, *hidden, 1]
    acts = ["tanh"] * len(hidden) + ["sigmoid"]
    return nn.init_net(sizes, acts, seed)


def predict_proba(net: nn.DenseNet, x: np.ndarray) -> np.ndarray:
    """P(label=1 | x), chunked for large batches."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0])
    for pos in range(0, x.shape[0], PREDICT_CHUNK):
        out[pos : pos + PREDICT_CHUNK] = nn.forward_out(
            net, x[pos : pos + PREDICT_CHUNK]
        )[:, 0]
    return out


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def bce_step(net: nn.DenseNet, x: np.ndarray, y: np.ndarray):
    """BCE loss and its gradient w.r.t. the classifier parameters."""
    p, cache = nn.forward(net, x)
    p = p[:, 0]
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    dp = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / x.shape[0]
    grads, _ = nn.backward(net, cache, dp[:, None])
    return loss, grads


def train_binary_classifier(x: np.ndarray, y: np.ndarray, hidden, steps: int,
                            batch_size: int, lr: float,
                            rng: np.random.Generator,
                            weight_decay: float = 1e-4,
                            net: nn.DenseNet | None = None) -> nn.DenseNet:
    """Minibatch AdamW training; deterministic given the generator state."""
    if net is None:
        net = make_classifier(x.shape[1], hidden, seed=int(rng.integers(2**63)))
    state = nn.AdamWState.for_net(net, lr=lr, weight_decay=weight_decay)
    n = x.shape[0]
    for _ in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        _, grads = bce_step(net, x[idx], y[idx])
        nn.adamw_step(net, grads, state)
    return net
