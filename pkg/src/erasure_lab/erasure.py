"""Adversarial concept erasure with saliency-restricted updates.

The training loop alternates a discriminator (concept-present vs
concept-absent generations) against the diffusion model's epsilon net,
which may only update its top-k% highest-saliency parameters. Generation
inside the loop uses the differentiable one-step surrogate: noise a pooled
data batch to a random timestep, then denoise in one step under the flag
setting being trained. Both sides of each pair share (z_t, t), so once the
flag bit stops influencing the net the pair is identical and the
discriminator is pinned at chance.

Ancestral sampling is never bypassed for evaluation: every reported
statistic outside the loop comes from full sampling.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier, nn
from .diffusion import (
    DiffusionModel,
    DivergenceError,
    eps_forward,
    forward_noise,
    predict_x0,
    trajectory_loss,
)

P_CLAMP = classifier.P_CLAMP


class ErasureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ErasureConfig:
    lambda_traj: float = 0.1
    saliency_fraction: float = 0.05
    iterations: int = 12000
    batch_size: int = 128
    gen_lr: float = 1e-3
    disc_lr: float = 2e-3
    anchor_fraction: float = 0.3
    anchor_window: str = "high"
    seed: int = 0
    disc_steps: int = 2
    warmup_steps: int = 200
    probe_batches: int = 8
    adversarial_form: str = "paper"
    per_layer_topk: bool = False
    disc_hidden: tuple = (64, 64)
    target_indices: tuple = (0,)
    adv_weight: float = 1.0
    weight_decay: float = 1e-4
    gen_lr_decay: str = "cosine"
    ema_decay: float = 0.998
    mi_probe_every: int = 0
    mi_probe_samples: int = 4096
    mi_probe_bins: int = 30
    probe_samples: int = 0

    def validate(self):
        if self.lambda_traj < 0:
            raise ErasureConfigError("lambda_traj must be >= 0")
        if not 0.0 <= self.saliency_fraction <= 1.0:
            raise ErasureConfigError("saliency_fraction must be in [0,1]")
        if self.iterations < 1:
            raise ErasureConfigError("iterations must be >= 1")
        if self.batch_size < 2:
            raise ErasureConfigError("batch_size must be >= 2")
        if self.adversarial_form not in ("paper", "symmetric"):
            raise ErasureConfigError(
                f"adversarial_form must be paper|symmetric, got {self.adversarial_form!r}"
            )
        if self.anchor_window not in ("low", "high"):
            raise ErasureConfigError("anchor_window must be low|high")
        if self.gen_lr_decay not in ("none", "cosine"):
            raise ErasureConfigError("gen_lr_decay must be none|cosine")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ErasureConfigError("ema_decay must be in [0, 1); 0 disables")
        if len(self.target_indices) < 1:
            raise ErasureConfigError("at least one target concept required")
        return self


@dataclass
class SaliencyMask:
    mask: np.ndarray  # bool per flat parameter index
    selected_count: int

    @property
    def as_uint8(self) -> np.ndarray:
        return self.mask.astype(np.uint8)


@dataclass
class ErasureReport:
    l_adv: np.ndarray
    l_traj: np.ndarray
    l_total: np.ndarray
    disc_loss: np.ndarray
    mi_trace: list = field(default_factory=list)   # (iteration, plugin MI)
    final_probe_acc: float = float("nan")
    wall_time_s: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return int(self.l_total.shape[0])


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def adversarial_loss(disc: nn.DenseNet, x_c: np.ndarray, x_n: np.ndarray,
                     form: str = "paper"):
    """Generator-side loss and its gradients w.r.t. the generated points.

    paper form:      -mean log(1 - D(x_c)) - mean log D(x_n)
    symmetric form:   mean log D(x_c) + mean log(1 - D(x_n))
    The discriminator is read-only here; gradients flow through it into
    the points only.
    """
    if x_c.shape[0] == 0 or x_n.shape[0] == 0:
        raise ValueError("empty batch")
    p_c, cache_c = nn.forward(disc, x_c)
    p_n, cache_n = nn.forward(disc, x_n)
    pc = _clamp(p_c[:, 0])
    pn = _clamp(p_n[:, 0])
    bc, bn = x_c.shape[0], x_n.shape[0]
    if form == "paper":
        loss = float(-np.mean(np.log(1.0 - pc)) - np.mean(np.log(pn)))
        dpc = 1.0 / (1.0 - pc) / bc
        dpn = -1.0 / pn / bn
    elif form == "symmetric":
        loss = float(np.mean(np.log(pc)) + np.mean(np.log(1.0 - pn)))
        dpc = 1.0 / pc / bc
        dpn = -1.0 / (1.0 - pn) / bn
    else:
        raise ValueError(f"unknown adversarial form {form!r}")
    _, dx_c = nn.backward(disc, cache_c, dpc[:, None])
    _, dx_n = nn.backward(disc, cache_n, dpn[:, None])
    return loss, dx_c, dx_n


def discriminator_loss(disc: nn.DenseNet, x_c: np.ndarray, x_n: np.ndarray):
    """BCE with labels concept=1 / neutral=0; generated points are constants.

    Returns (loss, gradient w.r.t. discriminator parameters).
    """
    if x_c.shape[0] == 0 or x_n.shape[0] == 0:
        raise ValueError("empty batch")
    p_c, cache_c = nn.forward(disc, x_c)
    p_n, cache_n = nn.forward(disc, x_n)
    pc = _clamp(p_c[:, 0])
    pn = _clamp(p_n[:, 0])
    loss = float(-np.mean(np.log(pc)) - np.mean(np.log(1.0 - pn)))
    g_c, _ = nn.backward(disc, cache_c, (-1.0 / pc / x_c.shape[0])[:, None])
    g_n, _ = nn.backward(disc, cache_n, (1.0 / (1.0 - pn) / x_n.shape[0])[:, None])
    return loss, g_c + g_n


def total_loss(l_adv: float, l_traj: float, lam: float) -> float:
    """L_total = L_adv + lambda * L_traj."""
    if not (np.isfinite(l_adv) and np.isfinite(l_traj)):
        raise ValueError("loss components must be finite")
    return l_adv + lam * l_traj


def topk_mask(scores: np.ndarray, k: float,
              per_layer: bool = False, net: nn.DenseNet | None = None) -> SaliencyMask:
    """Select the ceil(k*N) highest scores; ties break toward lower flat
    index. per_layer ranks within each layer's parameter block instead."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n = scores.shape[0]
    mask = np.zeros(n, dtype=bool)
    if per_layer:
        if net is None:
            raise ValueError("per-layer ranking needs the net for layer slices")
        for l in range(net.sizes.shape[0] - 1):
            start = int(net.w_off[l])
            stop = int(net.b_off[l]) + int(net.sizes[l + 1])
            block = scores[start:stop]
            take = math.ceil(k * block.shape[0])
            if take > 0:
                order = np.argsort(-block, kind="stable")[:take]
                mask[start + order] = True
    else:
        take = math.ceil(k * n)
        if take > 0:
            order = np.argsort(-scores, kind="stable")[:take]
            mask[order] = True
    return SaliencyMask(mask=mask, selected_count=int(mask.sum()))


def _one_step_outputs(model: DiffusionModel, x0: np.ndarray, flags: np.ndarray,
                      target_index: int, on: bool, t: np.ndarray,
                      eps: np.ndarray):
    """One-step denoised generation under a forced flag bit.

    Returns (points, forward cache, d points / d eps_hat factor per item).
    """
    f = flags.copy()
    f[:, target_index] = 1.0 if on else 0.0
    z = forward_noise(x0, t, eps, model.schedule)
    eps_hat, cache = eps_forward(model.eps_net, model, z, f, t)
    xhat = predict_x0(z, t, eps_hat, model.schedule)
    ab = model.schedule.alphabar[t]
    factor = -np.sqrt(1.0 - ab) / np.sqrt(ab)
    return xhat, cache, factor


def compute_saliency(model: DiffusionModel, discs, points: np.ndarray,
                     flags: np.ndarray, cfg: ErasureConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-parameter scores |dL_adv/dw * w| with the gradient averaged over
    probe batches (warm discriminator expected)."""
    n = points.shape[0]
    acc = np.zeros(model.eps_net.parameter_count)
    for _ in range(cfg.probe_batches):
        idx = rng.integers(0, n, size=cfg.batch_size)
        x0 = points[idx]
        bflags = flags[idx].astype(np.float64)
        t = rng.integers(1, model.schedule.T + 1, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, model.d))
        for k, ti in enumerate(cfg.target_indices):
            xc, cache_c, fac = _one_step_outputs(model, x0, bflags, ti, True, t, eps)
            xn, cache_n, _ = _one_step_outputs(model, x0, bflags, ti, False, t, eps)
            _, dxc, dxn = adversarial_loss(discs[k], xc, xn, cfg.adversarial_form)
            g_c, _ = nn.backward(model.eps_net, cache_c, dxc * fac[:, None])
            g_n, _ = nn.backward(model.eps_net, cache_n, dxn * fac[:, None])
            acc += g_c + g_n
    if not np.all(np.isfinite(acc)):
        raise ValueError("non-finite saliency gradients")
    acc /= cfg.probe_batches * len(cfg.target_indices)
    return np.abs(acc * model.eps_net.params)


@dataclass
class ErasureRunState:
    """Everything needed to resume an interrupted run bit-exactly.

    model holds the raw last iterate; the delivered parameters are its
    masked entries replaced by the EMA (when enabled)."""

    iteration: int
    model: DiffusionModel
    discs: list
    gen_state: nn.AdamWState
    disc_states: list
    mask: SaliencyMask
    rng: np.random.Generator
    series: dict
    mi_trace: list
    ema: np.ndarray | None = None
    started: float = 0.0
    elapsed_before: float = 0.0

    def delivered_model(self) -> DiffusionModel:
        out = self.model.copy()
        if self.ema is not None:
            sel = self.mask.mask
            out.eps_net.params[sel] = self.ema[sel]
        return out


def _mi_probe(model: DiffusionModel, cfg: ErasureConfig, iteration: int) -> float:
    from .infotheory import JointHistogram, grid_from_samples, plugin_mi
    from . import diffusion

    probe_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 7919, iteration]))
    )
    n_per = cfg.mi_probe_samples // 2
    f_on = np.zeros(model.n_flags)
    f_on[cfg.target_indices[0]] = 1.0
    x_on = diffusion.sample(model, f_on, probe_rng, n_per)
    x_off = diffusion.sample(model, np.zeros(model.n_flags), probe_rng, n_per)
    pooled = np.vstack([x_on, x_off])
    grid = grid_from_samples(pooled, bins=cfg.mi_probe_bins)
    cond = np.concatenate([np.ones(n_per, dtype=np.int64),
                           np.zeros(n_per, dtype=np.int64)])
    return plugin_mi(JointHistogram.from_samples(cond, pooled, grid, 2).counts)


def _final_probe_accuracy(model: DiffusionModel, cfg: ErasureConfig) -> float:
    from . import adversary, diffusion

    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 40503]))
    )
    n_per = cfg.probe_samples // 2
    f_on = np.zeros(model.n_flags)
    f_on[cfg.target_indices[0]] = 1.0
    x_on = diffusion.sample(model, f_on, rng, n_per)
    x_off = diffusion.sample(model, np.zeros(model.n_flags), rng, n_per)
    _, acc = adversary.train_probe(x_on, x_off, rng=rng)
    return acc


def run_erasure(base_model: DiffusionModel, points: np.ndarray,
                flags: np.ndarray, cfg: ErasureConfig,
                resume: ErasureRunState | None = None,
                stop_iteration: int | None = None):
    """Erase the configured target concepts from a trained base model.

    Fresh runs reset the live net to the frozen anchor, warm up one
    discriminator per target, compute the saliency mask, then alternate
    discriminator and masked generator updates. stop_iteration interrupts
    the job early (checkpointing support); passing the returned state back
    as `resume` continues it, bitwise identical to an uninterrupted run.

    Returns (erased model, ErasureReport, ErasureRunState).
    """
    cfg.validate()
    if max(cfg.target_indices) >= base_model.n_flags:
        raise ErasureConfigError("target index out of range for this model")
    neutral_rows = np.where(
        flags[:, list(cfg.target_indices)].max(axis=1) == 0
    )[0]
    if neutral_rows.size == 0:
        raise ErasureConfigError("dataset has no concept-absent rows to anchor on")
    n = points.shape[0]

    if resume is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        model = base_model.copy()
        model.eps_net = model.frozen_net.copy()
        discs = [
            classifier.make_classifier(
                model.d, cfg.disc_hidden, seed=int(rng.integers(2**63))
            )
            for _ in cfg.target_indices
        ]
        gen_state = nn.AdamWState.for_net(
            model.eps_net, lr=cfg.gen_lr, weight_decay=cfg.weight_decay
        )
        disc_states = [
            nn.AdamWState.for_net(d, lr=cfg.disc_lr, weight_decay=cfg.weight_decay)
            for d in discs
        ]
        # discriminator warm-up so the saliency gradient is informative
        for _ in range(cfg.warmup_steps):
            idx = rng.integers(0, n, size=cfg.batch_size)
            x0 = points[idx]
            bflags = flags[idx].astype(np.float64)
            t = rng.integers(1, model.schedule.T + 1, size=cfg.batch_size)
            eps = rng.standard_normal((cfg.batch_size, model.d))
            for k, ti in enumerate(cfg.target_indices):
                xc, _, _ = _one_step_outputs(model, x0, bflags, ti, True, t, eps)
                xn, _, _ = _one_step_outputs(model, x0, bflags, ti, False, t, eps)
                _, dgrads = discriminator_loss(discs[k], xc, xn)
                nn.adamw_step(discs[k], dgrads, disc_states[k])
        scores = compute_saliency(model, discs, points, flags, cfg, rng)
        mask = topk_mask(scores, cfg.saliency_fraction,
                         per_layer=cfg.per_layer_topk, net=model.eps_net)
        state = ErasureRunState(
            iteration=0, model=model, discs=discs, gen_state=gen_state,
            disc_states=disc_states, mask=mask, rng=rng,
            series={"l_adv": [], "l_traj": [], "l_total": [], "disc_loss": []},
            mi_trace=[],
            ema=model.eps_net.params.copy() if cfg.ema_decay > 0 else None,
        )
    else:
        state = resume
        model = state.model
        discs = state.discs
        rng = state.rng

    state.started = time.monotonic()
    mask_u8 = state.mask.as_uint8
    flags_hit = []
    last = cfg.iterations if stop_iteration is None else min(stop_iteration,
                                                             cfg.iterations)
    for it in range(state.iteration, last):
        if cfg.gen_lr_decay == "cosine":
            # cool the generator as the game equilibrates instead of letting
            # gradient noise random-walk the matched state; keep a floor so
            # late matching can still proceed
            state.gen_state.lr = cfg.gen_lr * (
                0.2 + 0.8 * 0.5 * (1.0 + math.cos(math.pi * it / cfg.iterations))
            )
        idx = rng.integers(0, n, size=cfg.batch_size)
        x0 = points[idx]
        bflags = flags[idx].astype(np.float64)
        t = rng.integers(1, model.schedule.T + 1, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, model.d))

        try:
            l_adv_sum = 0.0
            d_loss_sum = 0.0
            g_adv = np.zeros(model.eps_net.parameter_count)
            for k, ti in enumerate(cfg.target_indices):
                xc, cache_c, fac = _one_step_outputs(model, x0, bflags, ti, True, t, eps)
                xn, cache_n, _ = _one_step_outputs(model, x0, bflags, ti, False, t, eps)
                for _ in range(cfg.disc_steps):
                    d_loss, dgrads = discriminator_loss(discs[k], xc, xn)
                    nn.adamw_step(discs[k], dgrads, state.disc_states[k])
                d_loss_sum += d_loss
                l_adv, dxc, dxn = adversarial_loss(discs[k], xc, xn, cfg.adversarial_form)
                l_adv_sum += l_adv
                g_c, _ = nn.backward(model.eps_net, cache_c, dxc * fac[:, None])
                g_n, _ = nn.backward(model.eps_net, cache_n, dxn * fac[:, None])
                g_adv += g_c + g_n
            n_t = len(cfg.target_indices)
            l_adv_mean = l_adv_sum / n_t
            g_adv /= n_t

            tr_idx = neutral_rows[rng.integers(0, neutral_rows.size, size=cfg.batch_size)]
            l_traj, g_traj = trajectory_loss(
                model, points[tr_idx], flags[tr_idx].astype(np.float64), rng,
                anchor_fraction=cfg.anchor_fraction, anchor_window=cfg.anchor_window,
            )
            l_tot = total_loss(cfg.adv_weight * l_adv_mean, l_traj, cfg.lambda_traj)
        except ValueError as e:
            # non-finite values surfacing anywhere in the step are divergence
            report = _build_report(state, flags_hit + ["diverged"], cfg)
            err = DivergenceError(f"diverged at iteration {it}: {e}")
            err.report = report
            raise err from e
        if not np.isfinite(l_tot):
            report = _build_report(state, flags_hit + ["diverged"], cfg)
            err = DivergenceError(f"non-finite total loss at iteration {it}")
            err.report = report
            raise err
        g_tot = cfg.adv_weight * g_adv + cfg.lambda_traj * g_traj
        if not nn.adamw_step(model.eps_net, g_tot, state.gen_state, mask_u8):
            flags_hit.append(f"skipped_step_{it}")
        if state.ema is not None:
            # averaged iterate is the delivered model; damps endpoint wander
            state.ema += (1.0 - cfg.ema_decay) * (model.eps_net.params - state.ema)

        state.series["l_adv"].append(l_adv_mean)
        state.series["l_traj"].append(l_traj)
        state.series["l_total"].append(l_tot)
        state.series["disc_loss"].append(d_loss_sum / n_t)
        state.iteration = it + 1
        if cfg.mi_probe_every > 0 and (it + 1) % cfg.mi_probe_every == 0:
            state.mi_trace.append((it + 1, _mi_probe(model, cfg, it + 1)))

    report = _build_report(state, flags_hit, cfg)
    completed = state.iteration >= cfg.iterations
    out_model = state.delivered_model()
    if completed and cfg.probe_samples > 0:
        report.final_probe_acc = _final_probe_accuracy(out_model, cfg)
    if completed:
        out_model.meta.setdefault("erasure", {})
        out_model.meta["erasure"].update({
            "l_adv_final": report.l_adv[-1] if report.iterations else float("nan"),
            "lambda_traj": cfg.lambda_traj,
            "iterations": cfg.iterations,
            "targets": list(cfg.target_indices),
        })
    return out_model, report, state


def _build_report(state: ErasureRunState, flags_hit, cfg: ErasureConfig) -> ErasureReport:
    elapsed = state.elapsed_before + (time.monotonic() - state.started)
    state.elapsed_before = elapsed
    return ErasureReport(
        l_adv=np.array(state.series["l_adv"]),
        l_traj=np.array(state.series["l_traj"]),
        l_total=np.array(state.series["l_total"]),
        disc_loss=np.array(state.series["disc_loss"]),
        mi_trace=list(state.mi_trace),
        wall_time_s=elapsed,
        flags=list(flags_hit),
    )


def ablation_variants(cfg: ErasureConfig) -> dict[str, ErasureConfig]:
    """full / no_adv / no_traj / no_saliency configurations."""
    cfg.validate()
    return {
        "full": cfg,
        "no_adv": replace(cfg, adv_weight=0.0),
        "no_traj": replace(cfg, lambda_traj=0.0),
        "no_saliency": replace(cfg, saliency_fraction=1.0),
    }
