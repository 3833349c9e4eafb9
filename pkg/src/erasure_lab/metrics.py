"""Toy-scale evaluation metrics.

The fidelity distance is a Fréchet distance between Gaussian fits of raw
coordinates (at d=2 the coordinates are the features, so no encoder is
involved; the numbers live on their own scale). The alignment score is a
conditional log-likelihood, affinely rescaled so the base model scores
100. Both rescaling constants are frozen when the base model is evaluated
and travel with the checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import classifier, diffusion
from .infotheory import JointHistogram, grid_from_samples, plugin_mi
from .mixture import MixtureSpec, bayes_posterior, conditional_moments, log_density

COV_REG = 1e-6


class MetricError(ValueError):
    pass


@dataclass
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray  # symmetric PSD after +COV_REG * I

    def __post_init__(self):
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise MetricError("covariance not symmetric")


def fit_gaussian(points: np.ndarray) -> GaussianFit:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = pts.shape
    if n < d + 1:
        raise MetricError(f"need at least {d + 1} points, got {n}")
    mean = pts.mean(axis=0)
    diff = pts - mean
    cov = diff.T @ diff / (n - 1)
    cov = 0.5 * (cov + cov.T) + COV_REG * np.eye(d)
    return GaussianFit(mean=mean, cov=cov)


def frechet_distance_full(g1: GaussianFit, g2: GaussianFit):
    """Squared Fréchet distance between two Gaussian fits.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the matrix square
    root taken through the symmetrized product. Returns (value, clipped)
    where clipped marks numerical dust removed at zero.
    """
    if g1.mean.shape != g2.mean.shape:
        raise MetricError("dimension mismatch")
    dmu = g1.mean - g2.mean
    w1, v1 = np.linalg.eigh(g1.cov)
    s1h = (v1 * np.sqrt(np.maximum(w1, 0.0))) @ v1.T
    inner = s1h @ g2.cov @ s1h
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = np.sum(np.sqrt(np.maximum(w, 0.0)))
    fd2 = float(dmu @ dmu + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * tr_sqrt)
    if fd2 < 0.0:
        return 0.0, True
    return fd2, False


def frechet_distance(g1: GaussianFit, g2: GaussianFit) -> float:
    return frechet_distance_full(g1, g2)[0]


def gaussian_kl(g0: GaussianFit, g1: GaussianFit) -> float:
    """KL(N0 || N1) in closed form."""
    d = g0.mean.shape[0]
    inv1 = np.linalg.inv(g1.cov)
    dmu = g1.mean - g0.mean
    _, logdet0 = np.linalg.slogdet(g0.cov)
    _, logdet1 = np.linalg.slogdet(g1.cov)
    return float(0.5 * (np.trace(inv1 @ g0.cov) + dmu @ inv1 @ dmu - d
                        + logdet1 - logdet0))


def train_detector(points: np.ndarray, labels: np.ndarray,
                   rng: np.random.Generator, hidden=(64, 64),
                   steps: int = 2500, batch: int = 256, lr: float = 2e-3):
    """Concept detector fit on real data only (never on model outputs)."""
    return classifier.train_binary_classifier(
        points, labels.astype(np.float64), hidden, steps, batch, lr, rng
    )


def concept_accuracy(model, detector, concept_index: int, n: int,
                     rng: np.random.Generator) -> float:
    """Fraction of concept-conditioned generations the detector flags."""
    f_on = np.zeros(model.n_flags)
    f_on[concept_index] = 1.0
    samples = diffusion.sample(model, f_on, rng, n)
    return float(np.mean(classifier.predict_proba(detector, samples) > 0.5))


def neutral_loglik(model, mix: MixtureSpec, n: int, rng: np.random.Generator):
    """Mean log-likelihood of all-flags-off generations under the matching
    ground-truth conditional (oracle path)."""
    member_any = np.zeros(mix.n_components, dtype=bool)
    for name in mix.concept_names:
        member_any |= mix.membership(name)
    samples = diffusion.sample(model, np.zeros(model.n_flags), rng, n)
    return float(np.mean(log_density(mix, samples, component_mask=~member_any)))


def calibrate_alignment(base_model, mix: MixtureSpec, n: int,
                        rng: np.random.Generator) -> dict:
    """Freeze the affine rescaling that pins the base model at 100."""
    ll = neutral_loglik(base_model, mix, n, rng)
    slope = 100.0 / abs(ll)
    return {"ll_base": ll, "slope": slope, "intercept": 100.0 - slope * ll}


def alignment_score(model, mix: MixtureSpec, constants: dict, n: int,
                    rng: np.random.Generator) -> float:
    if not constants or "slope" not in constants:
        raise MetricError("missing alignment rescaling constants")
    ll = neutral_loglik(model, mix, n, rng)
    return float(constants["intercept"] + constants["slope"] * ll)


def harmonic_mean_score(acc: float, fd: float, align: float,
                        fd_orig: float, align_orig: float):
    """Composite score H = 2EF/(E+F) with E = 1 - acc and
    F = ((align/align_orig) + max(fd_orig - (fd - fd_orig), 0)/fd_orig) / 2.
    Components are clamped to [0,1] before combining; clamping is flagged.

    Returns (H, E, F, flags).
    """
    if fd_orig <= 0 or align_orig <= 0:
        raise MetricError("fd_orig and align_orig must be positive")
    flags = []
    e = 1.0 - acc
    f = 0.5 * ((align / align_orig)
               + max(fd_orig - (fd - fd_orig), 0.0) / fd_orig)
    for name, val in (("E", e), ("F", f)):
        if val < 0.0 or val > 1.0:
            flags.append(f"{name}_clamped")
    e = min(max(e, 0.0), 1.0)
    f = min(max(f, 0.0), 1.0)
    h = 0.0 if e + f == 0 else 2.0 * e * f / (e + f)
    return h, e, f, flags


@dataclass
class EvalReport:
    acc: float
    fd2_neutral: float
    alignment: float
    harmonic: float
    per_concept: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)


def evaluate_model(model, detector, mix: MixtureSpec, real_neutral: np.ndarray,
                   constants: dict, concept_index: int, n: int,
                   rng: np.random.Generator) -> EvalReport:
    """Full metric set for one checkpoint against frozen base constants."""
    acc = concept_accuracy(model, detector, concept_index, n, rng)
    gen_neutral = diffusion.sample(model, np.zeros(model.n_flags), rng, n)
    fd2, clipped = frechet_distance_full(
        fit_gaussian(gen_neutral), fit_gaussian(real_neutral)
    )
    align = alignment_score(model, mix, constants, n, rng)
    h, _, _, h_flags = harmonic_mean_score(
        acc, fd2, align, constants["fd2_orig"], constants.get("align_orig", 100.0)
    )
    flags = list(h_flags) + (["fd2_clipped"] if clipped else [])
    name = mix.concept_names[concept_index]
    return EvalReport(acc=acc, fd2_neutral=fd2, alignment=align, harmonic=h,
                      per_concept={name: acc}, flags=flags)


def relevance_labels(points: np.ndarray, mix: MixtureSpec, concept: str) -> np.ndarray:
    """Ground-truth concept-relevance of arbitrary points (oracle path)."""
    return (bayes_posterior(points, mix, concept) > 0.5).astype(np.int64)


def entanglement_from_points(points: np.ndarray, mix: MixtureSpec,
                             concept: str, bins: int = 40) -> float:
    """I(relevance label; X) over concept-absent outputs, in nats.

    Degenerate inputs (all labels equal) give exactly zero.
    """
    labels = relevance_labels(points, mix, concept)
    grid = grid_from_samples(points, bins=bins)
    joint = JointHistogram.from_samples(labels, points, grid, 2)
    return plugin_mi(joint.counts)


def entanglement(model, mix: MixtureSpec, concept: str, n: int,
                 rng: np.random.Generator, bins: int = 40) -> float:
    """Entanglement of a concept with the model's concept-absent output."""
    if n < 1000:
        raise MetricError("insufficient samples for the entanglement estimate")
    samples = diffusion.sample(model, np.zeros(model.n_flags), rng, n)
    return entanglement_from_points(samples, mix, concept, bins=bins)


def divergence_shift(pre_model, post_model, mix: MixtureSpec, concept: str,
                     n: int, rng: np.random.Generator) -> float:
    """KL(post fit || reference conditional) - KL(pre fit || reference),
    where the reference is the ground-truth concept conditional's moments.
    Positive shifts mean the edited model moved away from the concept."""
    idx = mix.concept_names.index(concept)
    ref_mean, ref_cov = conditional_moments(mix, concept, present=True)
    ref = GaussianFit(mean=ref_mean, cov=ref_cov + COV_REG * np.eye(mix.dim))
    f_on = np.zeros(pre_model.n_flags)
    f_on[idx] = 1.0
    # paired noise streams: identical models give exactly zero shift
    seed = int(rng.integers(2**63))
    pre_fit = fit_gaussian(diffusion.sample(
        pre_model, f_on, np.random.Generator(np.random.PCG64(seed)), n))
    post_fit = fit_gaussian(diffusion.sample(
        post_model, f_on, np.random.Generator(np.random.PCG64(seed)), n))
    return gaussian_kl(post_fit, ref) - gaussian_kl(pre_fit, ref)


@dataclass
class TradeoffPoint:
    lam: float
    mi: float
    fd2_neutral: float
    diverged: bool = False


def tradeoff_sweep(base_model, points: np.ndarray, flags: np.ndarray,
                   real_neutral: np.ndarray, erasure_config, lam_values,
                   rng_seed: int, sample_budget: int = 30000,
                   bins: int = 30) -> list[TradeoffPoint]:
    """Erase once per lambda (shared seed) and report the (MI, FD2) frontier
    sorted by lambda. Diverged runs are flagged and keep NaN metrics."""
    from dataclasses import replace

    from . import erasure

    if len(lam_values) == 0:
        raise MetricError("lambda grid must be nonempty")
    out = []
    for lam in sorted(lam_values):
        cfg = replace(erasure_config, lambda_traj=float(lam), seed=rng_seed,
                      mi_probe_every=0)
        try:
            model, _, _ = erasure.run_erasure(base_model, points, flags, cfg)
        except diffusion.DivergenceError:
            out.append(TradeoffPoint(lam=float(lam), mi=float("nan"),
                                     fd2_neutral=float("nan"), diverged=True))
            continue
        eval_rng = np.random.Generator(np.random.PCG64(rng_seed + 104729))
        n_per = sample_budget // 2
        f_on = np.zeros(model.n_flags)
        f_on[cfg.target_indices[0]] = 1.0
        x_on = diffusion.sample(model, f_on, eval_rng, n_per)
        x_off = diffusion.sample(model, np.zeros(model.n_flags), eval_rng, n_per)
        grid = grid_from_samples(np.vstack([x_on, x_off]), bins=bins)
        cond = np.concatenate([np.ones(n_per, dtype=np.int64),
                               np.zeros(n_per, dtype=np.int64)])
        joint = JointHistogram.from_samples(cond, np.vstack([x_on, x_off]), grid, 2)
        fd2 = frechet_distance(fit_gaussian(x_off), fit_gaussian(real_neutral))
        out.append(TradeoffPoint(lam=float(lam), mi=plugin_mi(joint.counts),
                                 fd2_neutral=fd2))
    return out
