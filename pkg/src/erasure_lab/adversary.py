"""Attacks and probes against (erased) models.

The probes here are the measuring instruments for every empirical error
rate: a fresh classifier trained on disjoint splits, never evaluated on
its own training points. The exact Bayes quantities come from the known
mixture and serve as oracle ceilings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import classifier, diffusion
from .infotheory import JointHistogram, conditional_mi, grid_from_samples
from .metrics import fit_gaussian
from .mixture import MixtureSpec, log_density, sample_mixture

ATTACK_STRATEGIES = ("repeat-query", "condition-sweep", "composite-flags")


class ProbeError(ValueError):
    pass


def train_probe(samples_pos: np.ndarray, samples_neg: np.ndarray,
                rng: np.random.Generator, hidden=(64, 64), steps: int = 2000,
                batch: int = 256, lr: float = 2e-3, holdout: float = 0.5):
    """Fresh held-out probe. Returns (net, held-out accuracy).

    Splits are disjoint by construction; class imbalance beyond 80/20 is
    rejected.
    """
    n_pos, n_neg = samples_pos.shape[0], samples_neg.shape[0]
    frac = min(n_pos, n_neg) / max(n_pos + n_neg, 1)
    if frac < 0.2:
        raise ProbeError(f"class imbalance beyond 80/20 (minority {frac:.2%})")
    cut_p = int(n_pos * (1.0 - holdout))
    cut_n = int(n_neg * (1.0 - holdout))
    x_train = np.vstack([samples_pos[:cut_p], samples_neg[:cut_n]])
    y_train = np.concatenate([np.ones(cut_p), np.zeros(cut_n)])
    x_held = np.vstack([samples_pos[cut_p:], samples_neg[cut_n:]])
    y_held = np.concatenate([np.ones(n_pos - cut_p), np.zeros(n_neg - cut_n)])
    net = classifier.train_binary_classifier(
        x_train, y_train, hidden, steps, batch, lr, rng
    )
    p = classifier.predict_proba(net, x_held)
    acc = float(np.mean((p > 0.5) == (y_held > 0.5)))
    return net, acc


def _integration_box(mix: MixtureSpec, pad_sigmas: float = 8.0):
    sig = np.sqrt(np.array([np.linalg.eigvalsh(c).max() for c in mix.covs]))
    lo = (mix.means - pad_sigmas * sig[:, None]).min(axis=0)
    hi = (mix.means + pad_sigmas * sig[:, None]).max(axis=0)
    return lo, hi


def bayes_error(mix: MixtureSpec, concept: str, grid_points: int | None = None) -> float:
    """e* = integral of min(P(C=1, x), P(C=0, x)) by fine-grid quadrature.

    Supported for d <= 3; the grid resolution falls with dimension to keep
    the budget flat.
    """
    d = mix.dim
    if d > 3:
        raise ValueError("bayes_error quadrature supports d <= 3")
    if grid_points is None:
        grid_points = {1: 200001, 2: 701, 3: 121}[d]
    member = mix.membership(concept)
    prior1 = mix.concept_prior(concept)
    prior0 = 1.0 - prior1
    lo, hi = _integration_box(mix)
    axes = [np.linspace(lo[i], hi[i], grid_points) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vol = np.prod([(hi[i] - lo[i]) / (grid_points - 1) for i in range(d)])
    f1 = prior1 * np.exp(log_density(mix, pts, component_mask=member))
    f0 = prior0 * np.exp(log_density(mix, pts, component_mask=~member))
    e = float(np.minimum(f1, f0).sum() * vol)
    if not np.isfinite(e):
        raise ArithmeticError("quadrature did not converge")
    return min(max(e, 0.0), 0.5)


@dataclass
class GapSweepResult:
    n_values: list
    errors: list          # empirical held-out error per n
    gaps: list            # |e* - e_hat|
    bayes: float
    fit_c: float          # least-squares c in gap ~ c / sqrt(n)
    fit_residual: float

    def smoothed_gaps(self, window: int = 2) -> list:
        out = []
        for i in range(len(self.gaps)):
            lo = max(0, i - window + 1)
            out.append(float(np.mean(self.gaps[lo : i + 1])))
        return out


def generalization_gap_sweep(mix: MixtureSpec, concept: str, n_list,
                             rng: np.random.Generator, eval_n: int = 20000,
                             probe_steps: int = 2500, probe_batch: int = 256,
                             probe_lr: float = 2e-3,
                             hidden=(64, 64)) -> GapSweepResult:
    """Train probes on n real samples each, record |e* - e_hat| vs n and
    fit c / sqrt(n)."""
    e_star = bayes_error(mix, concept)
    member = mix.membership(concept)
    errors, gaps = [], []
    for n in n_list:
        pos, _ = sample_mixture(mix, n // 2, rng, component_mask=member)
        neg, _ = sample_mixture(mix, n - n // 2, rng, component_mask=~member)
        net = classifier.train_binary_classifier(
            np.vstack([pos, neg]),
            np.concatenate([np.ones(pos.shape[0]), np.zeros(neg.shape[0])]),
            hidden, probe_steps, min(probe_batch, n), probe_lr, rng,
        )
        ep, _ = sample_mixture(mix, eval_n // 2, rng, component_mask=member)
        en, _ = sample_mixture(mix, eval_n - eval_n // 2, rng, component_mask=~member)
        p = classifier.predict_proba(net, np.vstack([ep, en]))
        y = np.concatenate([np.ones(ep.shape[0]), np.zeros(en.shape[0])])
        err = float(np.mean((p > 0.5) != (y > 0.5)))
        errors.append(err)
        gaps.append(abs(e_star - err))
    inv_sqrt = np.array([1.0 / math.sqrt(n) for n in n_list])
    g = np.array(gaps)
    c = float((g * inv_sqrt).sum() / (inv_sqrt * inv_sqrt).sum())
    resid = float(np.sqrt(np.mean((g - c * inv_sqrt) ** 2)))
    return GapSweepResult(n_values=list(n_list), errors=errors, gaps=gaps,
                          bayes=e_star, fit_c=c, fit_residual=resid)


@dataclass
class AttackTranscript:
    strategy: str
    q: int
    queries: list = field(default_factory=list)  # (flag tuple, n observed)
    success: float = float("nan")
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")
    trials: int = 0
    guesses: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "strategy": self.strategy, "q": self.q, "trials": self.trials,
            "success": self.success, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
            "queries": [(list(f), int(n)) for f, n in self.queries],
        }


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return center - half, center + half


def _query_flags(strategy: str, i: int, n_flags: int, target: int) -> np.ndarray:
    f = np.zeros(n_flags)
    if strategy == "repeat-query":
        f[target] = 1.0
    elif strategy == "condition-sweep":
        f[target] = float(i % 2)
    elif strategy == "composite-flags":
        combo = i % (2**n_flags)
        for b in range(n_flags):
            f[b] = float((combo >> b) & 1)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return f


def adaptive_attack(model, target_index: int, q: int, strategy: str,
                    rng: np.random.Generator, n_per_query: int = 64,
                    trials: int = 200, trial_batch: int = 64,
                    probe_steps: int = 800, probe_hidden=(64, 64),
                    trial_samples=None) -> AttackTranscript:
    """Multi-query attack: observe q conditioned batches, build the best
    probe the transcript supports, then guess the hidden flag bit of fresh
    conditioned batches.

    Strategies with both labels in the transcript train a classifier and
    vote with the batch-mean probability. repeat-query only ever sees the
    flag-on condition, so it falls back to a one-class likelihood test
    against a Gaussian fit of its observations. q = 0 degenerates to the
    prior guess: with stratified trials the success is exactly 0.5.

    trial_samples lets callers precompute (samples, bits) once per model
    and reuse them across q values.
    """
    if strategy not in ATTACK_STRATEGIES:
        raise ValueError(f"strategy must be one of {ATTACK_STRATEGIES}")
    transcript = AttackTranscript(strategy=strategy, q=q, trials=trials)
    obs_x, obs_y = [], []
    for i in range(q):
        f = _query_flags(strategy, i, model.n_flags, target_index)
        batch = diffusion.sample(model, f, rng, n_per_query)
        transcript.queries.append((tuple(f.tolist()), n_per_query))
        obs_x.append(batch)
        obs_y.append(np.full(n_per_query, f[target_index]))

    if trial_samples is None:
        trial_samples = make_trial_batches(model, target_index, trials,
                                           trial_batch, rng)
    batches, bits = trial_samples
    trials = len(bits)
    transcript.trials = trials

    if q == 0:
        guesses = np.ones(trials, dtype=np.int64)  # prior guess, equal priors
    else:
        x = np.vstack(obs_x)
        y = np.concatenate(obs_y)
        if y.min() == y.max():
            # one-class transcript: likelihood-ratio style threshold
            fit = fit_gaussian(x)
            ref = _gauss_loglik(fit, x).mean()
            guesses = np.array([
                1 if _gauss_loglik(fit, b).mean() >= ref - 1.0 else 0
                for b in batches
            ], dtype=np.int64)
            if y.max() == 0.0:
                guesses = 1 - guesses
        else:
            probe = classifier.train_binary_classifier(
                x, y, probe_hidden, probe_steps, min(256, x.shape[0]), 2e-3, rng
            )
            guesses = np.array([
                1 if classifier.predict_proba(probe, b).mean() > 0.5 else 0
                for b in batches
            ], dtype=np.int64)

    correct = int(np.sum(guesses == bits))
    transcript.success = correct / trials
    transcript.ci_lo, transcript.ci_hi = wilson_interval(correct, trials)
    transcript.guesses = guesses.tolist()
    return transcript


def make_trial_batches(model, target_index: int, trials: int, trial_batch: int,
                       rng: np.random.Generator):
    """Stratified secret bits (exactly half on) and their conditioned
    generations; reusable across q values and strategies."""
    bits = np.zeros(trials, dtype=np.int64)
    bits[: trials // 2] = 1
    rng.shuffle(bits)
    batches = []
    for b in bits:
        f = np.zeros(model.n_flags)
        f[target_index] = float(b)
        batches.append(diffusion.sample(model, f, rng, trial_batch))
    return batches, bits


def _gauss_loglik(fit, x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    chol = np.linalg.cholesky(fit.cov)
    diff = x - fit.mean
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (maha + logdet + d * math.log(2.0 * math.pi))


def composite_condition_test(model, target_index: int, other_index: int,
                             n_per_cell: int, rng: np.random.Generator,
                             bins: int = 30) -> float:
    """Conditional MI I(C; X | C') from samples under all four flag combos."""
    if n_per_cell < 500:
        raise ValueError("need at least 500 samples per flag combination")
    samples, c_lab, c2_lab = [], [], []
    for c in (0, 1):
        for c2 in (0, 1):
            f = np.zeros(model.n_flags)
            f[target_index] = float(c)
            f[other_index] = float(c2)
            samples.append(diffusion.sample(model, f, rng, n_per_cell))
            c_lab.append(np.full(n_per_cell, c, dtype=np.int64))
            c2_lab.append(np.full(n_per_cell, c2, dtype=np.int64))
    pooled = np.vstack(samples)
    c_lab = np.concatenate(c_lab)
    c2_lab = np.concatenate(c2_lab)
    grid = grid_from_samples(pooled, bins=bins)
    cells = grid.cell_index(pooled)
    counts = np.zeros((2, 2, grid.n_cells), dtype=np.int64)
    np.add.at(counts, (c_lab, c2_lab, cells), 1)
    return conditional_mi(counts)
