"""Gaussian mixtures with named concepts over component subsets.

The mixture is the ground truth behind every synthetic benchmark: data
generation samples from it, and the oracle paths (Bayes posterior, Bayes
error, reference conditionals) evaluate it exactly. Model training never
sees these parameters, only sampled points and flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MixtureError(ValueError):
    pass


@dataclass
class MixtureSpec:
    means: np.ndarray                 # (K, d)
    covs: np.ndarray                  # (K, d, d) symmetric positive-definite
    weights: np.ndarray               # (K,), sums to 1
    concepts: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim != 2:
            raise MixtureError("means must be (K, d)")
        k, d = self.means.shape
        self.covs = np.asarray(self.covs, dtype=np.float64)
        if self.covs.shape != (k, d, d):
            raise MixtureError(f"covs must be ({k}, {d}, {d})")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (k,):
            raise MixtureError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise MixtureError("weights must be non-negative and sum to 1")
        for j in range(k):
            c = self.covs[j]
            if not np.allclose(c, c.T, atol=1e-12):
                raise MixtureError(f"covariance {j} not symmetric")
            eig = np.linalg.eigvalsh(c)
            if eig.min() <= 0:
                raise MixtureError(f"covariance {j} not positive-definite")
        for name, members in self.concepts.items():
            if any(m < 0 or m >= k for m in members):
                raise MixtureError(f"concept {name!r} references missing component")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def concept_names(self) -> list[str]:
        return list(self.concepts.keys())

    def membership(self, concept: str) -> np.ndarray:
        """Boolean per-component membership vector for a concept."""
        m = np.zeros(self.n_components, dtype=bool)
        m[self.concepts[concept]] = True
        return m

    def concept_prior(self, concept: str) -> float:
        return float(self.weights[self.membership(concept)].sum())

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "weights": self.weights.tolist(),
            "concepts": {k: list(v) for k, v in self.concepts.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(
            means=np.array(d["means"], dtype=np.float64),
            covs=np.array(d["covs"], dtype=np.float64),
            weights=np.array(d["weights"], dtype=np.float64),
            concepts={k: [int(i) for i in v] for k, v in d["concepts"].items()},
        )


def component_log_densities(mix: MixtureSpec, x: np.ndarray) -> np.ndarray:
    """log N(x; mu_j, Sigma_j) for every component, shape (n, K)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    out = np.empty((n, mix.n_components))
    for j in range(mix.n_components):
        cov = mix.covs[j]
        chol = np.linalg.cholesky(cov)
        diff = x - mix.means[j]
        sol = np.linalg.solve(chol, diff.T)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))
    return out


def log_density(mix: MixtureSpec, x: np.ndarray,
                component_mask: np.ndarray | None = None) -> np.ndarray:
    """Log density of the mixture, optionally restricted (and renormalized)
    to a component subset."""
    logs = component_log_densities(mix, x)
    w = mix.weights.copy()
    if component_mask is not None:
        w = np.where(component_mask, w, 0.0)
        total = w.sum()
        if total <= 0:
            raise MixtureError("component mask selects zero weight")
        w = w / total
    with np.errstate(divide="ignore"):
        logw = np.where(w > 0, np.log(np.maximum(w, 1e-300)), -np.inf)
    m = np.max(logs + logw, axis=1, keepdims=True)
    return (m[:, 0] + np.log(np.sum(np.exp(logs + logw - m), axis=1)))


def sample_mixture(mix: MixtureSpec, n: int, rng: np.random.Generator,
                   component_mask: np.ndarray | None = None):
    """Draw n points; returns (points (n,d), component ids (n,))."""
    w = mix.weights.copy()
    if component_mask is not None:
        w = np.where(component_mask, w, 0.0)
        w = w / w.sum()
    comp = rng.choice(mix.n_components, size=n, p=w)
    pts = np.empty((n, mix.dim))
    for j in range(mix.n_components):
        idx = np.where(comp == j)[0]
        if idx.size == 0:
            continue
        chol = np.linalg.cholesky(mix.covs[j])
        z = rng.standard_normal((idx.size, mix.dim))
        pts[idx] = mix.means[j] + z @ chol.T
    return pts, comp


def concept_flags(mix: MixtureSpec, comp: np.ndarray) -> np.ndarray:
    """Per-point flag matrix (n, n_concepts) from component ids."""
    flags = np.zeros((comp.shape[0], len(mix.concepts)), dtype=np.uint8)
    for i, name in enumerate(mix.concept_names):
        flags[:, i] = mix.membership(name)[comp]
    return flags


def bayes_posterior(x: np.ndarray, mix: MixtureSpec, concept: str) -> np.ndarray:
    """Exact P(concept component generated x | x)."""
    logs = component_log_densities(mix, x)
    member = mix.membership(concept)
    joint = mix.weights * np.exp(logs - logs.max(axis=1, keepdims=True))
    num = joint[:, member].sum(axis=1)
    den = joint.sum(axis=1)
    return num / den


def conditional_moments(mix: MixtureSpec, concept: str, present: bool):
    """Mean and covariance of the mixture restricted to a concept side,
    in closed form (no sampling)."""
    member = mix.membership(concept)
    mask = member if present else ~member
    w = np.where(mask, mix.weights, 0.0)
    w = w / w.sum()
    mean = np.einsum("k,kd->d", w, mix.means)
    cov = np.zeros((mix.dim, mix.dim))
    for j in range(mix.n_components):
        if w[j] == 0:
            continue
        diff = (mix.means[j] - mean)[:, None]
        cov += w[j] * (mix.covs[j] + diff @ diff.T)
    return mean, cov
