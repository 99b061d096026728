"""von Mises-Fisher density, sampling, mixtures and spread statistics.

The vMF density on the unit hypersphere S^(d-1) with mean direction ``mu``
and concentration ``kappa > 0`` is

    V_d(z; mu, kappa) = C_d(kappa) * exp(kappa * mu @ z)

with the log normalizing constant supplied by :mod:`fairvmf.specfn`
(cached per distinct (d, kappa), so equiprobable mixtures with few
distinct concentrations pay for it once).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .specfn import log_vmf_normalizer

UNIT_NORM_TOL = 1e-9


class DegenerateMean(ValueError):
    """Raised when the mean of a set of unit vectors is numerically zero.

    The renormalized mean (and hence the inertia statistic) is undefined,
    e.g. for perfectly antipodal pairs.
    """


def as_unit_vector(x, tol: float = UNIT_NORM_TOL) -> np.ndarray:
    """Validate and return a float64 unit vector."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"vector is not unit norm: ||v|| = {norm!r}")
    return v


@dataclass(frozen=True)
class VmfParams:
    """Mean direction and concentration of one vMF component."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "mu", as_unit_vector(self.mu))
        kappa = float(self.kappa)
        if not np.isfinite(kappa) or kappa <= 0.0:
            raise ValueError(f"kappa must be a positive finite real, got {self.kappa!r}")
        object.__setattr__(self, "kappa", kappa)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class VmfMixture:
    """Equiprobable mixture of vMF components sharing one dimension."""

    components: tuple[VmfParams, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ValueError("mixture needs at least one component")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError(f"components disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def __len__(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class SpreadStats:
    """Renormalized mean and inertia of one identity's embeddings."""

    renormalized_mean: np.ndarray
    inertia: float
    count: int


def vmf_log_density(z, params: VmfParams) -> float:
    """log V_d(z; mu, kappa) = log C_d(kappa) + kappa * mu @ z.

    The cosine is clamped to [-1, 1] against rounding, so the value always
    lies in [log C_d(kappa) - kappa, log C_d(kappa) + kappa].
    """
    z = as_unit_vector(z)
    if z.shape[0] != params.dim:
        raise ValueError(f"dimension mismatch: z has d={z.shape[0]}, params d={params.dim}")
    cos = float(np.clip(params.mu @ z, -1.0, 1.0))
    return log_vmf_normalizer(params.dim, params.kappa) + params.kappa * cos


def _sample_cosines(kappa: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample n cosines mu @ z of vMF(*, kappa) in dimension d.

    Wood's envelope: a Beta((d-1)/2, (d-1)/2) proposal mapped through a
    Moebius-like transform, accepted against the exact marginal.
    """
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa * kappa + (d - 1.0) ** 2)) / (d - 1.0)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1.0) * np.log(1.0 - x0 * x0)
    out = np.empty(n)
    got = 0
    while got < n:
        m = 2 * (n - got) + 16
        z = rng.beta(0.5 * (d - 1.0), 0.5 * (d - 1.0), size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        accepted = w[kappa * w + (d - 1.0) * np.log(1.0 - x0 * w) - c >= np.log(u)]
        take = min(accepted.size, n - got)
        out[got : got + take] = accepted[:take]
        got += take
    return out


def sample_vmf(params: VmfParams, n: int, seed) -> np.ndarray:
    """Draw n unit vectors from vMF(mu, kappa), deterministically per seed.

    The PRNG is numpy's PCG64 (``np.random.default_rng``); the draw order
    is fixed (cosines first, then tangential directions), so a given
    (params, n, seed) always yields bit-identical output. ``seed`` may
    also be a ``numpy.random.Generator`` to draw from an existing stream.

    Returns
    -------
    ndarray of shape (n, d)
        Rows are unit vectors.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = params.dim
    w = _sample_cosines(params.kappa, d, n, rng)
    v = rng.standard_normal((n, d - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    samples = np.empty((n, d))
    samples[:, 0] = w
    samples[:, 1:] = np.sqrt(np.maximum(0.0, 1.0 - w * w))[:, None] * v
    # Householder reflection taking e_1 to mu maps the canonical frame onto mu's.
    u = -params.mu.copy()
    u[0] += 1.0
    uu = float(u @ u)
    if uu > 1e-24:
        samples -= (2.0 / uu) * np.outer(samples @ u, u)
    return samples


def mixture_posteriors(z, mixture: VmfMixture) -> np.ndarray:
    """Posterior component probabilities of z under an equiprobable mixture.

    softmax over k of [log C_d(kappa_k) + kappa_k * mu_k @ z], computed with
    max-shifted logsoftmax; entries sum to 1 within 1e-12.
    """
    z = as_unit_vector(z)
    if z.shape[0] != mixture.dim:
        raise ValueError(f"dimension mismatch: z has d={z.shape[0]}, mixture d={mixture.dim}")
    logits = np.array(
        [
            log_vmf_normalizer(c.dim, c.kappa) + c.kappa * float(np.clip(c.mu @ z, -1.0, 1.0))
            for c in mixture.components
        ]
    )
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def spread_stats(embeddings) -> SpreadStats:
    """Renormalized mean and inertia of a set of unit vectors.

    The inertia is the mean squared distance to the renormalized mean
    zbar / ||zbar||; on the unit sphere it equals 2 (1 - ||zbar||) exactly.

    Raises
    ------
    DegenerateMean
        If ||zbar|| <= 1e-12 (the renormalized mean is undefined).
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"expected an (n, d) array with n >= 1, got shape {z.shape}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValueError("spread_stats expects unit-norm rows")
    mean = z.mean(axis=0)
    r = float(np.linalg.norm(mean))
    if r <= 1e-12:
        raise DegenerateMean(f"mean resultant length {r!r} is numerically zero")
    center = mean / r
    inertia = float(np.mean(np.sum((z - center) ** 2, axis=1)))
    return SpreadStats(renormalized_mean=center, inertia=inertia, count=z.shape[0])
