"""Hypersphere classification losses with analytic gradients.

Three variants over a table of identity centroids:

* ``standard_softmax_loss`` — the classical inverse-temperature softmax
  cross entropy on cosine logits, one global concentration.
* ``fair_vmf_loss`` — the vMF-mixture negative log-likelihood with two
  gender-indexed concentrations (kappa0, kappa1); each class k contributes
  the logit log C_d(kappa_{a_k}) + kappa_{a_k} * mu_k @ z. With
  kappa0 = kappa1 the normalizer terms are a common constant per sample
  and the loss reduces exactly to the standard one.
* ``mixture_nll`` — the general form with an arbitrary concentration per
  identity, provided for completeness.

Centroids are stored as unnormalized parameter vectors and normalized in
the forward pass; gradients flow through the normalization (tangent-space
projection). Embeddings are expected to arrive unit-norm from the trainer
and are asserted, not renormalized. Everything is computed with the
max-shifted logsoftmax, and every logit is guaranteed to lie in
[log C_d(kappa_a) - kappa_a, log C_d(kappa_a) + kappa_a] because cosines
are clamped to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .specfn import log_vmf_normalizer

_UNIT_TOL = 1e-9
_MIN_CENTROID_NORM = 1e-8


@dataclass(frozen=True)
class FairKappas:
    """Per-gender concentration hyperparameters (group 0, group 1)."""

    kappa0: float
    kappa1: float

    def __post_init__(self):
        for name in ("kappa0", "kappa1"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be a positive finite real, got {v!r}")
            object.__setattr__(self, name, v)

    def by_gender(self, gender: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(gender) == 0, self.kappa0, self.kappa1)


class IdentityTable:
    """Centroid parameters plus the gender of each identity.

    Parameters
    ----------
    centroids : (K, d) array
        Unnormalized centroid parameter vectors; rows must have norm
        > 1e-8 (they are normalized on the fly in the forward pass).
    gender_of_identity : (K,) array of {0, 1}
        Group label of each identity.
    """

    def __init__(self, centroids, gender_of_identity):
        self.centroids = np.array(centroids, dtype=np.float64)
        self.gender_of_identity = np.array(gender_of_identity, dtype=np.int64)
        if self.centroids.ndim != 2:
            raise ValueError(f"centroids must be (K, d), got shape {self.centroids.shape}")
        if self.gender_of_identity.shape != (self.centroids.shape[0],):
            raise ValueError("gender_of_identity must have one entry per centroid")
        if not np.all(np.isin(self.gender_of_identity, (0, 1))):
            raise ValueError("gender labels must be 0 or 1")

    @property
    def num_identities(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def normalized_centroids(self) -> tuple[np.ndarray, np.ndarray]:
        """(unit centroids, parameter norms); raises on a zero-norm row."""
        norms = np.linalg.norm(self.centroids, axis=1)
        if np.any(norms <= _MIN_CENTROID_NORM):
            bad = int(np.argmin(norms))
            raise ValueError(f"zero-norm centroid parameter for identity {bad}")
        return self.centroids / norms[:, None], norms


@dataclass(frozen=True)
class LossBatch:
    """A batch of unit-norm embeddings with their identity labels."""

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if z.ndim != 2 or z.shape[0] < 1:
            raise ValueError(f"embeddings must be (n, d) with n >= 1, got {z.shape}")
        if y.shape != (z.shape[0],):
            raise ValueError("labels must have one entry per embedding")
        object.__setattr__(self, "embeddings", z)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class LossAndGrads:
    """Scalar loss with gradients w.r.t. embeddings and centroid parameters."""

    loss: float
    grad_embeddings: np.ndarray
    grad_centroids: np.ndarray


def _check_batch(batch: LossBatch, table: IdentityTable) -> None:
    if batch.embeddings.shape[1] != table.dim:
        raise ValueError(
            f"dimension mismatch: embeddings d={batch.embeddings.shape[1]}, table d={table.dim}"
        )
    if np.any(batch.labels < 0) or np.any(batch.labels >= table.num_identities):
        raise ValueError("batch contains an unknown identity id")
    norms = np.linalg.norm(batch.embeddings, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("embeddings entering the loss must be unit norm")


def _class_logits(z: np.ndarray, table: IdentityTable, kappa_by_class: np.ndarray,
                  logc_by_class: np.ndarray) -> np.ndarray:
    """Logits q_{i,k} = logc_k + kappa_k * mu_k @ z_i with clamped cosines."""
    unit_centroids, _ = table.normalized_centroids()
    cos = np.clip(z @ unit_centroids.T, -1.0, 1.0)
    return logc_by_class + kappa_by_class * cos


def _normalizers_by_class(d: int, kappa_by_class: np.ndarray) -> np.ndarray:
    logc = {float(k): log_vmf_normalizer(d, float(k)) for k in np.unique(kappa_by_class)}
    return np.array([logc[float(k)] for k in kappa_by_class])


def logits(z, table: IdentityTable, kappas: FairKappas) -> np.ndarray:
    """Fair-vMF logits of one embedding (or an (n, d) batch) against the table.

    q_k = log C_d(kappa_{a_k}) + kappa_{a_k} * mu_k @ z, with mu_k the
    normalized centroid. Each q_k lies within kappa_{a_k} of its class
    normalizer constant.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.shape[1] != table.dim:
        raise ValueError(f"dimension mismatch: z has d={zb.shape[1]}, table d={table.dim}")
    kappa_by_class = kappas.by_gender(table.gender_of_identity)
    logc_by_class = _normalizers_by_class(table.dim, kappa_by_class)
    q = _class_logits(zb, table, kappa_by_class, logc_by_class)
    return q[0] if single else q


def _softmax_ce_with_grads(
    batch: LossBatch,
    table: IdentityTable,
    kappa_by_class: np.ndarray,
    logc_by_class: np.ndarray,
) -> LossAndGrads:
    _check_batch(batch, table)
    z = batch.embeddings
    y = batch.labels
    n = len(batch)
    unit_centroids, param_norms = table.normalized_centroids()
    cos = np.clip(z @ unit_centroids.T, -1.0, 1.0)
    q = logc_by_class + kappa_by_class * cos

    shifted = q - q.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(-np.mean(shifted[np.arange(n), y] - logsum))

    probs = np.exp(shifted - logsum[:, None])
    g = probs
    g[np.arange(n), y] -= 1.0
    g /= n
    g_scaled = g * kappa_by_class  # dL/dq scaled by dq/dcos

    grad_z = g_scaled @ unit_centroids
    # dq_k/dw_k passes through the normalization: project onto the tangent
    # space at mu_k, then divide by the parameter norm.
    s = g_scaled.T @ z
    grad_c = (s - np.sum(s * unit_centroids, axis=1, keepdims=True) * unit_centroids)
    grad_c /= param_norms[:, None]
    return LossAndGrads(loss=loss, grad_embeddings=grad_z, grad_centroids=grad_c)


def fair_vmf_loss(batch: LossBatch, table: IdentityTable, kappas: FairKappas) -> LossAndGrads:
    """Mean fair-vMF negative log-likelihood of a batch, with gradients.

    loss = -(1/n) sum_i logsoftmax(q_i)[y_i] over the logits of
    :func:`logits`; gradients are exact analytic derivatives w.r.t. the
    batch embeddings and the unnormalized centroid parameters.
    """
    kappa_by_class = kappas.by_gender(table.gender_of_identity)
    logc_by_class = _normalizers_by_class(table.dim, kappa_by_class)
    return _softmax_ce_with_grads(batch, table, kappa_by_class, logc_by_class)


def standard_softmax_loss(batch: LossBatch, table: IdentityTable, kappa: float) -> LossAndGrads:
    """The classical single-kappa softmax loss (no normalizer constants)."""
    kappa = float(kappa)
    if not np.isfinite(kappa) or kappa <= 0.0:
        raise ValueError(f"kappa must be a positive finite real, got {kappa!r}")
    kappa_by_class = np.full(table.num_identities, kappa)
    logc_by_class = np.zeros(table.num_identities)
    return _softmax_ce_with_grads(batch, table, kappa_by_class, logc_by_class)


def mixture_nll(embeddings, labels, table: IdentityTable, kappa_by_identity) -> float:
    """Mean negative log-likelihood with an arbitrary concentration per identity.

    With all concentrations equal this equals the standard loss up to the
    constant normalizer (which cancels inside the softmax); with
    per-gender concentrations it equals :func:`fair_vmf_loss` over the
    same records.
    """
    kappa_by_class = np.asarray(kappa_by_identity, dtype=np.float64)
    if kappa_by_class.shape != (table.num_identities,):
        raise ValueError("kappa_by_identity must give one concentration per identity")
    if np.any(~np.isfinite(kappa_by_class)) or np.any(kappa_by_class <= 0.0):
        raise ValueError("per-identity concentrations must be positive finite reals")
    batch = LossBatch(embeddings=embeddings, labels=labels)
    logc_by_class = _normalizers_by_class(table.dim, kappa_by_class)
    return _softmax_ce_with_grads(batch, table, kappa_by_class, logc_by_class).loss
