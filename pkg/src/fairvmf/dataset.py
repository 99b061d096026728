"""Embedding datasets: binary container, synthetic generation, label consolidation.

File format (bit-exact, little-endian):

    magic   4 bytes  b"FVMF"
    version u32      1
    d       u32      embedding dimension
    N       u64      record count
    records N x [identity_id u32][group u8][pad 3 bytes][d x f32]

The float32 payload is the file's source of truth: a loaded dataset keeps
the raw float32 rows for byte-identical re-serialization and exposes a
float64 renormalized view for computation (rows are unit within 1e-6 on
disk, exactly unit after the load-time renormalization).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .vmf import VmfParams, sample_vmf

_MAGIC = b"FVMF"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class EmbeddingDataset:
    """N records of (embedding, identity id, per-image group label)."""

    embeddings_f32: np.ndarray
    identity_ids: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        e = np.ascontiguousarray(self.embeddings_f32, dtype="<f4")
        ids = np.ascontiguousarray(self.identity_ids, dtype=np.int64)
        grp = np.ascontiguousarray(self.groups, dtype=np.uint8)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError(f"embeddings must be (N, d) with N >= 1, got {e.shape}")
        if ids.shape != (e.shape[0],) or grp.shape != (e.shape[0],):
            raise ValueError("identity_ids and groups must have one entry per record")
        if np.any(ids < 0) or np.any(ids > 0xFFFFFFFF):
            raise ValueError("identity ids must fit in u32")
        if not np.all(np.isin(grp, (0, 1))):
            raise ValueError("group labels must be 0 or 1")
        norms = np.linalg.norm(e.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("embeddings must be unit norm within 1e-6")
        object.__setattr__(self, "embeddings_f32", e)
        object.__setattr__(self, "identity_ids", ids)
        object.__setattr__(self, "groups", grp)

    def __len__(self) -> int:
        return self.embeddings_f32.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings_f32.shape[1]

    def embeddings(self) -> np.ndarray:
        """Float64 rows renormalized to exact unit norm."""
        z = self.embeddings_f32.astype(np.float64)
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    def votes_by_identity(self) -> dict[int, np.ndarray]:
        """Per-image group labels of each identity (its raw gender votes)."""
        out: dict[int, np.ndarray] = {}
        for ident in np.unique(self.identity_ids):
            out[int(ident)] = self.groups[self.identity_ids == ident]
        return out


def write_dataset(path, ds: EmbeddingDataset) -> None:
    n, d = ds.embeddings_f32.shape
    record = np.zeros(
        n, dtype=np.dtype([("id", "<u4"), ("group", "u1"), ("pad", "u1", 3), ("emb", "<f4", d)])
    )
    record["id"] = ds.identity_ids.astype("<u4")
    record["group"] = ds.groups
    record["emb"] = ds.embeddings_f32
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, n))
        fh.write(record.tobytes())


def read_dataset(path) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError("truncated embedding file")
    magic, version, d, n = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise ValueError("not a FVMF embedding file")
    if version != _VERSION:
        raise ValueError(f"unsupported embedding file version {version}")
    dtype = np.dtype([("id", "<u4"), ("group", "u1"), ("pad", "u1", 3), ("emb", "<f4", d)])
    expected = _HEADER.size + n * dtype.itemsize
    if len(blob) != expected:
        raise ValueError(f"embedding file length {len(blob)} != expected {expected}")
    record = np.frombuffer(blob, dtype=dtype, count=n, offset=_HEADER.size)
    return EmbeddingDataset(
        embeddings_f32=record["emb"].copy(),
        identity_ids=record["id"].astype(np.int64),
        groups=record["group"].copy(),
    )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Two-group synthetic embedding geometry.

    Each group gets ``identities_per_group`` identities; identity
    centroids are either uniform on the sphere (centroid kappa 0) or
    drawn from a vMF cap around a seeded random pole (centroid kappa > 0,
    packing that group's identities closer together — the
    smaller-repulsion bias mechanism). Images of an identity are vMF
    samples around its centroid at that group's generation concentration
    (the intra-class-variance mechanism).
    """

    d: int
    identities_per_group: tuple[int, int]
    images_per_identity: int | tuple[int, int]
    kappa_gen_by_group: tuple[float, float]
    centroid_kappa_by_group: tuple[float, float] = (0.0, 0.0)
    centroid_seed: int = 0
    sample_seed: int = 1

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        ig = self.identities_per_group
        ig = (int(ig), int(ig)) if np.isscalar(ig) else (int(ig[0]), int(ig[1]))
        if min(ig) < 1:
            raise ValueError("identities_per_group must be positive")
        object.__setattr__(self, "identities_per_group", ig)
        img = self.images_per_identity
        if not np.isscalar(img):
            lo, hi = int(img[0]), int(img[1])
            if not 1 <= lo <= hi:
                raise ValueError("images_per_identity range must satisfy 1 <= lo <= hi")
            object.__setattr__(self, "images_per_identity", (lo, hi))
        elif int(img) < 1:
            raise ValueError("images_per_identity must be positive")
        else:
            object.__setattr__(self, "images_per_identity", int(img))
        for name in ("kappa_gen_by_group",):
            pair = tuple(float(v) for v in getattr(self, name))
            if min(pair) <= 0.0:
                raise ValueError(f"{name} entries must be > 0")
            object.__setattr__(self, name, pair)
        ck = tuple(float(v) for v in self.centroid_kappa_by_group)
        if min(ck) < 0.0:
            raise ValueError("centroid_kappa_by_group entries must be >= 0")
        object.__setattr__(self, "centroid_kappa_by_group", ck)


def _group_centroids(n: int, d: int, cap_kappa: float, rng: np.random.Generator) -> np.ndarray:
    if cap_kappa > 0.0:
        pole = rng.standard_normal(d)
        pole /= np.linalg.norm(pole)
        return sample_vmf(VmfParams(mu=pole, kappa=cap_kappa), n, seed=rng)
    mus = rng.standard_normal((n, d))
    return mus / np.linalg.norm(mus, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> EmbeddingDataset:
    """Deterministic synthetic dataset realizing the two bias mechanisms."""
    centroid_rng = np.random.default_rng(spec.centroid_seed)
    sample_rng = np.random.default_rng(spec.sample_seed)
    blocks: list[np.ndarray] = []
    ids: list[np.ndarray] = []
    grp: list[np.ndarray] = []
    next_id = 0
    for a in (0, 1):
        n_ids = spec.identities_per_group[a]
        centroids = _group_centroids(n_ids, spec.d, spec.centroid_kappa_by_group[a], centroid_rng)
        kappa = spec.kappa_gen_by_group[a]
        for i in range(n_ids):
            if isinstance(spec.images_per_identity, tuple):
                lo, hi = spec.images_per_identity
                count = int(sample_rng.integers(lo, hi + 1))
            else:
                count = spec.images_per_identity
            z = sample_vmf(VmfParams(mu=centroids[i], kappa=kappa), count, seed=sample_rng)
            blocks.append(z)
            ids.append(np.full(count, next_id, dtype=np.int64))
            grp.append(np.full(count, a, dtype=np.uint8))
            next_id += 1
    return EmbeddingDataset(
        embeddings_f32=np.vstack(blocks).astype("<f4"),
        identity_ids=np.concatenate(ids),
        groups=np.concatenate(grp),
    )


# ---------------------------------------------------------------------------
# Gender-label consolidation
# ---------------------------------------------------------------------------

def consolidate_gender(
    votes_by_identity: dict[int, "np.ndarray | list[int]"],
    threshold: float = 0.75,
) -> tuple[dict[int, int], list[int]]:
    """Majority-vote consolidation of per-image group labels.

    An identity is kept with its majority label iff that label's vote
    fraction is >= threshold (boundary inclusive, so 3-of-4 passes the
    default 0.75); otherwise the identity is discarded. An exact tie has
    no majority label and is discarded regardless of threshold.

    Returns (identity -> group map for kept identities, discarded ids).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    kept: dict[int, int] = {}
    discarded: list[int] = []
    for ident, votes in votes_by_identity.items():
        v = np.asarray(votes)
        if v.size == 0:
            raise ValueError(f"identity {ident} has no votes")
        ones = int(np.count_nonzero(v == 1))
        zeros = v.size - ones
        if ones == zeros:
            discarded.append(int(ident))
            continue
        majority = 1 if ones > zeros else 0
        fraction = max(ones, zeros) / v.size
        if fraction >= threshold:
            kept[int(ident)] = majority
        else:
            discarded.append(int(ident))
    return kept, sorted(discarded)


def consolidate_dataset(ds: EmbeddingDataset, threshold: float = 0.75) -> EmbeddingDataset:
    """Apply the majority-vote rule to a dataset.

    Images of discarded identities are dropped; every kept image's group
    byte is set to its identity's consolidated label.
    """
    kept, discarded = consolidate_gender(ds.votes_by_identity(), threshold)
    if not kept:
        raise ValueError("consolidation discarded every identity")
    mask = np.isin(ds.identity_ids, np.fromiter(kept, dtype=np.int64))
    groups = np.array([kept[int(i)] for i in ds.identity_ids[mask]], dtype=np.uint8)
    return EmbeddingDataset(
        embeddings_f32=ds.embeddings_f32[mask],
        identity_ids=ds.identity_ids[mask],
        groups=groups,
    )


def dense_identity_mapping(ds: EmbeddingDataset) -> tuple[np.ndarray, np.ndarray]:
    """(dense labels in 0..K-1, gender of each dense identity).

    Identity ids may be sparse in the file; training needs a dense table.
    An identity with inconsistent per-image labels has no single gender —
    consolidate first.
    """
    unique_ids, labels = np.unique(ds.identity_ids, return_inverse=True)
    gender = np.empty(unique_ids.size, dtype=np.int64)
    for k, ident in enumerate(unique_ids):
        votes = np.unique(ds.groups[ds.identity_ids == ident])
        if votes.size != 1:
            raise ValueError(
                f"identity {int(ident)} has mixed group labels; run consolidation first"
            )
        gender[k] = int(votes[0])
    return labels.astype(np.int64), gender
