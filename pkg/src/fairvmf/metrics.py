"""Verification scores and fairness / performance metrics.

Conventions, fixed throughout:

* a pair is accepted when its cosine score satisfies ``s >= t`` and
  rejected when ``s < t``, so FAR(t) = P(s >= t | impostor) and
  FRR(t) = P(s < t | genuine);
* empirical thresholds are drawn only from observed score values plus a
  single sentinel just above the maximal cosine, and the selected
  threshold is the smallest candidate whose (max-group or pooled) FAR
  does not exceed the budget alpha — conservative and deterministic;
* the headline performance number FRR@FAR uses the pooled-FAR threshold,
  while the fairness ratios BFRR/BFAR use the threshold at which the
  worst group's FAR meets alpha;
* cross-group ratios with a zero denominator are +inf with an explicit
  flag, and 0/0 is reported as 1 with a degenerate flag — finite-sample
  artifacts stay visible, never silently clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trainer import ModelState, mlp_forward

SENTINEL_ABOVE_MAX = float(np.nextafter(1.0, 2.0))


class EmptyCategory(ValueError):
    """A (group, category) has no scores to estimate a rate from."""

    def __init__(self, group: int, category: str):
        super().__init__(f"no {category} pairs for group {group}")
        self.group = group
        self.category = category


def _as_sorted_scores(values, group: int, category: str) -> np.ndarray:
    arr = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if arr.size == 0:
        raise EmptyCategory(group, category)
    if arr[0] < -1.0 or arr[-1] > 1.0:
        raise ValueError(f"{category} scores for group {group} fall outside [-1, 1]")
    return arr


@dataclass(frozen=True)
class PairScores:
    """Sorted genuine and impostor cosine scores, partitioned by group."""

    genuine_by_group: dict[int, np.ndarray]
    impostor_by_group: dict[int, np.ndarray]

    def __post_init__(self):
        if set(self.genuine_by_group) != set(self.impostor_by_group):
            raise ValueError("genuine and impostor maps must cover the same groups")
        if not self.genuine_by_group:
            raise ValueError("at least one group is required")
        object.__setattr__(
            self,
            "genuine_by_group",
            {a: _as_sorted_scores(v, a, "genuine") for a, v in self.genuine_by_group.items()},
        )
        object.__setattr__(
            self,
            "impostor_by_group",
            {a: _as_sorted_scores(v, a, "impostor") for a, v in self.impostor_by_group.items()},
        )

    @property
    def groups(self) -> list[int]:
        return sorted(self.genuine_by_group)

    def pooled_genuine(self) -> np.ndarray:
        return np.sort(np.concatenate([self.genuine_by_group[a] for a in self.groups]))

    def pooled_impostor(self) -> np.ndarray:
        return np.sort(np.concatenate([self.impostor_by_group[a] for a in self.groups]))


def cosine_score(z1, z2) -> float:
    """Cosine similarity of two same-dimension vectors, clamped to [-1, 1]."""
    a = np.asarray(z1, dtype=np.float64)
    b = np.asarray(z2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"expected two equal-length vectors, got {a.shape} and {b.shape}")
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(float(a @ b) / denom, -1.0, 1.0))


def far(impostor_scores, t: float) -> float:
    """Empirical false acceptance rate: fraction of impostor scores >= t."""
    s = np.asarray(impostor_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("impostor score list is empty")
    return float(np.count_nonzero(s >= t) / s.size)


def frr(genuine_scores, t: float) -> float:
    """Empirical false rejection rate: fraction of genuine scores < t."""
    s = np.asarray(genuine_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("genuine score list is empty")
    return float(np.count_nonzero(s < t) / s.size)


def _far_of_sorted(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    n = sorted_scores.size
    return (n - np.searchsorted(sorted_scores, thresholds, side="left")) / n


def _frr_of_sorted(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_scores, thresholds, side="left") / sorted_scores.size


@dataclass(frozen=True)
class GlobalThreshold:
    threshold: float
    achieved_far: float


def threshold_at_global_far(scores: PairScores, alpha: float) -> GlobalThreshold:
    """Smallest candidate threshold with pooled FAR <= alpha.

    Candidates are the observed pooled impostor scores plus a sentinel
    above the maximal cosine (selected when even the largest score must
    be rejected, e.g. alpha = 0); the achieved FAR is reported.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    pooled = scores.pooled_impostor()
    candidates = np.append(np.unique(pooled), SENTINEL_ABOVE_MAX)
    fars = _far_of_sorted(pooled, candidates)
    k = int(np.argmax(fars <= alpha))
    return GlobalThreshold(threshold=float(candidates[k]), achieved_far=float(fars[k]))


@dataclass(frozen=True)
class MaxGroupThreshold:
    threshold: float
    far_by_group: dict[int, float]


def threshold_at_max_group_far(scores: PairScores, alpha: float) -> MaxGroupThreshold:
    """Smallest candidate threshold with max_a FAR_a <= alpha.

    Candidates are the union of every group's observed impostor scores
    plus the sentinel; achieved per-group FARs are reported.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    candidates = np.append(
        np.unique(np.concatenate([scores.impostor_by_group[a] for a in scores.groups])),
        SENTINEL_ABOVE_MAX,
    )
    fars = {a: _far_of_sorted(scores.impostor_by_group[a], candidates) for a in scores.groups}
    worst = np.max(np.vstack([fars[a] for a in scores.groups]), axis=0)
    k = int(np.argmax(worst <= alpha))
    return MaxGroupThreshold(
        threshold=float(candidates[k]),
        far_by_group={a: float(fars[a][k]) for a in scores.groups},
    )


def frr_at_far(scores: PairScores, alpha: float) -> float:
    """Pooled FRR at the pooled-FAR threshold (the canonical FRR@FAR)."""
    t = threshold_at_global_far(scores, alpha).threshold
    return frr(scores.pooled_genuine(), t)


def eq2_gap(scores: PairScores, alpha: float) -> float:
    """|FRR_1(t) - FRR_0(t)| at the pooled-FAR threshold."""
    if scores.groups != [0, 1]:
        raise ValueError("the FRR gap is defined for groups {0, 1}")
    t = threshold_at_global_far(scores, alpha).threshold
    return abs(frr(scores.genuine_by_group[1], t) - frr(scores.genuine_by_group[0], t))


def _ratio(numer: float, denom: float, name: str, flags: list[str]) -> float:
    if denom == 0.0 and numer == 0.0:
        flags.append(f"{name}_degenerate")
        return 1.0
    if denom == 0.0:
        flags.append(f"{name}_inf")
        return math.inf
    return numer / denom


@dataclass(frozen=True)
class FairnessReport:
    """All metrics at one FAR budget alpha.

    ``threshold`` and the per-group rates refer to the max-group-FAR
    operating point; ``frr_at_far`` is the pooled performance number at
    its own pooled-FAR threshold.
    """

    alpha: float
    threshold: float
    frr_at_far: float
    bfrr: float
    bfar: float
    far_by_group: dict[int, float]
    frr_by_group: dict[int, float]
    far_ratio_1_over_0: float
    frr_ratio_1_over_0: float
    flags: tuple[str, ...] = field(default=())


def fairness_report(scores: PairScores, alpha: float) -> FairnessReport:
    """BFRR/BFAR and companion metrics at the max-group-FAR threshold."""
    if scores.groups != [0, 1]:
        raise ValueError("fairness_report requires exactly groups {0, 1}")
    at = threshold_at_max_group_far(scores, alpha)
    t = at.threshold
    fars = at.far_by_group
    frrs = {a: frr(scores.genuine_by_group[a], t) for a in scores.groups}
    flags: list[str] = []
    bfar = _ratio(max(fars.values()), min(fars.values()), "bfar", flags)
    bfrr = _ratio(max(frrs.values()), min(frrs.values()), "bfrr", flags)
    far_ratio = _ratio(fars[1], fars[0], "far_ratio", flags)
    frr_ratio = _ratio(frrs[1], frrs[0], "frr_ratio", flags)
    return FairnessReport(
        alpha=alpha,
        threshold=t,
        frr_at_far=frr_at_far(scores, alpha),
        bfrr=bfrr,
        bfar=bfar,
        far_by_group=fars,
        frr_by_group=frrs,
        far_ratio_1_over_0=far_ratio,
        frr_ratio_1_over_0=frr_ratio,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    group: int
    far: float
    frr: float


def metric_curves(scores: PairScores, thresholds=None) -> list[CurvePoint]:
    """Per-group (t, FAR_a(t), FRR_a(t)) rows over a threshold grid.

    The default grid is every distinct observed score. Rows are ordered
    by (group, t); FAR is verified nonincreasing and FRR nondecreasing
    along each group's curve.
    """
    if thresholds is None:
        thresholds = np.unique(
            np.concatenate(
                [scores.genuine_by_group[a] for a in scores.groups]
                + [scores.impostor_by_group[a] for a in scores.groups]
            )
        )
    grid = np.asarray(thresholds, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("empty threshold grid")
    grid = np.sort(grid)
    rows: list[CurvePoint] = []
    for a in scores.groups:
        fars = _far_of_sorted(scores.impostor_by_group[a], grid)
        frrs = _frr_of_sorted(scores.genuine_by_group[a], grid)
        if np.any(np.diff(fars) > 0.0):
            raise AssertionError("FAR curve must be nonincreasing in t")
        if np.any(np.diff(frrs) < 0.0):
            raise AssertionError("FRR curve must be nondecreasing in t")
        rows.extend(
            CurvePoint(threshold=float(t), group=a, far=float(fa), frr=float(fr))
            for t, fa, fr in zip(grid, fars, frrs)
        )
    return rows


# ---------------------------------------------------------------------------
# Pair construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairPolicy:
    """Exhaustive same-group pairing, optionally capped per category.

    When a category's exhaustive pair count exceeds its cap, a seeded
    uniform subset of that size is used instead (deterministic per seed).
    """

    genuine_cap: int | None = None
    impostor_cap: int | None = None
    seed: int = 0


def _genuine_pairs_for_group(z: np.ndarray, ids: np.ndarray, policy: PairPolicy,
                             rng: np.random.Generator) -> np.ndarray:
    pairs = []
    for ident in np.unique(ids):
        members = np.flatnonzero(ids == ident)
        if members.size < 2:
            continue
        iu, ju = np.triu_indices(members.size, k=1)
        pairs.append(np.column_stack([members[iu], members[ju]]))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    allpairs = np.concatenate(pairs)
    cap = policy.genuine_cap
    if cap is not None and allpairs.shape[0] > cap:
        keep = rng.choice(allpairs.shape[0], size=cap, replace=False)
        allpairs = allpairs[np.sort(keep)]
    return allpairs


def _impostor_scores_for_group(z: np.ndarray, ids: np.ndarray, policy: PairPolicy,
                               rng: np.random.Generator) -> np.ndarray:
    n = z.shape[0]
    counts = np.bincount(np.searchsorted(np.unique(ids), ids))
    total = (n * (n - 1)) // 2 - int(np.sum(counts * (counts - 1) // 2))
    cap = policy.impostor_cap
    if cap is not None and total > cap:
        # Sample distinct cross-identity index pairs without materializing all.
        chosen: set[tuple[int, int]] = set()
        scores = np.empty(cap)
        got = 0
        while got < cap:
            need = cap - got
            ii = rng.integers(0, n, size=2 * need + 16)
            jj = rng.integers(0, n, size=2 * need + 16)
            for i, j in zip(ii, jj):
                if ids[i] == ids[j]:
                    continue
                key = (int(min(i, j)), int(max(i, j)))
                if key in chosen:
                    continue
                chosen.add(key)
                scores[got] = float(z[key[0]] @ z[key[1]])
                got += 1
                if got == cap:
                    break
        return np.clip(scores, -1.0, 1.0)
    # Exhaustive, chunked over rows of the Gram matrix.
    out = []
    chunk = max(1, int(8_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = z[start:stop] @ z.T
        rows = np.arange(start, stop)[:, None]
        cols = np.arange(n)[None, :]
        mask = (cols > rows) & (ids[start:stop][:, None] != ids[None, :])
        out.append(block[mask])
    return np.clip(np.concatenate(out) if out else np.empty(0), -1.0, 1.0)


def build_pair_scores(
    embeddings,
    identity_ids,
    groups,
    model: ModelState | None = None,
    policy: PairPolicy | None = None,
) -> PairScores:
    """Exhaustive (or capped) same-group genuine and impostor cosine scores.

    Genuine pairs share an identity; impostors pair distinct identities of
    the same group. With ``model`` given, embeddings are first mapped by
    the trained network; otherwise they are scored as-is (the identity
    baseline). Deterministic: pair enumeration is index-ordered and any
    subsampling uses the policy seed.

    Raises
    ------
    EmptyCategory
        If a group lacks two identities (impostors) or any identity with
        two images (genuines).
    """
    policy = policy or PairPolicy()
    z = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(identity_ids, dtype=np.int64)
    grp = np.asarray(groups, dtype=np.int64)
    if z.ndim != 2 or ids.shape != (z.shape[0],) or grp.shape != (z.shape[0],):
        raise ValueError("embeddings (n, d), identity_ids (n,), groups (n,) required")
    if model is not None:
        z = mlp_forward(z, model)
    genuine: dict[int, np.ndarray] = {}
    impostor: dict[int, np.ndarray] = {}
    for a in sorted(np.unique(grp).tolist()):
        sel = np.flatnonzero(grp == a)
        za, ia = z[sel], ids[sel]
        if np.unique(ia).size < 2:
            raise EmptyCategory(a, "impostor")
        rng = np.random.default_rng(policy.seed)
        pairs = _genuine_pairs_for_group(za, ia, policy, rng)
        if pairs.shape[0] == 0:
            raise EmptyCategory(a, "genuine")
        genuine[a] = np.clip(np.sum(za[pairs[:, 0]] * za[pairs[:, 1]], axis=1), -1.0, 1.0)
        impostor[a] = _impostor_scores_for_group(za, ia, policy, rng)
    return PairScores(genuine_by_group=genuine, impostor_by_group=impostor)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

REPORT_CSV_HEADER = (
    "alpha,threshold,frr_at_far,bfrr,bfar,far0,far1,frr0,frr1,far_ratio,frr_ratio,flags"
)

CURVES_CSV_HEADER = "t,group,far,frr"


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def report_csv_row(report: FairnessReport) -> str:
    """One report as a CSV row under :data:`REPORT_CSV_HEADER`."""
    fields = [
        _fmt(report.alpha),
        _fmt(report.threshold),
        _fmt(report.frr_at_far),
        _fmt(report.bfrr),
        _fmt(report.bfar),
        _fmt(report.far_by_group[0]),
        _fmt(report.far_by_group[1]),
        _fmt(report.frr_by_group[0]),
        _fmt(report.frr_by_group[1]),
        _fmt(report.far_ratio_1_over_0),
        _fmt(report.frr_ratio_1_over_0),
        ";".join(report.flags),
    ]
    return ",".join(fields)


def curves_csv(rows: list[CurvePoint]) -> str:
    """Curve table as CSV text under ``t,group,far,frr``."""
    lines = [CURVES_CSV_HEADER]
    lines += [f"{_fmt(r.threshold)},{r.group},{_fmt(r.far)},{_fmt(r.frr)}" for r in rows]
    return "\n".join(lines) + "\n"
