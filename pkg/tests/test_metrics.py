"""Tests for verification metrics against hand cases and the brute-force oracle."""

import math

import numpy as np
import pytest

import _oracles as bf
from fairvmf.metrics import (
    CURVES_CSV_HEADER,
    REPORT_CSV_HEADER,
    SENTINEL_ABOVE_MAX,
    EmptyCategory,
    FairnessReport,
    PairPolicy,
    PairScores,
    build_pair_scores,
    cosine_score,
    curves_csv,
    eq2_gap,
    fairness_report,
    far,
    frr,
    frr_at_far,
    metric_curves,
    report_csv_row,
    threshold_at_global_far,
    threshold_at_max_group_far,
)


def make_scores(g0, g1, i0, i1):
    return PairScores(
        genuine_by_group={0: np.array(g0, float), 1: np.array(g1, float)},
        impostor_by_group={0: np.array(i0, float), 1: np.array(i1, float)},
    )


def random_micro_scores(rng):
    values = np.linspace(-0.9, 0.9, 7)
    def draw():
        return rng.choice(values, size=rng.integers(1, 13))
    return make_scores(draw(), draw(), draw(), draw())


class TestElementary:
    def test_cosine_score(self):
        z = np.array([0.6, 0.8])
        assert cosine_score(z, z) == 1.0
        assert cosine_score(z, -z) == -1.0
        assert cosine_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_far_hand_case(self):
        assert far([0.9, 0.5, 0.1, -0.2], 0.4) == 0.5
        assert far([0.9, 0.5, 0.1, -0.2], -1.0) == 1.0

    def test_frr_hand_case(self):
        assert frr([0.9, 0.5], 0.7) == 0.5
        assert frr([0.9, 0.5], -1.0) == 0.0

    def test_empty_lists_rejected(self):
        with pytest.raises(ValueError):
            far([], 0.0)
        with pytest.raises(ValueError):
            frr([], 0.0)

    def test_pair_scores_validation(self):
        with pytest.raises(ValueError):
            make_scores([0.1], [0.2], [1.5], [0.0])
        with pytest.raises(EmptyCategory):
            make_scores([0.1], [], [0.0], [0.0])
        with pytest.raises(ValueError):
            PairScores(genuine_by_group={0: np.array([0.1])}, impostor_by_group={})


class TestThresholds:
    def test_global_hand_case(self):
        s = make_scores([0.9], [0.8], [0.5, 0.3], [0.1])
        got = threshold_at_global_far(s, 1.0 / 3.0)
        assert got.threshold == 0.5
        assert got.achieved_far == pytest.approx(1.0 / 3.0)

    def test_global_alpha_one_and_zero(self):
        s = make_scores([0.9], [0.8], [0.5, 0.3], [0.1])
        assert threshold_at_global_far(s, 1.0).threshold == 0.1
        assert threshold_at_global_far(s, 1.0).achieved_far == 1.0
        got = threshold_at_global_far(s, 0.0)
        assert got.threshold == SENTINEL_ABOVE_MAX
        assert got.achieved_far == 0.0

    def test_max_group_hand_case(self):
        s = make_scores([0.9], [0.9], [0.5, 0.3, 0.1], [0.7, 0.6, 0.2])
        got = threshold_at_max_group_far(s, 1.0 / 3.0)
        assert got.threshold == 0.7
        assert got.far_by_group[0] == 0.0
        assert got.far_by_group[1] == pytest.approx(1.0 / 3.0)

    def test_max_group_symmetric_matches_global(self):
        imp = [0.5, 0.3, 0.1, -0.4]
        s = make_scores([0.9], [0.9], imp, imp)
        for alpha in [0.0, 0.25, 0.5, 1.0]:
            assert (
                threshold_at_max_group_far(s, alpha).threshold
                == threshold_at_global_far(s, alpha).threshold
            )

    def test_max_group_alpha_one_is_min_score(self):
        s = make_scores([0.9], [0.9], [0.5, 0.3], [0.7, -0.2])
        assert threshold_at_max_group_far(s, 1.0).threshold == -0.2

    def test_tightness(self):
        """The next-smaller candidate threshold violates the budget."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = random_micro_scores(rng)
            alpha = float(rng.choice([0.05, 0.2, 1.0 / 3.0, 0.6]))
            got = threshold_at_max_group_far(s, alpha)
            candidates = bf.bf_candidates(*[s.impostor_by_group[a] for a in s.groups])
            below = [t for t in candidates if t < got.threshold]
            assert max(got.far_by_group.values()) <= alpha
            if below:
                t_prev = below[-1]
                worst_prev = max(
                    far(s.impostor_by_group[a], t_prev) for a in s.groups
                )
                assert worst_prev > alpha

    def test_alpha_domain(self):
        s = make_scores([0.9], [0.8], [0.5], [0.1])
        with pytest.raises(ValueError):
            threshold_at_global_far(s, -0.1)
        with pytest.raises(ValueError):
            threshold_at_max_group_far(s, 1.5)


class TestHeadlineMetrics:
    def test_frr_at_far_hand(self):
        s = make_scores([0.9, 0.2], [0.8, 0.4], [0.5, 0.3], [0.1])
        # alpha = 1/3 -> t = 0.5; pooled genuines {0.9, 0.2, 0.8, 0.4}: 2 below
        assert frr_at_far(s, 1.0 / 3.0) == 0.5
        assert frr_at_far(s, 1.0) == frr(s.pooled_genuine(), 0.1)

    def test_eq2_gap(self):
        same = make_scores([0.9, 0.2], [0.9, 0.2], [0.5], [0.5])
        assert eq2_gap(same, 0.5) == 0.0
        s = make_scores([1.0, 1.0], [0.8, 0.2], [0.5, 0.3], [0.1])
        t = threshold_at_global_far(s, 1.0 / 3.0).threshold
        assert eq2_gap(s, 1.0 / 3.0) == frr(s.genuine_by_group[1], t)

    def test_bfrr_arithmetic(self):
        """FRR0 = 0.01, FRR1 = 0.04 at the operating point -> BFRR = 4."""
        g0 = [0.0] * 1 + [1.0] * 99  # 1 of 100 below t=0.5
        g1 = [0.0] * 4 + [1.0] * 96
        s = make_scores(g0, g1, [0.4, 0.3], [0.45, 0.2])
        rep = fairness_report(s, 0.5)
        assert rep.threshold == 0.4  # smallest candidate with both FARs <= 1/2
        assert rep.bfrr == pytest.approx(4.0)

    def test_identical_groups_unit_ratios(self):
        s = make_scores([0.9, 0.2], [0.9, 0.2], [0.5, -0.1], [0.5, -0.1])
        rep = fairness_report(s, 0.5)
        assert rep.bfrr == 1.0
        assert rep.bfar == 1.0
        assert rep.flags == ()

    def test_infinite_bfar_flagged(self):
        """FAR0 = 0 with FAR1 > 0 -> BFAR = +inf, flagged."""
        s = make_scores([0.9], [0.9], [0.5, 0.3, 0.1], [0.7, 0.6, 0.2])
        rep = fairness_report(s, 1.0 / 3.0)
        assert math.isinf(rep.bfar)
        assert "bfar_inf" in rep.flags
        assert "far_ratio_inf" in rep.flags

    def test_degenerate_ratio_is_one(self):
        """Both FARs zero at the sentinel -> ratio 1 with degenerate flag."""
        s = make_scores([0.9], [0.8], [0.5], [0.4])
        rep = fairness_report(s, 0.0)
        assert rep.bfar == 1.0
        assert "bfar_degenerate" in rep.flags

    def test_relabel_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            s = random_micro_scores(rng)
            alpha = float(rng.choice([0.2, 1.0 / 3.0, 0.7]))
            rep = fairness_report(s, alpha)
            swapped = make_scores(
                s.genuine_by_group[1], s.genuine_by_group[0],
                s.impostor_by_group[1], s.impostor_by_group[0],
            )
            rep2 = fairness_report(swapped, alpha)
            assert rep2.bfar == rep.bfar
            assert rep2.bfrr == rep.bfrr
            if 0.0 < rep.far_ratio_1_over_0 < math.inf:
                assert rep2.far_ratio_1_over_0 == pytest.approx(1.0 / rep.far_ratio_1_over_0)
            if 0.0 < rep.frr_ratio_1_over_0 < math.inf:
                assert rep2.frr_ratio_1_over_0 == pytest.approx(1.0 / rep.frr_ratio_1_over_0)

    def test_monotone_transform_invariance(self):
        """Rates and ratios depend only on score ranks."""
        rng = np.random.default_rng(2)
        transforms = [lambda x: x**3, lambda x: np.tanh(2.0 * x) / math.tanh(2.0)]
        for _ in range(20):
            s = random_micro_scores(rng)
            alpha = float(rng.choice([0.2, 0.5]))
            rep = fairness_report(s, alpha)
            for tf in transforms:
                s2 = make_scores(
                    tf(s.genuine_by_group[0]), tf(s.genuine_by_group[1]),
                    tf(s.impostor_by_group[0]), tf(s.impostor_by_group[1]),
                )
                rep2 = fairness_report(s2, alpha)
                assert rep2.bfar == rep.bfar
                assert rep2.bfrr == rep.bfrr
                assert rep2.frr_at_far == rep.frr_at_far
                assert rep2.far_by_group == rep.far_by_group
                assert rep2.frr_by_group == rep.frr_by_group


class TestOracleEquivalence:
    def test_500_random_micro_sets(self):
        """Every metric equals the exhaustive threshold-scan oracle exactly."""
        rng = np.random.default_rng(3)
        alphas = [0.0, 0.05, 1.0 / 6.0, 1.0 / 3.0, 0.5, 1.0]
        for trial in range(500):
            s = random_micro_scores(rng)
            alpha = alphas[trial % len(alphas)]
            gx = {a: s.genuine_by_group[a].tolist() for a in (0, 1)}
            ix = {a: s.impostor_by_group[a].tolist() for a in (0, 1)}

            t_want, far_want = bf.bf_threshold_at_global_far(ix, alpha)
            got = threshold_at_global_far(s, alpha)
            assert got.threshold == t_want
            assert got.achieved_far == far_want

            assert frr_at_far(s, alpha) == bf.bf_frr_at_far(gx, ix, alpha)
            assert eq2_gap(s, alpha) == bf.bf_eq2_gap(gx, ix, alpha)

            want = bf.bf_fairness_numbers(gx, ix, alpha)
            rep = fairness_report(s, alpha)
            assert rep.threshold == want["threshold"]
            assert rep.far_by_group == want["far"]
            assert rep.frr_by_group == want["frr"]
            assert rep.bfar == want["bfar"]
            assert rep.bfrr == want["bfrr"]
            assert rep.far_ratio_1_over_0 == want["far_ratio"]
            assert rep.frr_ratio_1_over_0 == want["frr_ratio"]
            assert rep.frr_at_far == want["frr_at_far"]
            for name, flagged in want["flags"].items():
                assert (name in rep.flags) == flagged

            for point in metric_curves(s):
                assert point.far == bf.bf_far(ix[point.group], point.threshold)
                assert point.frr == bf.bf_frr(gx[point.group], point.threshold)


class TestCurves:
    def test_monotone_on_random_inputs(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            rows = metric_curves(random_micro_scores(rng))
            for a in (0, 1):
                fa = [r.far for r in rows if r.group == a]
                fr = [r.frr for r in rows if r.group == a]
                assert all(y <= x for x, y in zip(fa, fa[1:]))
                assert all(y >= x for x, y in zip(fr, fr[1:]))

    def test_explicit_grid_and_empty_grid(self):
        s = make_scores([0.9, 0.2], [0.8], [0.5, 0.3], [0.1])
        rows = metric_curves(s, thresholds=[0.0, 0.4])
        assert len(rows) == 4
        with pytest.raises(ValueError):
            metric_curves(s, thresholds=[])


class TestBuildPairScores:
    def small_dataset(self):
        # one group: 2 identities x 2 images
        z = np.array([[1.0, 0.0], [0.96, 0.28], [0.0, 1.0], [-0.28, 0.96]])
        ids = np.array([0, 0, 1, 1])
        groups = np.zeros(4, dtype=int)
        return z, ids, groups

    def test_pair_counting(self):
        z, ids, groups = self.small_dataset()
        s = build_pair_scores(z, ids, groups)
        assert s.genuine_by_group[0].size == 2
        assert s.impostor_by_group[0].size == 4

    def test_counts_match_combinatorial_oracle(self):
        """3 identities with 2/3/4 images: C(2,2)+C(3,2)+C(4,2) genuine,
        (2*3 + 2*4 + 3*4) impostor."""
        rng = np.random.default_rng(5)
        sizes = [2, 3, 4]
        z = rng.standard_normal((sum(sizes), 5))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        ids = np.repeat(np.arange(3), sizes)
        s = build_pair_scores(z, ids, np.zeros(sum(sizes), int))
        assert s.genuine_by_group[0].size == 1 + 3 + 6
        assert s.impostor_by_group[0].size == 6 + 8 + 12

    def test_scores_match_direct_enumeration(self):
        z, ids, groups = self.small_dataset()
        s = build_pair_scores(z, ids, groups)
        want_genuine = sorted([float(z[0] @ z[1]), float(z[2] @ z[3])])
        want_impostor = sorted(
            float(z[i] @ z[j]) for i in (0, 1) for j in (2, 3)
        )
        np.testing.assert_allclose(s.genuine_by_group[0], want_genuine)
        np.testing.assert_allclose(s.impostor_by_group[0], want_impostor)

    def test_subsample_deterministic(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((40, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        ids = np.repeat(np.arange(8), 5)
        groups = np.zeros(40, int)
        policy = PairPolicy(genuine_cap=10, impostor_cap=25, seed=11)
        a = build_pair_scores(z, ids, groups, policy=policy)
        b = build_pair_scores(z, ids, groups, policy=policy)
        assert a.genuine_by_group[0].size == 10
        assert a.impostor_by_group[0].size == 25
        assert a.genuine_by_group[0].tobytes() == b.genuine_by_group[0].tobytes()
        assert a.impostor_by_group[0].tobytes() == b.impostor_by_group[0].tobytes()
        # capped scores are a subset of the exhaustive ones
        full = build_pair_scores(z, ids, groups)
        assert set(np.round(a.impostor_by_group[0], 12)) <= set(np.round(full.impostor_by_group[0], 12))

    def test_empty_categories(self):
        z = np.eye(3)
        with pytest.raises(EmptyCategory) as e:
            build_pair_scores(z, np.array([0, 0, 0]), np.zeros(3, int))
        assert e.value.category == "impostor"
        with pytest.raises(EmptyCategory) as e:
            build_pair_scores(z, np.array([0, 1, 2]), np.zeros(3, int))
        assert e.value.category == "genuine"


class TestCsv:
    def test_report_row_format(self):
        rep = FairnessReport(
            alpha=0.01, threshold=0.42, frr_at_far=0.125, bfrr=2.0, bfar=math.inf,
            far_by_group={0: 0.0, 1: 0.01}, frr_by_group={0: 0.1, 1: 0.2},
            far_ratio_1_over_0=math.inf, frr_ratio_1_over_0=2.0,
            flags=("bfar_inf", "far_ratio_inf"),
        )
        row = report_csv_row(rep)
        assert REPORT_CSV_HEADER.count(",") == row.count(",")
        cells = row.split(",")
        assert cells[0] == "0.01"
        assert cells[4] == "inf"
        assert cells[-1] == "bfar_inf;far_ratio_inf"

    def test_curves_csv(self):
        s = make_scores([0.9], [0.8], [0.5], [0.1])
        text = curves_csv(metric_curves(s))
        lines = text.strip().splitlines()
        assert lines[0] == CURVES_CSV_HEADER
        assert len(lines) == 1 + 2 * 4
