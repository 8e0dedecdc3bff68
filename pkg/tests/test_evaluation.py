import itertools

import numpy as np
import pytest

from netresp.datamodel import SubjectFeatures
from netresp.evaluation import (
    EvalConfig,
    average_precision,
    box_stats,
    chance_level,
    f1_macro,
    macro_pr_auc,
    permutation_baseline,
    run_experiment,
    stratified_kfold,
)
from netresp.kernels import PabsKernelParams
from netresp.svm import SvmConfig
from oracles import ap_step_oracle, worst_case_ap


class TestStratifiedKfold:
    def test_balanced_two_class_exact_split(self):
        labels = ["a"] * 5 + ["b"] * 5
        folds = stratified_kfold(labels, 5, seed=0)
        for f in range(5):
            members = [labels[i] for i in np.flatnonzero(folds == f)]
            assert sorted(members) == ["a", "b"]

    def test_deterministic_by_seed(self):
        labels = ["a"] * 12 + ["b"] * 7
        assert np.array_equal(
            stratified_kfold(labels, 4, seed=3), stratified_kfold(labels, 4, seed=3)
        )
        assert not np.array_equal(
            stratified_kfold(labels, 4, seed=3), stratified_kfold(labels, 4, seed=4)
        )

    def test_small_class_rejected(self):
        labels = ["a"] * 10 + ["b"] * 3
        with pytest.raises(ValueError, match="smaller k"):
            stratified_kfold(labels, 5, seed=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_per_class_counts_differ_by_at_most_one(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.choice(["a", "b", "c"], p=[0.5, 0.4, 0.1], size=60)
        while min((labels == c).sum() for c in "abc") < 4:
            labels = rng.choice(["a", "b", "c"], p=[0.5, 0.4, 0.1], size=60)
        folds = stratified_kfold(labels, 4, seed=seed)
        for cls in "abc":
            counts = [np.sum((folds == f) & (labels == cls)) for f in range(4)]
            assert max(counts) - min(counts) <= 1


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([1, 1, 0, 0], [4.0, 3.0, 2.0, 1.0]) == 1.0

    def test_hand_computed_case(self):
        ap = average_precision([1, 0, 1], [0.9, 0.8, 0.7])
        assert abs(ap - 5.0 / 6.0) < 1e-12

    def test_worst_case_formula(self):
        for n, p in [(6, 2), (8, 3), (7, 1)]:
            labels = [0] * (n - p) + [1] * p
            scores = list(range(n, 0, -1))  # negatives ranked first
            ap = average_precision(labels, [float(s) for s in scores])
            assert abs(ap - worst_case_ap(p, n)) < 1e-12

    def test_matches_enumeration_oracle_all_labelings(self):
        scores = [8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]
        for n in range(2, 9):
            for bits in itertools.product([0, 1], repeat=n):
                if sum(bits) in (0, n):
                    continue
                ap = average_precision(list(bits), scores[:n])
                assert abs(ap - ap_step_oracle(bits, scores[:n])) < 1e-12

    def test_ties_broken_by_original_order(self):
        # tie between a negative (first) and a positive (second): stable
        # order ranks the negative first
        ap = average_precision([0, 1], [1.0, 1.0])
        assert ap == 0.5
        ap2 = average_precision([1, 0], [1.0, 1.0])
        assert ap2 == 1.0

    def test_monotone_transform_invariance_exact_on_dyadic(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            labels = rng.integers(0, 2, size=12)
            if labels.sum() in (0, 12):
                continue
            scores = rng.integers(-64, 64, size=12).astype(np.float64)
            base = average_precision(labels, scores)
            assert average_precision(labels, scores / 4.0 + 3.0) == base
            assert average_precision(labels, scores * 16.0) == base

    def test_monotone_transform_invariance_smooth(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, size=10)
        labels[0], labels[1] = 1, 0
        scores = np.linspace(-3, 3, 10) + rng.uniform(0.001, 0.01, 10)
        base = average_precision(labels, scores)
        assert abs(average_precision(labels, np.arctan(scores)) - base) < 1e-12
        assert abs(average_precision(labels, np.exp(scores)) - base) < 1e-12

    def test_degenerate_single_class(self):
        with pytest.raises(ValueError, match="positive and a negative"):
            average_precision([1, 1], [0.2, 0.1])


class TestMacroPrAuc:
    def test_perfect_scores(self):
        labels = np.array(["a", "b", "c"])
        scores = np.eye(3)
        assert macro_pr_auc(labels, scores, ("a", "b", "c")) == 1.0

    def test_two_class_mean_of_complementary_aps(self):
        labels = np.array(["p", "q", "p", "q"])
        scores = np.array([[0.9, 0.1], [0.4, 0.6], [0.3, 0.7], [0.2, 0.8]])
        ap_p = average_precision((labels == "p").astype(float), scores[:, 0])
        ap_q = average_precision((labels == "q").astype(float), scores[:, 1])
        macro = macro_pr_auc(labels, scores, ("p", "q"))
        assert abs(macro - (ap_p + ap_q) / 2) < 1e-12

    def test_random_scores_match_monte_carlo_chance_oracle(self):
        # ranking-AP under random scores has a small-sample bias above
        # prevalence, so chance is calibrated by an independent Monte-Carlo
        # oracle at this size
        sizes = {"AD": 5, "MS": 5, "NR": 1}
        labels = np.array([c for c, n in sizes.items() for _ in range(n)])
        class_set = ("AD", "MS", "NR")
        rng = np.random.default_rng(2)
        vals = [
            macro_pr_auc(labels, rng.standard_normal((len(labels), 3)), class_set)
            for _ in range(100)
        ]
        oracle_rng = np.random.default_rng(999)
        oracle_vals = []
        for _ in range(200):
            per_class = []
            for cls in class_set:
                y = (labels == cls).astype(int)
                order = oracle_rng.permutation(len(labels))
                per_class.append(ap_step_oracle(y[order], np.arange(len(labels), 0, -1.0)))
            oracle_vals.append(np.mean(per_class))
        assert abs(np.mean(vals) - np.mean(oracle_vals)) < 0.1

    def test_random_scores_near_prevalence_at_larger_size(self):
        sizes = {"AD": 24, "MS": 22, "NR": 4}
        labels = np.array([c for c, n in sizes.items() for _ in range(n)])
        class_set = ("AD", "MS", "NR")
        rng = np.random.default_rng(3)
        vals = [
            macro_pr_auc(labels, rng.standard_normal((len(labels), 3)), class_set)
            for _ in range(100)
        ]
        assert abs(np.mean(vals) - chance_level(labels, class_set)) < 0.1

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(4)
        labels = np.array(["a"] * 6 + ["b"] * 5 + ["c"] * 4)
        scores = rng.standard_normal((labels.size, 3))
        base = macro_pr_auc(labels, scores, ("a", "b", "c"))
        # consistently permute class identities and score columns
        swap = {"a": "c", "b": "a", "c": "b"}
        relabeled = np.array([swap[x] for x in labels])
        reordered = scores[:, [1, 2, 0]]  # column j now scores swap-inverse class
        assert abs(macro_pr_auc(relabeled, reordered, ("a", "b", "c")) - base) < 1e-12

    def test_missing_class_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            macro_pr_auc(np.array(["a", "a", "b"]), np.zeros((3, 3)), ("a", "b", "c"))


class TestF1Macro:
    def test_perfect_predictions(self):
        labels = np.array(["a", "b", "a"])
        assert f1_macro(labels, labels) == 1.0

    def test_symmetric_confusion(self):
        # per class: TP=1, FP=1, FN=1 -> F1 = 0.5 each
        labels = np.array(["a", "a", "b", "b"])
        preds = np.array(["a", "b", "a", "b"])
        assert abs(f1_macro(labels, preds) - 0.5) < 1e-12

    def test_all_one_class_on_balanced_data(self):
        labels = np.array(["a"] * 6 + ["b"] * 6)
        preds = np.array(["a"] * 12)
        assert abs(f1_macro(labels, preds) - 1.0 / 3.0) < 1e-12

    def test_absent_class_contributes_zero(self):
        labels = np.array(["a", "a", "b", "b"])
        preds = np.array(["a", "a", "b", "b"])
        assert abs(f1_macro(labels, preds, ("a", "b", "c")) - 2.0 / 3.0) < 1e-12

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        labels = rng.choice(["a", "b", "c"], size=30)
        preds = rng.choice(["a", "b", "c"], size=30)
        swap = {"a": "z", "b": "y", "c": "x"}
        relabeled = f1_macro(
            np.array([swap[x] for x in labels]), np.array([swap[x] for x in preds])
        )
        assert abs(f1_macro(labels, preds) - relabeled) < 1e-12


class TestBoxStats:
    def test_quartiles_and_whiskers(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
        s = box_stats(x)
        assert s.median == 3.0
        assert s.q1 == 2.0 and s.q3 == 4.0
        assert s.whisker_lo == 1.0
        assert s.whisker_hi == 4.0  # 100 is an outlier beyond 1.5 IQR


def _planted_features(n_per_class, v=80, k=4, seed=0, effect=2.0):
    """Directly constructed features with a class-separating component 0."""
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((k, v))
    patterns = {"AD": rng.standard_normal(v), "MS": rng.standard_normal(v), "NR": rng.standard_normal(v)}
    feats, labels = [], []
    for cls, n in n_per_class.items():
        for _ in range(n):
            maps = base + 0.3 * rng.standard_normal((k, v))
            maps[0] = maps[0] + effect * patterns[cls]
            tc = rng.standard_normal((30, k))
            feats.append(SubjectFeatures(spatial_maps=maps, time_courses=tc))
            labels.append(cls)
    return feats, labels


class TestRunExperiment:
    def test_report_shape_and_range(self):
        feats, labels = _planted_features({"AD": 4, "MS": 4, "NR": 4}, seed=1)
        cfg = EvalConfig(outer_folds=2, repeats=1, seed=0)
        report = run_experiment(feats, labels, [0, 1], PabsKernelParams(), SvmConfig(), cfg)
        assert len(report.rows) == 2
        for row in report.rows:
            assert 0.0 <= row.macro_pr_auc <= 1.0
            assert 0.0 <= row.macro_f1 <= 1.0
            assert len(row.per_class_ap) == 3

    def test_planted_signal_detected(self):
        feats, labels = _planted_features({"AD": 8, "MS": 8, "NR": 6}, seed=2)
        cfg = EvalConfig(outer_folds=3, repeats=2, seed=1)
        report = run_experiment(feats, labels, [0], PabsKernelParams(), SvmConfig(), cfg)
        assert np.median(report.metric_values("macro_pr_auc")) >= 0.9

    def test_deterministic_csv_bytes(self):
        feats, labels = _planted_features({"AD": 5, "MS": 5, "NR": 5}, seed=3)
        cfg = EvalConfig(outer_folds=2, repeats=3, seed=9)
        r1 = run_experiment(feats, labels, [0, 2], PabsKernelParams(), SvmConfig(), cfg)
        r2 = run_experiment(feats, labels, [0, 2], PabsKernelParams(), SvmConfig(), cfg)
        assert r1.to_report_csv() == r2.to_report_csv()
        assert r1.to_summary_csv() == r2.to_summary_csv()

    def test_aggregate_count_is_folds_times_repeats(self):
        feats, labels = _planted_features({"AD": 5, "MS": 5, "NR": 5}, seed=4)
        cfg = EvalConfig(outer_folds=3, repeats=4, seed=2)
        report = run_experiment(feats, labels, [0], PabsKernelParams(), SvmConfig(), cfg)
        assert len(report.rows) == 12
        csv = report.to_report_csv().strip().splitlines()
        assert len(csv) == 1 + 12 * (2 + 3)  # header + rows x metrics

    def test_label_outside_class_set_rejected(self):
        feats, labels = _planted_features({"AD": 5, "MS": 5, "NR": 5}, seed=5)
        labels[0] = "CTRL"
        with pytest.raises(ValueError, match="outside class_set"):
            run_experiment(feats, labels, [0], PabsKernelParams(), SvmConfig(), EvalConfig())

    def test_test_subjects_never_influence_training_kernel(self):
        # kernel entries are pairwise: dropping any subject leaves the
        # remaining block bit-identical
        from netresp.kernels import build_kernel_matrix

        feats, labels = _planted_features({"AD": 4, "MS": 4, "NR": 4}, seed=6)
        params = PabsKernelParams(spectrum_fix="none")
        full = build_kernel_matrix(feats, [0, 1], params).values
        keep = list(range(len(feats)))
        keep.remove(5)
        reduced = build_kernel_matrix([feats[i] for i in keep], [0, 1], params).values
        np.testing.assert_array_equal(full[np.ix_(keep, keep)], reduced)


class TestPermutationBaseline:
    def test_permuted_labels_sit_near_chance(self):
        feats, labels = _planted_features({"AD": 6, "MS": 6, "NR": 4}, seed=7)
        cfg = EvalConfig(outer_folds=2, repeats=1, seed=3)
        base = permutation_baseline(
            feats, labels, [0], PabsKernelParams(), SvmConfig(), cfg, rounds=8, seed=1
        )
        assert abs(base.mean - chance_level(labels, cfg.class_set)) < 0.15
        assert len(base.scores) == 8
        assert base.p95 >= base.mean
