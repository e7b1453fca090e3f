import math
import warnings
from itertools import combinations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlconf.association import (
    AnalysisRecord,
    RegressionResult,
    bootstrap_p_value,
    correlation_table,
    dummy_design,
    fisher_z,
    kendall_tau,
    ols,
    ols_fixed_effects,
    pearson,
    robustness_regression,
    significance_marker,
    significance_stars,
    t_cdf,
    topk_accuracy_curve,
)
from mlconf.data import DatasetStats
from mlconf.exceptions import NumericalError

# Student t CDF reference values from the closed forms for 1-4 degrees of
# freedom, evaluated with 40-digit mpmath.
T_CDF_TABLE = [
    (0.5, 1, 0.64758361765043327418),
    (-2.25, 1, 0.13312493874765657355),
    (0.5, 2, 0.66666666666666666667),
    (3.1, 2, 0.95489963493490563808),
    (-2.25, 3, 0.054969048198301262327),
    (3.1, 3, 0.97335222769283196219),
    (0.5, 4, 0.67833501840906836288),
    (-2.25, 4, 0.043822588251697343642),
]

PEARSON_X = [0.3, 1.7, 2.2, 3.9, 4.1, 5.5, 6.0, 7.25, 8.8, 9.1]
PEARSON_Y = [1.1, 0.4, 2.9, 3.3, 5.0, 4.2, 6.8, 7.7, 7.1, 9.9]


def brute_tau_b(a, b):
    """O(n^2) pair counting with tie correction."""
    conc = disc = ties_a = ties_b = 0
    for i, j in combinations(range(len(a)), 2):
        da, db = np.sign(a[i] - a[j]), np.sign(b[i] - b[j])
        if da == 0:
            ties_a += 1
        if db == 0:
            ties_b += 1
        if da * db > 0:
            conc += 1
        elif da * db < 0:
            disc += 1
    n0 = len(a) * (len(a) - 1) // 2
    return (conc - disc) / math.sqrt((n0 - ties_a) * (n0 - ties_b))


def extended_precision_ols(X, y):
    """Normal-equation solve at 50 digits."""
    with mpmath.workdps(50):
        Xm = mpmath.matrix(X.tolist())
        ym = mpmath.matrix(y.tolist())
        XtX = Xm.T * Xm
        beta = mpmath.lu_solve(XtX, Xm.T * ym)
        return np.array([float(v) for v in beta])


def test_kendall_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 2, 3], [1, 3, 2, 4]) == pytest.approx(5 / math.sqrt(30), abs=1e-15)
    assert kendall_tau([1, 2, 2, 3], [1, 3, 2, 4]) == pytest.approx(brute_tau_b([1, 2, 2, 3], [1, 3, 2, 4]), abs=1e-15)


def test_kendall_errors():
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1], [1])


def test_kendall_matches_pair_counting_on_tied_vectors():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        a = rng.integers(0, rng.integers(2, 8), n)
        b = rng.integers(0, rng.integers(2, 8), n)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert kendall_tau(a, b) == pytest.approx(brute_tau_b(a, b), abs=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40, unique=True))
def test_kendall_reversal_antisymmetry(values):
    a = np.array(values)
    b = np.random.default_rng(len(values)).permutation(a.size).astype(float)
    assert kendall_tau(a, -b) == pytest.approx(-kendall_tau(a, b), abs=1e-12)


def test_pearson_examples():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ValueError):
        pearson(x, np.ones(10))


def test_pearson_matches_two_pass_oracle():
    with mpmath.workdps(40):
        xs = [mpmath.mpf(str(v)) for v in PEARSON_X]
        ys = [mpmath.mpf(str(v)) for v in PEARSON_Y]
        mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
        sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
        sxx = sum((a - mx) ** 2 for a in xs)
        syy = sum((b - my) ** 2 for b in ys)
        oracle = float(sxy / mpmath.sqrt(sxx * syy))
    assert pearson(PEARSON_X, PEARSON_Y) == pytest.approx(oracle, abs=1e-12)


def test_fisher_z_examples():
    assert fisher_z(0.0) == 0.0
    assert fisher_z(0.5) == pytest.approx(0.54930614433405484570, abs=1e-15)
    assert fisher_z(-0.3) == -fisher_z(0.3)
    with pytest.raises(ValueError):
        fisher_z(1.5)


def test_fisher_z_clamps_perfect_correlation():
    x = np.arange(5.0)
    with pytest.warns(RuntimeWarning):
        z, flagged = fisher_z(pearson(x, x), return_flag=True)
    assert flagged
    assert z == pytest.approx(math.atanh(1 - 1e-12), rel=1e-9)


def test_fisher_z_strictly_increasing():
    r = np.linspace(-0.999, 0.999, 501)
    assert np.all(np.diff(fisher_z(r)) > 0)


@pytest.mark.parametrize("t, df, expected", T_CDF_TABLE)
def test_t_cdf_reference_values(t, df, expected):
    assert t_cdf(t, df) == pytest.approx(expected, abs=1e-10)


def test_stars_follow_thresholds():
    assert [significance_stars(p) for p in (0.005, 0.02, 0.07, 0.2, float("nan"))] == ["***", "**", "*", "", ""]


def _random_design(rng, n, p):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    return X, y


def test_ols_matches_extended_precision():
    rng = np.random.default_rng(5)
    designs = [_random_design(rng, int(rng.integers(8, 60)), int(rng.integers(2, 7))) for _ in range(49)]
    # 72-row fixed-effects layout: 6 candidates x 4 datasets x 3 classifiers, dummy coded
    cand, data, clf = np.meshgrid(np.arange(6), np.arange(4), np.arange(3), indexing="ij")
    cand, data, clf = cand.ravel()[:72], data.ravel()[:72], clf.ravel()[:72]
    X, _ = dummy_design({"c": cand.tolist(), "d": data.tolist(), "k": clf.tolist()}, {})
    designs.append((X, X @ rng.standard_normal(X.shape[1]) + 0.1 * rng.standard_normal(72)))
    for X, y in designs:
        res = ols(X, y)
        assert np.max(np.abs(res.estimates - extended_precision_ols(X, y))) < 1e-8
        # residuals are orthogonal to every column
        assert np.max(np.abs(X.T @ res.residuals)) < 1e-8


def test_ols_standard_errors_and_p_values():
    rng = np.random.default_rng(8)
    X, y = _random_design(rng, 40, 3)
    res = ols(X, y)
    sigma2 = (res.residuals**2).sum() / (40 - 3)
    se = np.sqrt(np.diag(np.linalg.inv(X.T @ X)) * sigma2)
    assert np.allclose(res.std_errors, se, rtol=1e-10)
    t = res.estimates / se
    assert np.allclose(res.p_values, 2 * (1 - t_cdf(np.abs(t), 37)), atol=1e-12)
    assert res.rmse == pytest.approx(math.sqrt(sigma2))
    assert res.stars == [significance_stars(p) for p in res.p_values]


def test_ols_errors():
    with pytest.raises(NumericalError):
        ols(np.ones((3, 3)), np.arange(3.0))
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(NumericalError):
        ols(X, np.arange(6.0))


def _records(values):
    return [AnalysisRecord(d, c, "em", k, r, 100) for (k, d, c), r in values]


def _grid():
    return [(k, d, c) for k in ("HP", "SE", "CE") for d in ("emotions", "scene") for c in ("br", "ecc")]


def test_fixed_effects_recovers_additive_construction():
    effects = {"SE": 0.1, "CE": -0.05, "scene": 0.2, "br": -0.15}
    keys = _grid()
    records = _records([(key, math.tanh(0.3 + sum(effects.get(v, 0.0) for v in key))) for key in keys])
    res = ols_fixed_effects(records)
    assert res.r2 == pytest.approx(1.0, abs=1e-12)
    assert res.coef("(Intercept)") == pytest.approx(0.3, abs=1e-10)
    assert res.coef("candidate[SE]") == pytest.approx(0.1, abs=1e-10)
    assert res.coef("candidate[CE]") == pytest.approx(-0.05, abs=1e-10)
    assert res.coef("dataset[scene]") == pytest.approx(0.2, abs=1e-10)
    assert res.coef("classifier[br]") == pytest.approx(-0.15, abs=1e-10)


def test_single_factor_two_levels_gives_mean_difference():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-0.5, 0.5, 6), rng.uniform(-0.5, 0.5, 6)
    records = [AnalysisRecord("d", "ecc", "em", "HP", r, 50) for r in a]
    records += [AnalysisRecord("d", "ecc", "em", "SE", r, 50) for r in b]
    res = ols_fixed_effects(records, factors=("candidate",))
    assert res.coef("candidate[SE]") == pytest.approx(np.arctanh(b).mean() - np.arctanh(a).mean(), abs=1e-12)


def test_fixed_effects_permutation_invariant():
    rng = np.random.default_rng(1)
    records = _records([(key, rng.uniform(-0.8, 0.8)) for key in _grid()])
    base = ols_fixed_effects(records)
    shuffled = [records[i] for i in rng.permutation(len(records))]
    other = ols_fixed_effects(shuffled, baselines={"dataset": "emotions"})
    for name in base.names:
        assert other.coef(name) == pytest.approx(base.coef(name), abs=1e-12)


def test_fixed_effects_needs_two_levels():
    records = [AnalysisRecord("d", "ecc", "em", k, 0.1 * i, 50) for i, k in enumerate(["HP", "SE", "CE"])]
    with pytest.raises(ValueError):
        ols_fixed_effects(records)


def _stats():
    rng = np.random.default_rng(3)
    return {
        f"d{i}": DatasetStats(f"d{i}", 1000, int(rng.integers(3, 20)), int(rng.integers(50, 500)), float(rng.uniform(1, 4)), int(rng.integers(10, 300)))
        for i in range(6)
    }


def _robust_records(response):
    stats = _stats()
    out = []
    for d, s in stats.items():
        for c in ("br", "ecc", "chain"):
            for m in ("em", "hs", "js"):
                for k in ("HP", "SE"):
                    out.append(AnalysisRecord(d, c, m, k, response(s, c, m, k), 100))
    return out, stats


def test_robustness_zero_response():
    records, stats = _robust_records(lambda s, c, m, k: 0.0)
    out = robustness_regression(records, stats)
    assert set(out) == {"HP", "SE"}
    for res in out.values():
        assert np.allclose(res.estimates, 0.0, atol=1e-12)
        assert res.r2 == 0.0
        assert res.n_obs == 54


def test_robustness_recovers_label_count_gradient():
    records, stats = _robust_records(lambda s, c, m, k: math.tanh(0.01 * s.n_labels))
    res = robustness_regression(records, stats)["HP"]
    assert res.coef("label_count") == pytest.approx(0.01, abs=1e-10)
    for name in ("label_comb", "label_card", "feature_count"):
        assert abs(res.coef(name)) < 1e-10


def test_robustness_matches_normal_equations():
    rng = np.random.default_rng(9)
    records, stats = _robust_records(lambda s, c, m, k: float(rng.uniform(-0.9, 0.9)))
    res = robustness_regression(records, stats)["SE"]
    rows = [r for r in records if r.candidate == "SE"]
    X, names = dummy_design(
        {"classifier": [r.classifier for r in rows], "metric": [r.metric for r in rows]},
        {"classifier": "ecc", "metric": "em"},
        numeric={
            "label_count": [stats[r.dataset].n_labels for r in rows],
            "label_comb": [stats[r.dataset].distinct_combinations for r in rows],
            "label_card": [stats[r.dataset].label_cardinality for r in rows],
            "feature_count": [stats[r.dataset].n_features for r in rows],
        },
    )
    assert names == res.names
    y = np.arctanh([r.r for r in rows])
    assert np.max(np.abs(res.estimates - extended_precision_ols(X, y))) < 1e-8


def test_regression_result_rows():
    rng = np.random.default_rng(2)
    X, y = _random_design(rng, 20, 2)
    res = ols(X, y, ["(Intercept)", "x"])
    assert isinstance(res, RegressionResult)
    rows = res.to_rows("m")
    assert [r["term"] for r in rows] == ["(Intercept)", "x", "r2", "adj_r2", "rmse", "n_obs"]
    assert res.to_dict()["n_obs"] == 20


def _group(scores, acc):
    return {("d", "ecc", "em"): {"scores": scores, "accuracy": acc}}


def test_correlation_table_identical_candidate_has_no_marker():
    rng = np.random.default_rng(0)
    hp = rng.random(80)
    acc = hp + rng.normal(0, 0.3, 80)
    recs = correlation_table(_group({"HP": hp, "SE": hp.copy()}, acc), n_boot=200, seed=1)
    se = [r for r in recs if r.candidate == "SE"][0]
    assert se.marker == ""
    assert se.r == [r for r in recs if r.candidate == "HP"][0].r


def test_correlation_table_flags_better_candidate():
    rng = np.random.default_rng(1)
    acc = rng.random(400)
    # SE equals the accuracy exactly, so its tau of 1 is clamped before Fisher z
    with pytest.warns(RuntimeWarning, match="clamped"):
        recs = correlation_table(_group({"HP": rng.random(400), "SE": acc.copy()}, acc), n_boot=1000, seed=2)
    se = [r for r in recs if r.candidate == "SE"][0]
    assert se.marker == "+++"
    assert se.diff_p_value < 0.01


def test_correlation_table_errors():
    with pytest.raises(ValueError):
        correlation_table(_group({"HP": np.arange(20.0)}, np.ones(20)), n_boot=0)
    with pytest.raises(ValueError):
        correlation_table(_group({"HP": np.arange(5.0)}, np.arange(5.0)), n_boot=0)


def test_correlation_table_is_seed_deterministic():
    rng = np.random.default_rng(4)
    groups = _group({"HP": rng.random(50), "CE": rng.random(50)}, rng.random(50))
    a = correlation_table(groups, n_boot=100, seed=7)
    b = correlation_table(groups, n_boot=100, seed=7)
    assert a == b


def test_monotone_noisy_accuracy_gives_significant_positive_tau():
    rng = np.random.default_rng(12)
    se = rng.random(300)
    acc = np.clip(se**2 + rng.normal(0, 0.15, 300), 0, 1)
    rec = correlation_table(_group({"SE": se}, acc), n_boot=1000, seed=3)[0]
    assert rec.r > 0 and rec.p_value < 0.01


def test_bootstrap_p_value_and_markers():
    assert bootstrap_p_value(np.full(100, 0.2)) == 0.0
    assert bootstrap_p_value(np.r_[np.full(50, -1.0), np.full(50, 1.0)]) == 1.0
    assert significance_marker(-0.1, 0.03) == "--"
    assert significance_marker(0.1, 0.5) == ""


def test_topk_examples():
    acc = np.array([0.2, 0.9, 0.5, 0.7, 0.1])
    curve = topk_accuracy_curve(acc, acc)
    means = [m for _, m in curve]
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert topk_accuracy_curve([0.3], [1.0]) == [(1, 1.0)]
    with pytest.raises(ValueError):
        topk_accuracy_curve([], [])


def test_topk_matches_enumeration():
    scores = [0.4, 0.9, 0.4, 0.1, 0.7]
    acc = [1.0, 0.0, 0.5, 1.0, 0.25]
    # order by score descending, ties by index: 1, 4, 0, 2, 3
    order = [1, 4, 0, 2, 3]
    expected = [(k, sum(acc[i] for i in order[:k]) / k) for k in range(1, 6)]
    assert topk_accuracy_curve(scores, acc) == pytest.approx(expected)
    assert topk_accuracy_curve(scores, acc)[-1][1] == pytest.approx(np.mean(acc))


def test_record_rejects_out_of_range_correlation():
    with pytest.raises(ValueError):
        AnalysisRecord("d", "c", "em", "HP", 1.5, 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pearson_and_kendall_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random(30), rng.random(30)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert -1 <= pearson(a, b) <= 1
        assert -1 <= kendall_tau(a, b) <= 1
