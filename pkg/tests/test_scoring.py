import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epr_spatial.exceptions import DiagnosticError
from epr_spatial.scoring import (
    ScoreReport, auc_bruteforce, crps_sample, crps_sorted, hellinger_bernoulli,
    hellinger_per_location, interval_score, mspe, roc_auc,
)

# CRPS of N(0, 1) at 0: 2 phi(0) - 1/sqrt(pi)
NORMAL_CRPS_AT_0 = 0.233694977255109
# H(Bern(0.5), Bern(0.51)) from the Bhattacharyya form, 30 digits (mpmath), frozen
HD_HALF = 0.00707150983261957


def test_mspe_examples():
    assert mspe([1, 2, 3], [1, 2, 3]) == 0.0
    assert mspe([0, 0], [1, -3]) == 5.0
    with pytest.raises(ValueError):
        mspe([1, 2], [1])


def test_crps_examples():
    assert crps_sample([2.0], 2.0) == 0.0
    assert crps_sample([0.0, 1.0], 0.5) == pytest.approx(0.25)
    assert crps_sample([3.0], 1.0) == 2.0


def test_crps_normal_limit():
    x = np.random.default_rng(0).standard_normal(4000)
    assert crps_sorted(x, 0.0) == pytest.approx(NORMAL_CRPS_AT_0, abs=0.02)
    assert NORMAL_CRPS_AT_0 == pytest.approx(2 / math.sqrt(2 * math.pi) - 1 / math.sqrt(math.pi), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(-1e3, 1e3))
def test_crps_sorted_matches_double_sum(xs, z):
    assert crps_sorted(xs, z) == pytest.approx(crps_sample(xs, z), rel=1e-10, abs=1e-9)


def test_crps_vector_form():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 4))
    z = rng.standard_normal(4)
    got = crps_sorted(x, z)
    np.testing.assert_allclose(got, [crps_sample(x[:, j], z[j]) for j in range(4)], rtol=1e-12)


def test_hellinger_values():
    assert hellinger_per_location([0.3], [0.3])[0] == 0.0
    assert hellinger_per_location([0.0], [1.0])[0] == 1.0
    assert hellinger_per_location([0.5], [0.51])[0] == pytest.approx(HD_HALF, rel=1e-9)
    s, m = hellinger_bernoulli([0.0, 0.3], [1.0, 0.3])
    assert (s, m) == (1.0, 0.5)
    with pytest.raises(ValueError):
        hellinger_per_location([1.2], [0.5])


def test_interval_score():
    assert interval_score(0.0, 1.0, 0.5) == 1.0
    assert interval_score(0.0, 1.0, 2.0, alpha=0.05) == pytest.approx(41.0)
    assert interval_score(0.0, 1.0, -0.5, alpha=0.1) == pytest.approx(11.0)
    with pytest.raises(ValueError):
        interval_score(1.0, 0.0, 0.5)
    np.testing.assert_allclose(interval_score([0, 0], [1, 1], [0.5, 2.0]), [1.0, 41.0])


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]).auc == 0.0
    assert roc_auc([0.5, 0.5], [0, 1]).auc == 0.5
    with pytest.raises(DiagnosticError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])


def test_roc_curve_shape():
    roc = roc_auc([0.1, 0.4, 0.4, 0.9], [0, 1, 0, 1])
    assert roc.fpr[0] == 0 and roc.tpr[0] == 0 and roc.thresholds[0] == np.inf
    assert roc.fpr[-1] == 1 and roc.tpr[-1] == 1
    assert len(roc.curve) == 4  # start point plus three distinct scores
    assert np.trapezoid(roc.tpr, roc.fpr) == pytest.approx(roc.auc)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_bruteforce(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=int)
    if y.min() == y.max():
        return
    assert roc_auc(s, y).auc == pytest.approx(auc_bruteforce(s, y), abs=1e-12)


def test_auc_monotone_invariance():
    rng = np.random.default_rng(2)
    s = rng.standard_normal(200)
    y = (s + rng.standard_normal(200) > 0).astype(int)
    a = roc_auc(s, y).auc
    assert roc_auc(np.exp(3 * s), y).auc == pytest.approx(a, abs=1e-15)
    assert roc_auc(1 / (1 + np.exp(-s)), y).auc == pytest.approx(a, abs=1e-15)


def test_score_report_summary():
    r = ScoreReport()
    for v in (1.0, 2.0, 4.0):
        r.add("epr", "mspe", v)
    r.add("mcmc", "mspe", 3.0)
    s = r.summary()
    assert s[("epr", "mspe")] == pytest.approx((7 / 3, np.std([1, 2, 4], ddof=1), 3))
    assert s[("mcmc", "mspe")] == (3.0, 0.0, 1)
    r.check_finite()
    r.add("epr", "crps", float("nan"))
    with pytest.raises(DiagnosticError):
        r.check_finite()
