import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcdp.errors import InsufficientDataError, InvalidArgumentError
from diffcdp.evaluation.augment import AugmentParams, augment
from diffcdp.evaluation.metrics import (
    MetricsReport,
    auth_metrics,
    confusion,
    group_rates,
)
from diffcdp.evaluation.split import SplitSpec, largest_remainder, split_by_template, split_ids
from diffcdp.synthcdp import build_dataset, default_classes, gen_template


def test_default_split_sizes():
    m = build_dataset(default_classes(), 120, seed=0, side=8)
    s = split_by_template(m, (0.7, 0.1, 0.2), seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (84, 12, 24)
    assert sorted(s.train + s.val + s.test) == list(range(120))
    assert SplitSpec.from_dict(s.to_dict()) == s


@settings(max_examples=50, deadline=None)
@given(n=st.integers(3, 300), seed=st.integers(0, 2**31))
def test_split_disjoint_and_complete(n, seed):
    s = split_ids(range(n), seed=seed)
    parts = [set(s.train), set(s.val), set(s.test)]
    assert all(parts)
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert set().union(*parts) == set(range(n))


def test_split_deterministic_and_seeded():
    assert split_ids(range(50), seed=1) == split_ids(range(50), seed=1)
    assert split_ids(range(50), seed=1).test != split_ids(range(50), seed=2).test


@settings(max_examples=50, deadline=None)
@given(n=st.integers(0, 500), a=st.integers(1, 10), b=st.integers(1, 10), c=st.integers(1, 10))
def test_largest_remainder(n, a, b, c):
    fr = np.array([a, b, c]) / (a + b + c)
    counts = largest_remainder(n, fr)
    assert sum(counts) == n
    assert all(abs(k - f * n) < 1 for k, f in zip(counts, fr))


def test_split_rejects_bad_fractions():
    for fr in ((0.5, 0.5), (0.7, 0.2, 0.2), (1.0, 0.0, 0.0)):
        with pytest.raises(InvalidArgumentError):
            split_ids(range(10), fr)
    with pytest.raises(InvalidArgumentError):
        split_ids(range(2))


def _pair(side=32):
    t = gen_template(0, side).pixels.astype(np.float64)
    return t, np.clip(t * 0.8 + 0.1, 0, 1)


def test_augment_noop():
    t, p = _pair()
    params = AugmentParams(n_copies=3, crop_side=32, flip_prob=0.0, photometric_prob=0.0)
    for a, b in augment((t, p), params, 0):
        assert np.array_equal(a, t) and np.array_equal(b, p)


def test_augment_keeps_template_binary_and_geometry_paired():
    t, p = _pair()
    params = AugmentParams(n_copies=8, crop_side=20, photometric_prob=0.0)
    for a, b in augment((t, p), params, 4):
        assert a.shape == b.shape == (20, 20)
        assert set(np.unique(a)) <= {0.0, 1.0}
        # the print here is an affine copy of the template, so geometry must match exactly
        np.testing.assert_allclose(b, a * 0.8 + 0.1)


def test_augment_photometric_only_touches_print():
    t, p = _pair()
    params = AugmentParams(n_copies=6, crop_side=32, flip_prob=0.0, photometric_prob=1.0)
    outs = augment((t, p), params, 1)
    assert all(np.array_equal(a, t) for a, _ in outs)
    assert any(not np.array_equal(b, p) for _, b in outs)
    assert all(b.min() >= 0 and b.max() <= 1 for _, b in outs)


def test_augment_deterministic_per_copy():
    t, p = _pair()
    a = augment((t, p), AugmentParams(n_copies=2), 9)
    b = augment((t, p), AugmentParams(n_copies=5), 9)
    for (x1, y1), (x2, y2) in zip(a, b[:2]):
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)


def test_augment_errors():
    t, p = _pair(16)
    with pytest.raises(InvalidArgumentError):
        augment((t, p), AugmentParams(crop_side=24), 0)
    with pytest.raises(InvalidArgumentError):
        augment((t, p[:8]), AugmentParams(crop_side=8), 0)
    with pytest.raises(InvalidArgumentError):
        AugmentParams(blur_kernel=(2, 4))


def _rec(true, pred, verdict=None):
    if verdict is None:
        verdict = "Authentic" if true == pred and "_" not in true else "Counterfeit"
    return {"true_label": true, "predicted_label": pred, "verdict": verdict}


def test_confusion_rows_sum_to_100():
    recs = [_rec("HP55", "HP55"), _rec("HP55", "HP76"), _rec("HP76", "HP76"), _rec("HP55_55", "HP55")]
    cm = confusion(recs, ["HP55", "HP76", "HP55_55"], ["HP55", "HP76", "HP55_55"])
    assert cm.counts == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]
    for row in cm.percent:
        assert sum(row) == pytest.approx(100.0)
    perfect = confusion([_rec(lbl, lbl) for lbl in ("A", "B", "C")])
    assert np.array_equal(np.array(perfect.percent), 100 * np.eye(3))
    with pytest.raises(InvalidArgumentError):
        confusion(recs, ["HP55"], ["HP55"])
    with pytest.raises(InvalidArgumentError):
        confusion([])


def test_auth_metrics_all_correct():
    recs = [_rec(lbl, lbl) for lbl in ("HP55", "HP76", "HP55_55", "HP76_55") for _ in range(3)]
    r = auth_metrics(recs)
    assert r.p_err == 0.0 and r.mean_p_miss == 0.0 and r.mean_p_fa == 0.0


def test_auth_metrics_worked_value():
    # P_miss 0.049 / 0.035, P_fa 0 / 0.01 / 0.01 / 0 -> 0.0235
    recs = []
    for label, n, bad in (("HP55", 1000, 49), ("HP76", 1000, 35)):
        recs += [_rec(label, label, "Counterfeit")] * bad + [_rec(label, label, "Authentic")] * (n - bad)
    for label, n, bad in (("HP55_55", 100, 0), ("HP55_76", 100, 1), ("HP76_76", 100, 1), ("HP76_55", 100, 0)):
        recs += [_rec(label, "HP55", "Authentic")] * bad + [_rec(label, label, "Counterfeit")] * (n - bad)
    r = auth_metrics(recs)
    assert r.mean_p_miss == pytest.approx(0.042)
    assert r.mean_p_fa == pytest.approx(0.005)
    assert r.p_err == pytest.approx(0.0235, abs=1e-12)
    back = MetricsReport.from_dict(r.to_dict())
    assert back.p_err == r.p_err and back.p_fa == r.p_fa


def test_auth_metrics_needs_both_populations():
    with pytest.raises(InsufficientDataError):
        auth_metrics([_rec("HP55", "HP55")])
    with pytest.raises(InsufficientDataError):
        auth_metrics([_rec("HP55_55", "HP55_55")])


def test_group_rates():
    recs = [_rec("HP55", "HP55"), _rec("HP55", "HP76"),
            _rec("HP55_55", "HP55", "Authentic"), _rec("HP76_55", "HP76_55")]
    r = auth_metrics(recs)
    g = group_rates(r, {"known": ["HP55_55"], "unseen": ["HP76_55"]})
    assert g["known"]["p_fa"] == 1.0 and g["unseen"]["p_fa"] == 0.0
    assert g["known"]["p_err"] == pytest.approx((0.5 + 1.0) / 2)
    with pytest.raises(InsufficientDataError):
        group_rates(r, {"x": ["HP76_76"]})
