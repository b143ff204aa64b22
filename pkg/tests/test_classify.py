import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import OracleDenoiser
from diffcdp.classify import (
    ClassScores,
    Verdict,
    authenticate,
    class_error,
    class_errors,
    classify,
    probe_record,
    read_records,
    trial_draws,
    write_records,
)
from diffcdp.denoiser import init_model
from diffcdp.errors import InvalidArgumentError
from diffcdp.synthcdp import DEFAULT_LABELS, gen_template

LABELS = list(DEFAULT_LABELS)


@pytest.fixture
def template():
    return gen_template(0, 8).pixels.astype(np.float64)


def test_oracle_errors(schedule, template):
    oracle = OracleDenoiser(template, 2, schedule, bias=0.5)
    errs = class_errors(oracle, schedule, template, template, range(6), 10, 0)
    assert errs[2] == pytest.approx(0.0, abs=1e-18)
    # constant bias b on every pixel gives b^2 * pixels
    np.testing.assert_allclose(np.delete(errs, 2), 0.25 * 64, rtol=1e-12)
    c_hat, scores = classify(oracle, schedule, template, template, range(6), 10, 0)
    assert c_hat == 2
    assert scores.argmin() == 2


def test_trials_are_shared_across_classes(schedule, template):
    oracle = OracleDenoiser(template, 0, schedule)
    class_errors(oracle, schedule, template, template, [0, 3, 5], 7, 11)
    x_t, t, c = oracle.calls[-1]
    assert t.shape == (21,)
    blocks = [slice(0, 7), slice(7, 14), slice(14, 21)]
    for b in blocks[1:]:
        assert torch.equal(t[b], t[blocks[0]])
        assert torch.equal(x_t[b], x_t[blocks[0]])
    assert c.tolist() == [0] * 7 + [3] * 7 + [5] * 7


def test_trial_j_depends_only_on_seed_and_j(schedule):
    ts5, eps5 = trial_draws(4, 5, schedule.T, (8, 8))
    ts9, eps9 = trial_draws(4, 9, schedule.T, (8, 8))
    assert np.array_equal(ts5, ts9[:5]) and np.array_equal(eps5, eps9[:5])
    assert ts9.min() >= 1 and ts9.max() <= schedule.T


def test_timesteps_cover_range(schedule):
    ts, _ = trial_draws(0, 4000, schedule.T, (1, 1))
    assert ts.min() == 1 and ts.max() == schedule.T
    # uniform on [1, T]: mean (T+1)/2, sd of mean about 0.9
    assert abs(ts.mean() - 100.5) < 4


def test_deterministic_with_model(tiny_config, schedule):
    model = init_model(tiny_config, 0, LABELS)
    tpl = gen_template(1, 8).pixels
    probe = np.clip(tpl + 0.1, 0, 1)
    a = classify(model, schedule, tpl, probe, range(6), 5, 3)
    b = classify(model, schedule, tpl, probe, range(6), 5, 3)
    assert a == b
    c = classify(model, schedule, tpl, probe, range(6), 5, 4)
    assert c[1].errors != a[1].errors


def test_subset_scores_match_full(tiny_config, schedule):
    model = init_model(tiny_config, 0, LABELS)
    tpl = gen_template(2, 8).pixels
    full = class_errors(model, schedule, tpl, tpl, range(6), 4, 1)
    sub = class_errors(model, schedule, tpl, tpl, [1, 4], 4, 1)
    np.testing.assert_allclose(sub, full[[1, 4]], rtol=1e-6)
    assert class_error(model, schedule, tpl, tpl, 4, 4, 1) == pytest.approx(full[4], rel=1e-6)


class _ScaledOracle(OracleDenoiser):
    # under-predicts the noise, so per-trial error depends on the draw
    def __call__(self, x_t, t, z, c):
        return 0.7 * super().__call__(x_t, t, z, c)


def test_more_trials_reduce_variance(schedule, template):
    oracle = _ScaledOracle(template, 0, schedule)
    one = [class_error(oracle, schedule, template, template, 0, 1, s) for s in range(30)]
    many = [class_error(oracle, schedule, template, template, 0, 50, s) for s in range(30)]
    assert np.var(many) < np.var(one)


@settings(max_examples=40, deadline=None)
@given(errs=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=8),
       shift=st.floats(-50, 50), scale=st.floats(0.1, 10))
def test_argmin_invariant_to_monotone_maps(errs, shift, scale):
    classes = tuple(range(len(errs)))
    base = ClassScores(classes, tuple(errs), 1, 0).argmin()
    mapped = ClassScores(classes, tuple(np.asarray(errs) * scale + shift), 1, 0).argmin()
    if len(set(np.asarray(errs) * scale + shift)) == len(set(errs)):
        assert base == mapped


def test_ties_go_to_lowest_id():
    assert ClassScores((0, 1, 2, 3), (2.0, 1.0, 1.0, 3.0), 1, 0).argmin() == 1
    assert ClassScores((4, 2), (1.0, 1.0), 1, 0).argmin() == 2


def test_single_class(schedule, template):
    oracle = OracleDenoiser(template, 1, schedule)
    c_hat, scores = classify(oracle, schedule, template, template, [4], 3, 0)
    assert c_hat == 4 and len(scores.errors) == 1


def test_invalid_inputs(tiny_config, schedule, template):
    oracle = OracleDenoiser(template, 1, schedule)
    with pytest.raises(InvalidArgumentError):
        classify(oracle, schedule, template, template, [], 3, 0)
    with pytest.raises(InvalidArgumentError):
        classify(oracle, schedule, template, template, [0], 0, 0)
    with pytest.raises(InvalidArgumentError):
        classify(oracle, schedule, template, np.zeros((4, 4)), [0], 3, 0)
    model = init_model(tiny_config, 0, LABELS)
    with pytest.raises(InvalidArgumentError):
        classify(model, schedule, template, template, [0, 6], 3, 0)


def test_authenticate_rules():
    idx = {lbl: i for i, lbl in enumerate(LABELS)}
    assert authenticate(idx["HP55"], idx["HP55"], LABELS).verdict is Verdict.AUTHENTIC
    # an authentic print from the other printer is still rejected
    assert authenticate(idx["HP76"], idx["HP55"], LABELS).verdict is Verdict.COUNTERFEIT
    for fake in ("HP55_55", "HP55_76", "HP76_76", "HP76_55"):
        assert authenticate(idx[fake], idx["HP55"], LABELS).verdict is Verdict.COUNTERFEIT
        assert authenticate(idx[fake], idx["HP76"], LABELS).verdict is Verdict.COUNTERFEIT
    with pytest.raises(InvalidArgumentError):
        authenticate(0, idx["HP55_76"], LABELS)
    with pytest.raises(InvalidArgumentError):
        authenticate(9, 0, LABELS)


def test_records_round_trip(tmp_path, schedule, template):
    oracle = OracleDenoiser(template, 0, schedule)
    c_hat, scores = classify(oracle, schedule, template, template, range(6), 2, 0)
    decision = authenticate(c_hat, 0, LABELS, scores)
    rec = probe_record(7, "HP55", "HP55", LABELS, scores, c_hat, decision)
    assert rec["verdict"] == "Authentic" and rec["predicted_label"] == "HP55"
    write_records(tmp_path / "r.jsonl", [rec, rec])
    assert read_records(tmp_path / "r.jsonl") == [rec, rec]
