import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgtalk.errors import UnsupportedLeadConfigError
from ecgtalk.explain import (ExplainerConfig, ExplanationOutput, explain,
                             explanation_tool_call, tiou)
from ecgtalk.records import LeadConfig
from ecgtalk.synth import PrematureBeat, beat_interval_s, synthesize_ecg

FAST = ExplainerConfig(stride_s=0.1, spectral=False)


def brute_force_tiou(pred, truth, step_ms=1):
    """Independent oracle: discretize at 1 ms and count cells."""
    bounds = [v for s, e in list(pred) + list(truth) for v in (s, e)]
    if not bounds:
        return 1.0
    lo = int(np.floor(min(bounds) * 1000))
    hi = int(np.ceil(max(bounds) * 1000))
    inter = union = 0
    for cell in range(lo, hi, step_ms):
        t0, t1 = cell / 1000.0, (cell + step_ms) / 1000.0
        in_pred = any(s <= t0 and t1 <= e for s, e in pred)
        in_truth = any(s <= t0 and t1 <= e for s, e in truth)
        inter += in_pred and in_truth
        union += in_pred or in_truth
    return inter / union if union else 1.0


def test_tiou_identity_and_disjoint():
    assert tiou([(2, 4)], [(2, 4)]) == 1.0
    assert tiou([(0, 1)], [(2, 3)]) == 0.0
    assert tiou([], []) == 1.0
    assert tiou([(0, 1)], []) == 0.0


def test_tiou_partial_overlap():
    # oracle-derived: intersection 1 s, union 3 s
    assert tiou([(2, 4)], [(3, 5)]) == pytest.approx(1 / 3, abs=1e-9)


def test_tiou_malformed_rejected():
    with pytest.raises(ValueError):
        tiou([(4, 2)], [(0, 1)])
    with pytest.raises(ValueError):
        tiou([(0, np.inf)], [(0, 1)])


intervals_strategy = st.lists(
    st.tuples(st.integers(0, 5000), st.integers(1, 800)).map(
        lambda t: (t[0] / 1000.0, (t[0] + t[1]) / 1000.0)),
    min_size=0, max_size=5)


@settings(max_examples=100, deadline=None)
@given(a=intervals_strategy, b=intervals_strategy)
def test_tiou_matches_brute_force_and_symmetry(a, b):
    value = tiou(a, b)
    assert value == pytest.approx(brute_force_tiou(a, b), abs=1e-9)
    assert value == pytest.approx(tiou(b, a), abs=1e-12)
    assert 0.0 <= value <= 1.0


@settings(max_examples=50, deadline=None)
@given(a=intervals_strategy, shift=st.floats(0, 10))
def test_tiou_self_and_shift_invariance(a, shift):
    if a:
        assert tiou(a, a) == pytest.approx(1.0)
    shifted_a = [(s + shift, e + shift) for s, e in a]
    b = [(s + 0.1, e + 0.25) for s, e in a]
    shifted_b = [(s + shift, e + shift) for s, e in b]
    assert tiou(a, b) == pytest.approx(tiou(shifted_a, shifted_b), abs=1e-9)


def test_explanation_output_invariants():
    with pytest.raises(ValueError):
        ExplanationOutput("PVC", ((2.0, 1.0),))
    with pytest.raises(ValueError):
        ExplanationOutput("PVC", ((0.0, 2.0), (1.0, 3.0)))
    out = ExplanationOutput("PVC", ((0.0, 1.0), (2.0, 3.0)),
                            saliency={(0.0, 1.0): 1.0, (2.0, 3.0): 0.5})
    assert out.is_valid


def test_explain_localizes_injected_pvc():
    record, fiducials = synthesize_ecg(
        70, 10, 500, 0.01, seed=5, premature=[PrematureBeat(4, 0.6, "ventricular")])
    gt = beat_interval_s(fiducials, 4, 500)
    out = explain(record, "PVC", config=FAST)
    assert out.is_valid and out.intervals
    top = max(out.intervals, key=lambda iv: out.saliency[iv])
    assert tiou([top], [gt]) >= 0.5


def test_explain_refuses_twelve_lead():
    record, _ = synthesize_ecg(70, 10, 500, 0, seed=0,
                               lead_config=LeadConfig.TWELVE_LEAD)
    with pytest.raises(UnsupportedLeadConfigError):
        explain(record, "PVC")
    tool = explanation_tool_call(record, "PVC")
    assert not tool.is_valid
    assert tool.reason == "unsupported_lead_config"


def test_explain_inactive_class():
    record, _ = synthesize_ecg(60, 10, 500, 0, seed=0)
    out = explain(record, "PVC", config=FAST)
    assert not out.is_valid
    assert out.reason == "class_not_active"


def test_explain_unknown_class():
    record, _ = synthesize_ecg(60, 10, 500, 0, seed=0)
    with pytest.raises(ValueError, match="not in the registry"):
        explain(record, "NOPE", config=FAST)


def test_explain_output_satisfies_invariants():
    record, _ = synthesize_ecg(70, 10, 500, 0.01, seed=6,
                               premature=[PrematureBeat(5, 0.6, "ventricular")])
    out = explain(record, "PVC", config=FAST)
    assert out.is_valid
    last_end = 0.0
    for start, end in out.intervals:
        assert 0.0 <= start < end <= record.duration_s
        assert start >= last_end
        last_end = end
    for score in out.saliency.values():
        assert 0.0 <= score <= 1.0


def test_explain_deterministic():
    record, _ = synthesize_ecg(70, 10, 500, 0.01, seed=8,
                               premature=[PrematureBeat(4, 0.6, "ventricular")])
    assert explain(record, "PVC", config=FAST) == explain(record, "PVC", config=FAST)


def test_explain_tool_call_wraps_output():
    record, _ = synthesize_ecg(70, 10, 500, 0.01, seed=9,
                               premature=[PrematureBeat(4, 0.6, "ventricular")])
    tool = explanation_tool_call(record, "PVC", config=FAST)
    assert tool.is_valid
    assert tool.body["class"] == "PVC"
    assert tool.body["intervals"]
    for entry in tool.body["intervals"]:
        assert entry["start_s"] < entry["end_s"]
