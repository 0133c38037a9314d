import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conflayers.backend import load_trace
from conflayers.confidence import (
    ConfidenceProfile,
    build_profile,
    confidence_from_logits,
    entropy,
    layer_confidence,
    softmax,
    stabilize_logits,
)
from conflayers.errors import InvalidInputError
from conflayers.backend.base import BackendStepOutput

import oracles


def test_stabilize_clamps_and_maps_nan():
    assert stabilize_logits([1e9, 0.0]).tolist() == [50.0, 0.0]
    assert stabilize_logits([float("nan"), 2.0]).tolist() == [0.0, 2.0]
    assert stabilize_logits([-1e9, float("inf")], clamp_bound=5).tolist() == [-5.0, 5.0]


def test_stabilize_rejects_empty_and_bad_bound():
    with pytest.raises(InvalidInputError):
        stabilize_logits([])
    with pytest.raises(InvalidInputError):
        stabilize_logits([1.0], clamp_bound=0)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0, 0, 0, 0]), [0.25] * 4)
    np.testing.assert_allclose(softmax([math.log(3), 0]), [0.75, 0.25], rtol=1e-12)
    expected = [float(p) for p in oracles.softmax_mp([2.0, 1.0, 0.5])]
    np.testing.assert_allclose(softmax([2.0, 1.0, 0.5]), expected, rtol=1e-14)


def test_entropy_examples():
    assert entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-6)
    assert 0.0 <= entropy([1.0, 0.0, 0.0, 0.0]) <= 1e-6
    assert entropy([0.75, 0.25]) == pytest.approx(float(oracles.entropy_mp([0.75, 0.25])), abs=1e-14)


def test_confidence_examples():
    assert confidence_from_logits([3.0] * 4) == pytest.approx(0.0, abs=1e-6)
    assert confidence_from_logits([100, 0, 0, 0]) >= 0.999
    logits = [2.0, 1.0, 0.5, 0.0]
    assert confidence_from_logits(logits) == pytest.approx(oracles.confidence_mp(logits), abs=1e-12)


def test_confidence_needs_two_logits():
    with pytest.raises(InvalidInputError):
        confidence_from_logits([1.0])


def test_confidence_vectorised_matches_loop():
    rng = np.random.default_rng(0)
    batch = rng.standard_normal((5, 3, 7)) * 3
    stacked = confidence_from_logits(batch)
    assert stacked.shape == (5, 3)
    for idx in np.ndindex(5, 3):
        assert stacked[idx] == confidence_from_logits(batch[idx])


def test_layer_confidence_examples():
    uniform = [0.0] * 8
    one_hot = [60.0] + [0.0] * 7
    assert layer_confidence(uniform, uniform) == pytest.approx(0.0, abs=1e-6)
    assert layer_confidence(one_hot, uniform) == pytest.approx(0.5, abs=1e-3)
    a, f = [0.3, -1.2, 2.0, 0.1], [1.0, 1.5, -0.5, 0.0]
    assert layer_confidence(a, f) == pytest.approx(oracles.layer_confidence_mp(a, f), abs=1e-12)


def test_layer_confidence_shape_mismatch():
    with pytest.raises(InvalidInputError):
        layer_confidence([0.0, 1.0], [0.0, 1.0, 2.0])


@given(
    st.lists(st.floats(-40, 40, allow_nan=False), min_size=2, max_size=32),
)
def test_confidence_in_unit_interval(logits):
    assert 0.0 <= confidence_from_logits(logits) <= 1.0


@given(
    st.lists(st.floats(-20, 20, allow_nan=False), min_size=2, max_size=32),
    st.floats(-20, 20, allow_nan=False),
)
def test_confidence_shift_invariant(logits, shift):
    shifted = [x + shift for x in logits]
    assert confidence_from_logits(shifted) == pytest.approx(confidence_from_logits(logits), abs=1e-6)


def test_confidence_increasing_in_two_outcome_probability():
    grid = np.linspace(0.51, 0.99, 20)
    values = [confidence_from_logits([math.log(p), math.log(1 - p)]) for p in grid]
    assert all(b > a for a, b in zip(values, values[1:]))


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20), st.randoms())
def test_entropy_permutation_invariant(weights, rnd):
    total = sum(weights)
    if total == 0:
        return
    p = [w / total for w in weights]
    q = list(p)
    rnd.shuffle(q)
    assert entropy(q) == pytest.approx(entropy(p), abs=1e-9)


def _step(sub_values):
    subs = {layer: (np.asarray(a), np.asarray(f)) for layer, (a, f) in sub_values.items()}
    return BackendStepOutput(final_logits=np.zeros(4), sublayer_logits=subs)


def test_build_profile_uniform_window():
    uniform = ([0.0] * 4, [0.0] * 4)
    prof = build_profile([_step({i: uniform for i in range(1, 5)})], num_layers=6)
    assert prof.layers == (1, 2, 3, 4)
    assert all(c == pytest.approx(0.0, abs=1e-6) for c in prof.confidences)


def test_build_profile_averages_tokens():
    def pair_for(conf_target):
        # a two-logit vector whose confidence equals conf_target, found by bisection
        lo, hi = 0.0, 50.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if confidence_from_logits([mid, 0.0]) < conf_target:
                lo = mid
            else:
                hi = mid
        return [hi, 0.0]

    base = ([0.0, 0.0], [0.0, 0.0])
    a = {1: base, 2: (pair_for(0.2), pair_for(0.2)), 3: base}
    b = {1: base, 2: (pair_for(0.4), pair_for(0.4)), 3: base}
    prof = build_profile([_step(a), _step(b)], num_layers=5)
    assert prof.confidences[1] == pytest.approx(0.3, abs=1e-9)


def test_build_profile_errors():
    with pytest.raises(InvalidInputError):
        build_profile([], num_layers=6)
    partial = _step({1: ([0.0, 1.0], [0.0, 1.0])})
    with pytest.raises(InvalidInputError):
        build_profile([partial], num_layers=6)


def test_build_profile_trace_fixture_matches_golden(fixtures_dir):
    import json

    golden = json.loads((fixtures_dir / "profile_small.json").read_text())
    backend = load_trace(fixtures_dir / "trace_small.jsonl")
    state = backend.new_state()
    steps = backend.forward_target(state, [0] * golden["window_positions"], collect_sublayer=True)
    prof = build_profile(steps, backend.num_layers)
    assert 0 not in prof.layers and backend.num_layers - 1 not in prof.layers
    np.testing.assert_allclose(prof.confidences, golden["confidences"], atol=1e-6)


def test_profile_validation():
    with pytest.raises(InvalidInputError):
        ConfidenceProfile((0, 1, 2), (0.1, 0.2, 0.3), 5)
    with pytest.raises(InvalidInputError):
        ConfidenceProfile.from_values([0.1, 1.5])
    prof = ConfidenceProfile.from_values([0.1, 0.2, 0.3])
    assert prof.num_layers == 5 and prof.layers == (1, 2, 3) and len(prof) == 3
    assert prof.to_dict()["confidences"] == [0.1, 0.2, 0.3]
