import json

import numpy as np
import pytest

from conflayers.backend import (
    BackendStepOutput,
    ToyModelConfig,
    ToyTransformer,
    TraceBackend,
    load_trace,
    record_trace,
    truncate,
)
from conflayers.errors import CapacityError, ConfigError, InvalidInputError, TraceParseError
from conflayers.layer_filter import SkipSet


def test_config_validation():
    with pytest.raises(ConfigError):
        ToyModelConfig(hidden_dim=30, num_heads=4)
    with pytest.raises(ConfigError):
        ToyModelConfig(num_layers=3)


def test_seeded_weights_reproducible():
    a = ToyTransformer(ToyModelConfig(seed=7))
    b = ToyTransformer(ToyModelConfig(seed=7))
    c = ToyTransformer(ToyModelConfig(seed=8))
    assert np.array_equal(a.lm_head, b.lm_head)
    assert not np.array_equal(a.lm_head, c.lm_head)


def test_block_equals_token_by_token(toy):
    tokens = [3, 17, 42, 8, 8, 60]
    s1, s2 = toy.new_state(), toy.new_state()
    block = toy.forward_target(s1, tokens)
    single = [toy.forward_target(s2, [t])[0] for t in tokens]
    for a, b in zip(block, single):
        assert np.array_equal(a.final_logits, b.final_logits)
    assert s1.target_cache.length == len(tokens)


def test_truncate_then_refeed_is_exact(toy):
    state = toy.new_state()
    toy.forward_target(state, [1, 2, 3, 4, 5])
    toy.truncate(state, 3)
    assert state.target_cache.length == 3 and state.committed_length == 3
    (out,) = toy.forward_target(state, [9])
    fresh = toy.forward_target(toy.new_state(), [1, 2, 3, 9])[-1]
    assert np.array_equal(out.final_logits, fresh.final_logits)


def test_truncate_negative_rejected(toy):
    with pytest.raises(InvalidInputError):
        truncate(toy.new_state(), -1)


def test_empty_skip_set_draft_equals_target(toy):
    tokens = [5, 9, 11]
    s = toy.new_state()
    target = toy.forward_target(s, tokens)
    draft = [toy.forward_draft(s, t, SkipSet.empty(12)) for t in tokens]
    for a, b in zip(target, draft):
        assert np.array_equal(a.final_logits, b.final_logits)
        assert b.layers_executed == 12


def test_skip_set_changes_output_and_cost(toy):
    skip = SkipSet.of([2, 5, 9], 12)
    s = toy.new_state()
    full = toy.forward_target(s, [4])[0]
    draft = toy.forward_draft(s, 4, skip)
    assert draft.layers_executed == 9
    assert not np.array_equal(full.final_logits, draft.final_logits)


def test_sublayer_collection_covers_considered_layers(toy):
    (out,) = toy.forward_target(toy.new_state(), [1], collect_sublayer=True)
    assert sorted(out.sublayer_logits) == list(range(1, 11))
    attn, ffn = out.sublayer_logits[4]
    assert attn.shape == ffn.shape == (64,)
    skip = SkipSet.of([3, 4], 12)
    d = toy.forward_draft(toy.new_state(), 1, skip, collect_sublayer=True)
    assert 3 not in d.sublayer_logits and 5 in d.sublayer_logits


def test_invalid_inputs(toy):
    s = toy.new_state()
    with pytest.raises(InvalidInputError):
        toy.forward_target(s, [64])
    with pytest.raises(InvalidInputError):
        toy.forward_draft(s, 1, SkipSet.of([1], 10))


def test_capacity():
    small = ToyTransformer(ToyModelConfig(max_seq=4))
    s = small.new_state()
    small.forward_target(s, [1, 2, 3, 4])
    with pytest.raises(CapacityError):
        small.forward_target(s, [5])


def test_prefill_draft_matches_single_steps(toy):
    skip = SkipSet.of([1, 6], 12)
    s1, s2 = toy.new_state(), toy.new_state()
    spent = toy.prefill_draft(s1, [3, 4, 5], skip)
    assert spent == 10
    for t in [3, 4, 5]:
        toy.forward_draft(s2, t, skip)
    a = toy.forward_draft(s1, 6, skip)
    b = toy.forward_draft(s2, 6, skip)
    assert np.array_equal(a.final_logits, b.final_logits)


# -- trace -------------------------------------------------------------------------


def test_trace_roundtrip(tmp_path, toy):
    path = record_trace(toy, [1, 2, 3, 4, 5, 6], tmp_path / "t.jsonl")
    replay = load_trace(path)
    assert replay.num_layers == 12 and replay.vocab_size == 64 and replay.max_seq == 6
    live = toy.forward_target(toy.new_state(), [1, 2, 3, 4, 5, 6], collect_sublayer=True)
    state = replay.new_state()
    got = replay.forward_target(state, [0, 0, 0, 0, 0, 0], collect_sublayer=True)
    for a, b in zip(live, got):
        np.testing.assert_allclose(a.final_logits, b.final_logits, rtol=1e-6)
        np.testing.assert_allclose(a.sublayer_logits[3][1], b.sublayer_logits[3][1], rtol=1e-6)


def test_trace_fixture_position_5(fixtures_dir):
    lines = (fixtures_dir / "trace_small.jsonl").read_text().splitlines()
    expected = json.loads(lines[1 + 5])["final"]
    backend = load_trace(fixtures_dir / "trace_small.jsonl")
    outs = backend.forward_target(backend.new_state(), [0] * 6)
    np.testing.assert_allclose(outs[5].final_logits, expected, rtol=1e-6)


def test_trace_draft_drops_skipped_layers(fixtures_dir):
    backend = load_trace(fixtures_dir / "trace_small.jsonl")
    skip = SkipSet.of([2, 4], 12)
    out = backend.forward_draft(backend.new_state(), 0, skip, collect_sublayer=True)
    assert 2 not in out.sublayer_logits and 3 in out.sublayer_logits
    assert out.layers_executed == 10


def test_trace_replay_past_end(fixtures_dir):
    backend = load_trace(fixtures_dir / "trace_small.jsonl")
    state = backend.new_state()
    backend.forward_target(state, [0] * backend.max_seq)
    with pytest.raises(CapacityError):
        backend.forward_target(state, [0])
    with pytest.raises(CapacityError):
        backend.prefill_draft(state, [0] * (backend.max_seq + 1), SkipSet.empty(12))


@pytest.mark.parametrize(
    "body, line",
    [
        ('{"meta": {"K": 4, "num_layers": 4}}\nnot json\n', 2),
        ('{"nometa": 1}\n', 1),
        ('{"meta": {"K": 4, "num_layers": 4}}\n{"pos": 1, "final": [0,0,0,0]}\n', 2),
        ('{"meta": {"K": 4, "num_layers": 4}}\n{"pos": 0, "final": [0,0,0]}\n', 2),
        ('{"meta": {"K": 4, "num_layers": 4}}\n{"pos": 0, "final": [0,0,0,0]}\n{"pos": 1, "final": ["a",0,0,0]}\n', 3),
    ],
)
def test_trace_parse_errors_carry_line(tmp_path, body, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(body)
    with pytest.raises(TraceParseError) as info:
        load_trace(path)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_trace_backend_from_records():
    recs = [BackendStepOutput(np.array([0.0, 1.0, 0.0]), None) for _ in range(3)]
    backend = TraceBackend(3, 4, recs)
    out = backend.forward_target(backend.new_state(), [0, 1, 2])
    assert [int(np.argmax(o.final_logits)) for o in out] == [1, 1, 1]
    with pytest.raises(CapacityError):
        backend.forward_target(backend.new_state(), [0], collect_sublayer=True)


def test_all_considered_skipped_runs_two_layers(toy):
    skip = SkipSet.of(range(1, 11), 12)
    assert toy.forward_draft(toy.new_state(), 0, skip).layers_executed == 2


def test_toy_golden_logits(fixtures_dir, toy):
    golden = json.loads((fixtures_dir / "toy_golden.json").read_text())
    prompt = golden["prompt"]
    outs = toy.forward_target(toy.new_state(), prompt)
    assert len(outs) == len(prompt)
    np.testing.assert_allclose([o.final_logits for o in outs], golden["target_logits"], atol=1e-5)
    skip = SkipSet.of([2, 5], 12)
    state = toy.new_state()
    toy.prefill_draft(state, prompt[:-1], skip)
    out = toy.forward_draft(state, prompt[-1], skip)
    np.testing.assert_allclose(out.final_logits, golden["draft_logits_skip_2_5"], atol=1e-5)


def test_empty_skip_rollout_greedy_agrees(toy):
    state = toy.new_state()
    tok = 7
    for _ in range(64):
        (t,) = toy.forward_target(state, [tok])
        d = toy.forward_draft(state, tok, SkipSet.empty(12))
        assert int(np.argmax(t.final_logits)) == int(np.argmax(d.final_logits))
        tok = int(np.argmax(t.final_logits))


def test_max_seq_does_not_change_weights():
    short = ToyTransformer(ToyModelConfig(max_seq=32))
    long = ToyTransformer(ToyModelConfig(max_seq=512))
    assert np.array_equal(short.lm_head, long.lm_head)
    assert np.array_equal(short.pos_emb, long.pos_emb[:32])
    a = short.forward_target(short.new_state(), [1, 2, 3])[-1].final_logits
    b = long.forward_target(long.new_state(), [1, 2, 3])[-1].final_logits
    assert np.array_equal(a, b)
