"""Replay backend driven by a JSON-lines trace of recorded model outputs.

Format: a header ``{"meta": {"K": int, "num_layers": int}}`` followed by one
record per position, ``{"pos": int, "final": [K floats], "sublayers":
[[attn K floats, ffn K floats], ...]}`` with sublayers ordered by considered
layer index (1 .. num_layers-2).  Replay is keyed on position only; the token
ids fed in are validated but otherwise ignored.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import CapacityError, TraceParseError
from ..layer_filter import SkipSet
from .base import Backend, BackendStepOutput, DecoderState, LengthCache


class TraceBackend(Backend):
    def __init__(self, vocab_size: int, num_layers: int, records: list[BackendStepOutput]):
        self.vocab_size = vocab_size
        self.num_layers = num_layers
        self.records = records
        self.max_seq = len(records)

    def new_state(self) -> DecoderState:
        return DecoderState(target_cache=LengthCache(), draft_cache=LengthCache())

    def _replay(self, pos: int, collect: bool, skip_set: SkipSet | None) -> BackendStepOutput:
        if pos >= len(self.records):
            raise CapacityError(f"trace holds {len(self.records)} positions, asked for {pos}")
        rec = self.records[pos]
        subs = None
        if collect:
            if rec.sublayer_logits is None:
                raise CapacityError(f"trace position {pos} carries no sublayer logits")
            skipped = set(skip_set.layers) if skip_set is not None else set()
            subs = {i: pair for i, pair in rec.sublayer_logits.items() if i not in skipped}
        executed = self.num_layers - (len(skip_set) if skip_set is not None else 0)
        return BackendStepOutput(rec.final_logits, subs, executed)

    def forward_target(self, state, tokens, collect_sublayer=False):
        tokens = list(tokens)
        self.check_tokens(tokens)
        cache = state.target_cache
        if cache.length + len(tokens) > len(self.records):
            raise CapacityError(
                f"replay of {len(tokens)} positions from {cache.length} passes the end of the trace"
            )
        outputs = [self._replay(cache.length + j, collect_sublayer, None) for j in range(len(tokens))]
        cache.length += len(tokens)
        return outputs

    def forward_draft(self, state, token, skip_set, collect_sublayer=False):
        self.check_skip_set(skip_set)
        self.check_tokens([token])
        cache = state.draft_cache
        out = self._replay(cache.length, collect_sublayer, skip_set)
        cache.length += 1
        return out

    def prefill_draft(self, state, tokens: Sequence[int], skip_set: SkipSet) -> int:
        self.check_skip_set(skip_set)
        tokens = list(tokens)
        if not tokens:
            return 0
        cache = state.draft_cache
        if cache.length + len(tokens) > len(self.records):
            raise CapacityError("draft prefill passes the end of the trace")
        cache.length += len(tokens)
        return self.num_layers - len(skip_set)


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values).reshape(-1)]


def write_trace(
    path, outputs: Iterable[BackendStepOutput], vocab_size: int, num_layers: int
) -> Path:
    path = Path(path)
    considered = range(1, num_layers - 1)
    with path.open("w") as fh:
        fh.write(json.dumps({"meta": {"K": vocab_size, "num_layers": num_layers}}) + "\n")
        for pos, out in enumerate(outputs):
            rec = {"pos": pos, "final": _floats(out.final_logits)}
            if out.sublayer_logits is not None:
                rec["sublayers"] = [
                    [_floats(out.sublayer_logits[i][0]), _floats(out.sublayer_logits[i][1])]
                    for i in considered
                ]
            fh.write(json.dumps(rec) + "\n")
    return path


def record_trace(backend: Backend, tokens: Sequence[int], path) -> Path:
    """Run ``tokens`` through the full model with sublayer collection and save the trace."""
    state = backend.new_state()
    outputs = backend.forward_target(state, tokens, collect_sublayer=True)
    return write_trace(path, outputs, backend.vocab_size, backend.num_layers)


def _vector(raw, k: int, what: str, line: int) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != k:
        raise TraceParseError(f"{what} must be a list of {k} numbers", line)
    try:
        return np.asarray(raw, dtype=np.float32)
    except (TypeError, ValueError):
        raise TraceParseError(f"{what} contains non-numeric values", line) from None


def load_trace(path) -> TraceBackend:
    meta = None
    records: list[BackendStepOutput] = []
    with Path(path).open() as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise TraceParseError("expected a JSON object", lineno)
            if meta is None:
                meta = obj.get("meta")
                if not isinstance(meta, dict) or not {"K", "num_layers"} <= meta.keys():
                    raise TraceParseError("first line must be a meta header with K and num_layers", lineno)
                k, n_layers = meta["K"], meta["num_layers"]
                if not isinstance(k, int) or not isinstance(n_layers, int) or k < 2 or n_layers < 3:
                    raise TraceParseError("meta K and num_layers must be integers (K>=2, layers>=3)", lineno)
                continue
            if obj.get("pos") != len(records):
                raise TraceParseError(f"expected pos {len(records)}, got {obj.get('pos')!r}", lineno)
            final = _vector(obj.get("final"), k, "final", lineno)
            subs = None
            if "sublayers" in obj:
                raw_subs = obj["sublayers"]
                if not isinstance(raw_subs, list) or len(raw_subs) != n_layers - 2:
                    raise TraceParseError(f"sublayers must list {n_layers - 2} layer pairs", lineno)
                subs = {}
                for layer, pair in enumerate(raw_subs, start=1):
                    if not isinstance(pair, list) or len(pair) != 2:
                        raise TraceParseError(f"sublayer entry {layer} must be an [attn, ffn] pair", lineno)
                    subs[layer] = (
                        _vector(pair[0], k, f"attn logits of layer {layer}", lineno),
                        _vector(pair[1], k, f"ffn logits of layer {layer}", lineno),
                    )
            records.append(BackendStepOutput(final, subs, n_layers))
    if meta is None:
        raise TraceParseError("empty trace file", 1)
    return TraceBackend(k, n_layers, records)
