"""A seeded, untrained decoder-only transformer small enough for unit tests.

Pre-norm blocks, learned positional embeddings, float32 throughout.  Every
token position is pushed through the network on its own, so processing a
block of tokens is bit-identical to feeding them one by one.  Lossless
verification depends on that property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import CapacityError, ConfigError
from ..layer_filter import SkipSet
from .base import Backend, BackendStepOutput, DecoderState

_NORM_EPS = np.float32(1e-5)


@dataclass(frozen=True)
class ToyModelConfig:
    vocab_size: int = 64
    num_layers: int = 12
    hidden_dim: int = 32
    num_heads: int = 4
    max_seq: int = 1024
    seed: int = 0
    weight_scale: float = 0.05
    embed_scale: float = 1.0
    head_scale: float = 0.5

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ConfigError("hidden_dim must be divisible by num_heads")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.num_layers < 4:
            raise ConfigError("num_layers must be >= 4")
        if self.max_seq < 1:
            raise ConfigError("max_seq must be >= 1")


class KVCache:
    """Preallocated key/value memory for every layer, sharing one length."""

    def __init__(self, num_layers: int, max_seq: int, num_heads: int, head_dim: int):
        shape = (num_layers, num_heads, max_seq, head_dim)
        self.keys = np.zeros(shape, dtype=np.float32)
        self.values = np.zeros(shape, dtype=np.float32)
        self.length = 0

    def truncate(self, length: int):
        self.length = min(self.length, length)


@dataclass
class _Layer:
    attn_norm: np.ndarray
    w_qkv: np.ndarray
    w_out: np.ndarray
    ffn_norm: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray


def _rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    return x * (gain / np.sqrt(np.dot(x, x) / np.float32(x.size) + _NORM_EPS))


_GELU_C = np.float32(math.sqrt(2.0 / math.pi))
_GELU_A = np.float32(0.044715)
_HALF = np.float32(0.5)
_ONE = np.float32(1.0)


def _gelu(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return _HALF * x * (_ONE + np.tanh(inner))


class ToyTransformer(Backend):
    def __init__(self, config: ToyModelConfig = ToyModelConfig()):
        self.config = config
        self.num_layers = config.num_layers
        self.vocab_size = config.vocab_size
        self.max_seq = config.max_seq
        self.num_heads = config.num_heads
        self.head_dim = config.hidden_dim // config.num_heads

        rng = np.random.default_rng(config.seed)
        d, k = config.hidden_dim, config.vocab_size

        def draw(shape, scale):
            return (rng.standard_normal(shape) * scale).astype(np.float32)

        self.tok_emb = draw((k, d), config.embed_scale)
        # Own stream so max_seq never shifts the other weights; rows are
        # drawn in order, so a shorter table is a prefix of a longer one.
        pos_rng = np.random.default_rng([config.seed, 1])
        self.pos_emb = (
            pos_rng.standard_normal((config.max_seq, d)) * config.weight_scale
        ).astype(np.float32)
        self.layers = [
            _Layer(
                attn_norm=np.ones(d, dtype=np.float32),
                w_qkv=draw((d, 3 * d), config.weight_scale),
                w_out=draw((d, d), config.weight_scale),
                ffn_norm=np.ones(d, dtype=np.float32),
                w_up=draw((d, 4 * d), config.weight_scale),
                w_down=draw((4 * d, d), config.weight_scale),
            )
            for _ in range(config.num_layers)
        ]
        self.final_norm = np.ones(d, dtype=np.float32)
        self.lm_head = draw((d, k), config.head_scale)
        self._scale = np.float32(1.0 / math.sqrt(self.head_dim))

    def new_state(self) -> DecoderState:
        def cache():
            return KVCache(self.num_layers, self.max_seq, self.num_heads, self.head_dim)

        return DecoderState(target_cache=cache(), draft_cache=cache())

    # -- public passes -----------------------------------------------------

    def forward_target(self, state, tokens, collect_sublayer=False):
        tokens = list(tokens)
        self.check_tokens(tokens)
        cache = state.target_cache
        self._check_room(cache, len(tokens))
        outputs = []
        for tok in tokens:
            logits, subs = self._run_position(tok, cache, None, collect_sublayer)
            outputs.append(BackendStepOutput(logits, subs, self.num_layers))
        return outputs

    def forward_draft(self, state, token, skip_set, collect_sublayer=False):
        self.check_skip_set(skip_set)
        self.check_tokens([token])
        cache = state.draft_cache
        self._check_room(cache, 1)
        logits, subs = self._run_position(token, cache, skip_set, collect_sublayer)
        return BackendStepOutput(logits, subs, self.num_layers - len(skip_set))

    def prefill_draft(self, state, tokens: Sequence[int], skip_set: SkipSet) -> int:
        self.check_skip_set(skip_set)
        tokens = list(tokens)
        if not tokens:
            return 0
        self.check_tokens(tokens)
        cache = state.draft_cache
        self._check_room(cache, len(tokens))
        for tok in tokens:
            self._run_position(tok, cache, skip_set, False)
        return self.num_layers - len(skip_set)

    # -- internals ---------------------------------------------------------

    def _check_room(self, cache: KVCache, n: int):
        if cache.length + n > self.max_seq:
            raise CapacityError(
                f"{cache.length} cached + {n} new positions exceeds max_seq={self.max_seq}"
            )

    def _project(self, x: np.ndarray) -> np.ndarray:
        return _rms_norm(x, self.final_norm) @ self.lm_head

    def _run_position(
        self,
        token: int,
        cache: KVCache,
        skip_set: Optional[SkipSet],
        collect: bool,
    ):
        pos = cache.length
        x = self.tok_emb[token] + self.pos_emb[pos]
        skipped = set(skip_set.layers) if skip_set is not None else ()
        last = self.num_layers - 1
        subs = {} if collect else None
        for idx, layer in enumerate(self.layers):
            if idx in skipped:
                continue
            x = x + self._attention(idx, layer, x, cache, pos)
            attn_state = x
            h = _rms_norm(x, layer.ffn_norm)
            x = x + _gelu(h @ layer.w_up) @ layer.w_down
            if collect and 0 < idx < last:
                subs[idx] = (self._project(attn_state), self._project(x))
        cache.length = pos + 1
        return self._project(x), subs

    def _attention(self, idx: int, layer: _Layer, x, cache: KVCache, pos: int):
        d = x.size
        qkv = _rms_norm(x, layer.attn_norm) @ layer.w_qkv
        heads = (self.num_heads, self.head_dim)
        cache.keys[idx, :, pos] = qkv[d : 2 * d].reshape(heads)
        cache.values[idx, :, pos] = qkv[2 * d :].reshape(heads)
        q = qkv[:d].reshape(self.num_heads, self.head_dim, 1)
        # (heads, t, 1) scores over positions 0..pos
        scores = (cache.keys[idx, :, : pos + 1] @ q) * self._scale
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        mixed = (cache.values[idx, :, : pos + 1] * weights).sum(axis=1)
        return mixed.reshape(-1) @ layer.w_out
