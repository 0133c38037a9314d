"""Backend contract shared by the toy transformer and the trace replayer."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidInputError
from ..layer_filter import SkipSet

# layer index -> (attention-sublayer logits, FFN-sublayer logits)
SublayerLogits = dict[int, tuple[np.ndarray, np.ndarray]]


@dataclass
class BackendStepOutput:
    """Result of running one token position through the model."""

    final_logits: np.ndarray
    sublayer_logits: Optional[SublayerLogits] = None
    layers_executed: int = 0


class LengthCache:
    """Cache that only tracks how many positions it holds."""

    def __init__(self):
        self.length = 0

    def truncate(self, length: int):
        self.length = min(self.length, length)


@dataclass
class DecoderState:
    """Per-session decoding state.

    ``tokens`` is the committed sequence.  Its last element is *pending*: it has
    been emitted but not yet fed through the model, so the target cache holds
    ``committed_length == len(tokens) - 1`` positions between steps.  The draft
    cache is laid out for ``draft_layout`` and may trail the target cache; it is
    synced lazily before the next draft.
    """

    target_cache: object
    draft_cache: object
    tokens: list[int] = field(default_factory=list)
    committed_length: int = 0
    draft_layout: Optional[SkipSet] = None

    @property
    def pending(self) -> int:
        return self.tokens[-1]


def truncate(state: DecoderState, length: int) -> DecoderState:
    """Roll both caches back so that at most ``length`` positions remain."""
    if length < 0:
        raise InvalidInputError(f"cannot truncate to negative length {length}")
    state.target_cache.truncate(length)
    state.draft_cache.truncate(length)
    state.committed_length = length
    return state


class Backend(abc.ABC):
    num_layers: int
    vocab_size: int
    max_seq: int

    @abc.abstractmethod
    def new_state(self) -> DecoderState:
        ...

    @abc.abstractmethod
    def forward_draft(
        self,
        state: DecoderState,
        token: int,
        skip_set: SkipSet,
        collect_sublayer: bool = False,
    ) -> BackendStepOutput:
        """Run ``token`` through the non-skipped layers, appending to the draft cache."""

    @abc.abstractmethod
    def prefill_draft(self, state: DecoderState, tokens: Sequence[int], skip_set: SkipSet) -> int:
        """Append ``tokens`` to the draft cache in one pass; returns layers executed."""

    @abc.abstractmethod
    def forward_target(
        self, state: DecoderState, tokens: Sequence[int], collect_sublayer: bool = False
    ) -> list[BackendStepOutput]:
        """Run the full model over a token block, appending to the target cache."""

    def truncate(self, state: DecoderState, length: int) -> DecoderState:
        return truncate(state, length)

    def check_skip_set(self, skip_set: SkipSet):
        if skip_set.num_layers != self.num_layers:
            raise InvalidInputError(
                f"skip set is for {skip_set.num_layers} layers, model has {self.num_layers}"
            )
        if 0 in skip_set.layers or self.num_layers - 1 in skip_set.layers:
            raise InvalidInputError("first and last layer cannot be skipped")

    def check_tokens(self, tokens: Sequence[int]):
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise InvalidInputError(f"token {t} outside vocabulary of {self.vocab_size}")
