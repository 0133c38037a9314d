"""Draft-verify generation loop with greedy, lossless verification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .backend.base import Backend, BackendStepOutput, DecoderState
from .confidence import build_profile, confidence_from_logits
from .errors import ConfigError, InvalidInputError
from .layer_filter import FilterConfig, SkipSet
from .metrics import RunStats

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DraftConfig:
    max_draft_len: int = 8
    draft_stop_confidence: float = 0.4
    context_window: int = 100
    max_new_tokens: int = 512
    eos_token: Optional[int] = None

    def __post_init__(self):
        if self.max_draft_len < 1:
            raise ConfigError("max_draft_len must be >= 1")
        if self.context_window < 1:
            raise ConfigError("context_window must be >= 1")
        if not 0.0 <= self.draft_stop_confidence <= 1.0:
            raise ConfigError("draft_stop_confidence must lie in [0, 1]")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")


@dataclass
class DraftResult:
    tokens: list[int]
    confidences: list[float]
    sublayer_outputs: list[BackendStepOutput]
    layers_executed: int


@dataclass
class DraftOutcome:
    drafted: list[int]
    accepted: int
    correction: int
    draft_confidences: list[float] = field(default_factory=list)
    target_outputs: list[BackendStepOutput] = field(default_factory=list, repr=False)
    layers_executed: int = 0

    @property
    def committed(self) -> list[int]:
        return self.drafted[: self.accepted] + [self.correction]


def greedy_token(logits) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest id.
    return int(np.argmax(logits))


def uniform_initial_skip_set(num_layers: int, ratio: float) -> SkipSet:
    """``floor(ratio * num_layers)`` layers spread evenly over ``1 .. num_layers-2``."""
    if num_layers < 4:
        raise ConfigError(f"need at least 4 layers, got {num_layers}")
    if not 0 < ratio < 1:
        raise ConfigError(f"ratio must lie in (0, 1), got {ratio}")
    m = math.floor(ratio * num_layers)
    first, last = 1, num_layers - 2
    if m < 1:
        raise ConfigError(f"ratio {ratio} skips no layer of {num_layers}")
    if m > last - first + 1:
        raise ConfigError(f"ratio {ratio} asks for {m} of only {last} candidate layers")
    if m == 1:
        ideal = [first + (last - first) / 2]
    else:
        ideal = [first + t * (last - first) / (m - 1) for t in range(m)]
    chosen: list[int] = []
    for x in ideal:
        idx = math.floor(x + 0.5)
        if idx not in chosen:
            chosen.append(idx)
            continue
        free = [i for i in range(first, last + 1) if i not in chosen]
        chosen.append(min(free, key=lambda i: (abs(i - x), i)))
    return SkipSet.of(chosen, num_layers)


def prefill(backend: Backend, prompt: Sequence[int]) -> DecoderState:
    """Feed all but the last prompt token to the target; the last one stays pending."""
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise InvalidInputError("prompt must not be empty")
    state = backend.new_state()
    if len(prompt) > 1:
        backend.forward_target(state, prompt[:-1])
    state.tokens = prompt
    state.committed_length = len(prompt) - 1
    return state


def sync_draft_cache(backend: Backend, state: DecoderState, skip_set: SkipSet) -> tuple[int, bool]:
    """Bring the draft cache up to ``committed_length`` for ``skip_set``.

    Rebuilds from scratch when the skip set changed.  Returns the layer-forwards
    spent and whether a rebuild happened.
    """
    rebuilt = False
    if state.draft_layout != skip_set:
        rebuilt = state.draft_layout is not None
        state.draft_cache.truncate(0)
        state.draft_layout = skip_set
    start = state.draft_cache.length
    missing = state.tokens[start : state.committed_length]
    return backend.prefill_draft(state, missing, skip_set), rebuilt


def draft_step(
    backend: Backend,
    state: DecoderState,
    skip_set: SkipSet,
    cfg: DraftConfig,
    collect_sublayer: bool = False,
    max_len: Optional[int] = None,
) -> DraftResult:
    """Greedily draft tokens with the layer-skipped model.

    After the first token, drafting stops as soon as a proposal's confidence
    falls below ``cfg.draft_stop_confidence`` (that proposal is dropped) or the
    length cap is reached.  The draft cache must already be in sync.
    """
    limit = cfg.max_draft_len if max_len is None else max(1, min(max_len, cfg.max_draft_len))
    tokens: list[int] = []
    confidences: list[float] = []
    collected: list[BackendStepOutput] = []
    executed = 0
    feed = state.pending
    while len(tokens) < limit:
        out = backend.forward_draft(state, feed, skip_set, collect_sublayer)
        executed += out.layers_executed
        conf = confidence_from_logits(out.final_logits)
        if tokens and conf < cfg.draft_stop_confidence:
            break
        feed = greedy_token(out.final_logits)
        tokens.append(feed)
        confidences.append(conf)
        if collect_sublayer:
            collected.append(out)
    return DraftResult(tokens, confidences, collected, executed)


def verify_step(
    backend: Backend,
    state: DecoderState,
    drafted: Sequence[int],
    collect_sublayer: bool = False,
    draft_confidences: Sequence[float] = (),
) -> DraftOutcome:
    """Check ``drafted`` against the full model in one block and commit.

    The block is the pending token followed by the drafts, so output ``j``
    predicts the token after input ``j``.
    """
    drafted = [int(t) for t in drafted]
    if not drafted:
        raise InvalidInputError("nothing to verify")
    return _verify_block(backend, state, drafted, collect_sublayer, draft_confidences)


def _verify_block(backend, state, drafted, collect_sublayer, draft_confidences) -> DraftOutcome:
    # An empty draft is a plain target step; generate uses it for the last
    # token of the budget, where no draft could ever be committed.
    outputs = backend.forward_target(state, [state.pending] + drafted, collect_sublayer)
    targets = [greedy_token(o.final_logits) for o in outputs]
    accepted = 0
    while accepted < len(drafted) and drafted[accepted] == targets[accepted]:
        accepted += 1
    correction = targets[accepted]
    backend.truncate(state, state.committed_length + accepted + 1)
    state.tokens.extend(drafted[:accepted] + [correction])
    return DraftOutcome(
        drafted=drafted,
        accepted=accepted,
        correction=correction,
        draft_confidences=list(draft_confidences),
        target_outputs=outputs,
        layers_executed=backend.num_layers,
    )


def greedy_decode(
    backend: Backend,
    prompt: Sequence[int],
    max_new_tokens: int,
    eos_token: Optional[int] = None,
) -> list[int]:
    """Plain autoregressive greedy decoding with the full model."""
    state = prefill(backend, prompt)
    out: list[int] = []
    while len(out) < max_new_tokens:
        (step,) = backend.forward_target(state, [state.pending])
        tok = greedy_token(step.final_logits)
        state.tokens.append(tok)
        state.committed_length += 1
        out.append(tok)
        if tok == eos_token:
            break
    return out


IterationHook = Callable[[dict], None]


def generate(
    prompt: Sequence[int],
    backend: Backend,
    controller,
    cfg: DraftConfig = DraftConfig(),
    filter_cfg: FilterConfig = FilterConfig(),
    stats: Optional[RunStats] = None,
    on_iteration: Optional[IterationHook] = None,
) -> tuple[list[int], RunStats]:
    """Self-speculative generation for one prompt.

    ``controller`` supplies the skip set for every iteration and is told how
    many drafts each verification accepted.  While it is collecting, full-model
    sublayer logits of committed positions are gathered into its window; once
    a pending search has a full window the profile is built and handed over.
    ``stats`` may be shared across prompts to accumulate a whole run.

    When a single token of budget is left the iteration skips drafting and
    runs one plain target step (drafted 0, accepted 0, committed 1), so the
    output never overshoots ``max_new_tokens``.
    """
    if not prompt:
        raise InvalidInputError("prompt must not be empty")
    n_layers = backend.num_layers
    stats = stats if stats is not None else RunStats(num_layers=n_layers)
    state = prefill(backend, prompt)
    out: list[int] = []

    while len(out) < cfg.max_new_tokens:
        skip_set = controller.active_set()
        remaining = cfg.max_new_tokens - len(out)
        drafted: list[int] = []
        confidences: list[float] = []
        if remaining > 1:
            spent, rebuilt = sync_draft_cache(backend, state, skip_set)
            stats.layers_executed_draft += spent
            stats.draft_rebuilds += int(rebuilt)
            draft = draft_step(backend, state, skip_set, cfg, max_len=remaining - 1)
            stats.layers_executed_draft += draft.layers_executed
            drafted, confidences = draft.tokens, draft.confidences

        collect = controller.collecting and len(controller.window) < cfg.context_window
        outcome = _verify_block(backend, state, drafted, collect, confidences)
        stats.layers_executed_verify += outcome.layers_executed
        if collect:
            stats.sublayer_projections += 2 * (n_layers - 2) * len(outcome.target_outputs)
            room = cfg.context_window - len(controller.window)
            controller.window.extend(outcome.target_outputs[: outcome.accepted + 1][:room])

        block = outcome.committed
        round_before = controller.round
        stats.record_iteration(skip_set, len(outcome.drafted), outcome.accepted, len(block))
        controller.observe(outcome.accepted)
        if controller.awaiting_profile and len(controller.window) >= cfg.context_window:
            profile = build_profile(controller.window, n_layers)
            controller.on_trigger(profile, filter_cfg)

        if on_iteration is not None:
            on_iteration(
                {
                    "iter": stats.iterations - 1,
                    "round": round_before,
                    "skip_set": list(skip_set.layers),
                    "drafted": len(outcome.drafted),
                    "accepted": outcome.accepted,
                    "committed": len(block),
                }
            )

        if cfg.eos_token is not None and cfg.eos_token in block:
            out.extend(block[: block.index(cfg.eos_token) + 1])
            break
        out.extend(block)

    return out, stats
