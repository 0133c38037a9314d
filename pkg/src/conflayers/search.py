"""Interval-based search over skip sets.

A candidate skip set drafts for ``opt_interval`` iterations while accepted
token counts accumulate.  At the interval boundary its mean accepted count is
scored, the best set so far is updated, and the controller either halts
(score goal met or round budget spent) or asks for a fresh confidence
profile to derive the next candidate.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .confidence import ConfidenceProfile
from .errors import ConfigError, InvalidInputError, StateError
from .layer_filter import FilterConfig, FilterResult, SkipSet, run_filter, select_skip_layers

log = logging.getLogger(__name__)


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    SEARCH = "search"
    HALT = "halt"


@dataclass(frozen=True)
class SearchConfig:
    opt_interval: int = 30
    max_rounds: int = 10
    score_goal: float = 4.0
    init_skip_ratio: float = 0.5

    def __post_init__(self):
        if self.opt_interval < 1:
            raise ConfigError("opt_interval must be >= 1")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.score_goal < 0:
            raise ConfigError("score_goal must be non-negative")
        if not 0 < self.init_skip_ratio < 1:
            raise ConfigError("init_skip_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class SearchState:
    current_set: SkipSet
    best_set: SkipSet
    best_score: float = -math.inf
    round: int = 0
    opt_iterations: int = 0
    accumulated_accepted: float = 0
    halted: bool = False

    @classmethod
    def start(cls, initial: SkipSet) -> "SearchState":
        return cls(current_set=initial, best_set=initial)


def record_iteration(state: SearchState, accepted: float) -> SearchState:
    """Add one iteration's accepted count.

    Generation always passes integers; any finite non-negative value is taken
    so that scripted replays can hit fractional interval means exactly.
    """
    if state.halted:
        raise StateError("search has halted; iterations are no longer recorded")
    if not math.isfinite(accepted) or accepted < 0:
        raise InvalidInputError(f"accepted count must be finite and >= 0, got {accepted}")
    return replace(
        state,
        accumulated_accepted=state.accumulated_accepted + accepted,
        opt_iterations=state.opt_iterations + 1,
    )


def round_score(state: SearchState, cfg: SearchConfig) -> float:
    return state.accumulated_accepted / cfg.opt_interval


def search_check(state: SearchState, cfg: SearchConfig) -> Decision:
    if state.halted or state.round >= cfg.max_rounds:
        return Decision.HALT
    if state.opt_iterations < cfg.opt_interval:
        return Decision.CONTINUE
    # This boundary closes round ``state.round``; no budget left for another.
    if round_score(state, cfg) >= cfg.score_goal or state.round + 1 >= cfg.max_rounds:
        return Decision.HALT
    return Decision.SEARCH


def update_best(state: SearchState, score: float, evaluated_set: SkipSet) -> SearchState:
    """Keep ``evaluated_set`` if it strictly beats the best score; reset counters."""
    improved = score > state.best_score
    return replace(
        state,
        best_set=evaluated_set if improved else state.best_set,
        best_score=score if improved else state.best_score,
        accumulated_accepted=0,
        opt_iterations=0,
        round=state.round + 1,
    )


def halt(state: SearchState) -> SearchState:
    return replace(state, halted=True, current_set=state.best_set)


def on_trigger(
    state: SearchState, profile: Optional[ConfidenceProfile], filter_cfg: FilterConfig
) -> SearchState:
    if state.halted:
        raise StateError("search has halted; no further triggers are accepted")
    if profile is None:
        raise StateError("no confidence profile available; fill the context window first")
    return replace(state, current_set=select_skip_layers(profile, filter_cfg))


def active_set(state: SearchState) -> SkipSet:
    return state.best_set if state.halted else state.current_set


class SearchController:
    """Stateful driver around the pure search functions.

    It also owns the confidence window: step outputs gathered while a round
    runs, consumed when a search is triggered.  One controller serves a whole
    run, so the search carries over from prompt to prompt.
    """

    def __init__(self, cfg: SearchConfig, initial_set: SkipSet):
        self.cfg = cfg
        self.state = SearchState.start(initial_set)
        self.awaiting_profile = False
        self.window: list = []
        self.search_log: list[dict] = []
        self.progression: list[dict] = []
        self.filter_history: list[tuple[int, FilterResult]] = []

    @property
    def round(self) -> int:
        return self.state.round

    @property
    def halted(self) -> bool:
        return self.state.halted

    @property
    def collecting(self) -> bool:
        return not self.state.halted

    @property
    def best_set(self) -> SkipSet:
        return self.state.best_set

    def active_set(self) -> SkipSet:
        return active_set(self.state)

    def observe(self, accepted: int) -> Decision:
        """Feed one iteration's accepted count and return the search decision."""
        if self.state.halted:
            return Decision.HALT
        if self.awaiting_profile:
            # Still drafting with the old set while the window fills; not scored.
            return Decision.SEARCH
        self.state = record_iteration(self.state, accepted)
        decision = search_check(self.state, self.cfg)
        if decision is Decision.CONTINUE:
            return decision
        evaluated_round = self.state.round
        score = round_score(self.state, self.cfg)
        evaluated = self.state.current_set
        self.state = update_best(self.state, score, evaluated)
        if decision is Decision.HALT:
            self.state = halt(self.state)
            self.window.clear()
        else:
            self.awaiting_profile = True
        self.search_log.append(
            {
                "round": evaluated_round,
                "score": score,
                "set": list(evaluated.layers),
                "best_score": self.state.best_score,
                "decision": decision.value,
            }
        )
        self.progression.append(
            {
                "round": evaluated_round,
                "score": score,
                "set": list(evaluated.layers),
                "best_score": self.state.best_score,
                "best_set": list(self.state.best_set.layers),
            }
        )
        log.info(
            "round %d scored %.3f with %s (best %.3f): %s",
            evaluated_round, score, list(evaluated.layers), self.state.best_score, decision.value,
        )
        return decision

    def on_trigger(self, profile: Optional[ConfidenceProfile], filter_cfg: FilterConfig) -> FilterResult:
        if self.state.halted:
            raise StateError("search has halted; no further triggers are accepted")
        if not self.awaiting_profile:
            raise StateError("on_trigger called without a pending search decision")
        if profile is None:
            raise StateError("no confidence profile available; fill the context window first")
        result = run_filter(profile, filter_cfg)
        self.state = replace(self.state, current_set=result.skip_set)
        self.filter_history.append((self.state.round, result))
        self.awaiting_profile = False
        self.window.clear()
        return result


@dataclass
class FixedController:
    """Controller that always drafts with one externally chosen skip set."""

    skip_set: SkipSet
    round: int = 0
    halted: bool = True
    collecting: bool = False
    awaiting_profile: bool = False
    window: list = field(default_factory=list)
    search_log: list = field(default_factory=list)
    progression: list = field(default_factory=list)
    filter_history: list = field(default_factory=list)

    @property
    def best_set(self) -> SkipSet:
        return self.skip_set

    def active_set(self) -> SkipSet:
        return self.skip_set

    def observe(self, accepted: int) -> Decision:
        return Decision.HALT

    def on_trigger(self, profile, filter_cfg):
        raise StateError("a fixed controller never searches")
