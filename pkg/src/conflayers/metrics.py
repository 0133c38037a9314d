"""Run accounting and evaluation metrics.

``speedup_estimate`` is a cost model, not a wall-clock measurement: it counts
layer-forwards per model call.  A call over a block of positions is charged
once, which models the parallel block verification that makes speculative
decoding pay off on real accelerators.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UndefinedMetricError
from .layer_filter import SkipSet

DEFAULT_PROJECTION_COST = 0.1


@dataclass
class RunStats:
    num_layers: int
    total_drafted: int = 0
    total_accepted: int = 0
    total_committed: int = 0
    iterations: int = 0
    layers_executed_draft: int = 0
    layers_executed_verify: int = 0
    sublayer_projections: int = 0
    draft_rebuilds: int = 0
    active_skip_sets: list[tuple[int, SkipSet]] = field(default_factory=list)

    def record_iteration(self, skip_set: SkipSet, drafted: int, accepted: int, committed: int):
        if not self.active_skip_sets or self.active_skip_sets[-1][1] != skip_set:
            self.active_skip_sets.append((self.iterations, skip_set))
        self.iterations += 1
        self.total_drafted += drafted
        self.total_accepted += accepted
        self.total_committed += committed

    def merge(self, other: "RunStats") -> None:
        """Append ``other``'s run after this one, shifting its iteration indices."""
        if other.num_layers != self.num_layers:
            raise ValueError("cannot merge stats of models with different depths")
        for start, skip_set in other.active_skip_sets:
            if not self.active_skip_sets or self.active_skip_sets[-1][1] != skip_set:
                self.active_skip_sets.append((self.iterations + start, skip_set))
        for name in (
            "total_drafted", "total_accepted", "total_committed", "iterations",
            "layers_executed_draft", "layers_executed_verify",
            "sublayer_projections", "draft_rebuilds",
        ):
            setattr(self, name, getattr(self, name) + getattr(other, name))

    @property
    def final_skip_set(self) -> SkipSet | None:
        return self.active_skip_sets[-1][1] if self.active_skip_sets else None


def acceptance_rate(stats: RunStats) -> float:
    if stats.total_drafted <= 0:
        raise UndefinedMetricError("acceptance rate needs at least one drafted token")
    return stats.total_accepted / stats.total_drafted


def skip_rate(skip_set: SkipSet, num_layers: int | None = None) -> float:
    n = skip_set.num_layers if num_layers is None else num_layers
    return len(skip_set) / n


def mean_accepted(stats: RunStats) -> float:
    if stats.iterations <= 0:
        raise UndefinedMetricError("mean accepted tokens needs at least one iteration")
    return stats.total_accepted / stats.iterations


def speedup_estimate(
    stats: RunStats,
    num_layers: int | None = None,
    overhead_per_projection: float = DEFAULT_PROJECTION_COST,
) -> float:
    """Vanilla layer-forwards divided by draft + verify + projection overhead."""
    n = stats.num_layers if num_layers is None else num_layers
    vanilla = stats.total_committed * n
    cost = (
        stats.layers_executed_draft
        + stats.layers_executed_verify
        + overhead_per_projection * stats.sublayer_projections
    )
    if cost <= 0:
        raise UndefinedMetricError("run executed no layers")
    return vanilla / cost


def _bigrams(tokens: Sequence[int]) -> Counter:
    return Counter(zip(tokens, tokens[1:]))


def rouge2(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """Token-level ROUGE-2 F1 over bigram multisets; 0.0 if either side has < 2 tokens."""
    candidate, reference = list(candidate), list(reference)
    if len(candidate) < 2 or len(reference) < 2:
        return 0.0
    cand, ref = _bigrams(candidate), _bigrams(reference)
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


def metrics_report(
    stats: RunStats,
    rouge: float,
    rounds: int,
    overhead_per_projection: float = DEFAULT_PROJECTION_COST,
) -> dict:
    """The run summary; alpha and M are None when nothing was drafted."""
    final = stats.final_skip_set
    return {
        "alpha": acceptance_rate(stats) if stats.total_drafted else None,
        "beta_mean": skip_rate(final) if final is not None else 0.0,
        "M": mean_accepted(stats) if stats.total_drafted else None,
        "speedup_est": speedup_estimate(stats, overhead_per_projection=overhead_per_projection),
        "rouge2": rouge,
        "iterations": stats.iterations,
        "rounds": rounds,
    }
