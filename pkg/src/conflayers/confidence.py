"""Entropy-based confidence scores for per-layer token distributions.

Every function works on the last axis, so a single logit vector and a stack of
them go through the same code path.  Math is carried out in float64 no matter
what width the backend produced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

DEFAULT_EPSILON = 1e-10
DEFAULT_CLAMP_BOUND = 50.0


def stabilize_logits(raw, clamp_bound: float = DEFAULT_CLAMP_BOUND) -> np.ndarray:
    """Cast to float64, map NaN to 0 and clamp into ``[-clamp_bound, clamp_bound]``."""
    if clamp_bound <= 0:
        raise InvalidInputError(f"clamp_bound must be positive, got {clamp_bound}")
    logits = np.asarray(raw, dtype=np.float64)
    if logits.ndim == 0 or logits.shape[-1] == 0:
        raise InvalidInputError("logit vector is empty")
    logits = np.where(np.isnan(logits), 0.0, logits)
    return np.clip(logits, -clamp_bound, clamp_bound)


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def entropy(p, epsilon: float = DEFAULT_EPSILON):
    """Shannon entropy in nats, ``-sum(p * ln(p + epsilon))``.

    ``epsilon`` drives a one-hot vector to about ``-epsilon``; the result is
    floored at 0 so entropy stays non-negative.
    """
    p = np.asarray(p, dtype=np.float64)
    h = np.maximum(-np.sum(p * np.log(p + epsilon), axis=-1), 0.0)
    return float(h) if h.ndim == 0 else h


def confidence_from_logits(
    logits, epsilon: float = DEFAULT_EPSILON, clamp_bound: float = DEFAULT_CLAMP_BOUND
):
    """One minus the entropy of ``softmax(logits)`` normalized by ``ln K``.

    Returns a float for a single vector and an array for a stack; the result is
    clipped to [0, 1] because ``epsilon`` can push it marginally outside.
    """
    stable = stabilize_logits(logits, clamp_bound)
    k = stable.shape[-1]
    if k < 2:
        raise InvalidInputError(f"need at least 2 logits, got {k}")
    h = entropy(softmax(stable), epsilon)
    conf = np.clip(1.0 - np.asarray(h) / np.log(k), 0.0, 1.0)
    return float(conf) if conf.ndim == 0 else conf


def layer_confidence(attn_logits, ffn_logits, epsilon: float = DEFAULT_EPSILON):
    """Mean of the attention-sublayer and FFN-sublayer confidences."""
    attn = np.asarray(attn_logits)
    ffn = np.asarray(ffn_logits)
    if attn.shape != ffn.shape:
        raise InvalidInputError(
            f"sublayer logits disagree in shape: {attn.shape} vs {ffn.shape}"
        )
    both = confidence_from_logits(np.stack([attn, ffn]), epsilon)
    merged = both.mean(axis=0)
    return float(merged) if np.ndim(merged) == 0 else merged


@dataclass(frozen=True)
class ConfidenceProfile:
    """Per-layer confidence over the considered layers ``1 .. num_layers-2``."""

    layers: tuple[int, ...]
    confidences: tuple[float, ...]
    num_layers: int

    def __post_init__(self):
        if self.num_layers < 3:
            raise InvalidInputError(f"num_layers must be >= 3, got {self.num_layers}")
        if tuple(self.layers) != tuple(range(1, self.num_layers - 1)):
            raise InvalidInputError(
                "profile must cover exactly the considered layers 1..num_layers-2"
            )
        if len(self.confidences) != len(self.layers):
            raise InvalidInputError("one confidence per layer is required")
        for c in self.confidences:
            if not 0.0 <= c <= 1.0:
                raise InvalidInputError(f"confidence {c} outside [0, 1]")

    @classmethod
    def from_values(cls, confidences: Sequence[float], num_layers: int | None = None):
        """Build a profile from considered-layer values; ``num_layers`` defaults to len+2."""
        values = tuple(float(c) for c in confidences)
        total = len(values) + 2 if num_layers is None else num_layers
        return cls(tuple(range(1, total - 1)), values, total)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.confidences, dtype=np.float64)

    def __len__(self):
        return len(self.layers)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "layers": list(self.layers),
            "confidences": list(self.confidences),
        }


def build_profile(
    window: Iterable, num_layers: int, epsilon: float = DEFAULT_EPSILON
) -> ConfidenceProfile:
    """Average layer confidences over a window of backend step outputs.

    Each element needs a ``sublayer_logits`` mapping of layer index to an
    ``(attn, ffn)`` logit pair covering every considered layer.
    """
    steps = list(window)
    if not steps:
        raise InvalidInputError("confidence window is empty")
    layers = tuple(range(1, num_layers - 1))
    stacked = []
    for pos, step in enumerate(steps):
        subs = step.sublayer_logits
        if subs is None or any(layer not in subs for layer in layers):
            raise InvalidInputError(
                f"window entry {pos} lacks sublayer logits for some considered layer"
            )
        stacked.append([[subs[layer][0], subs[layer][1]] for layer in layers])
    # (tokens, layers, 2 sublayers, K)
    conf = confidence_from_logits(np.asarray(stacked), epsilon)
    per_token = conf.mean(axis=-1)
    per_layer = per_token.mean(axis=0)
    return ConfidenceProfile(layers, tuple(float(c) for c in per_layer), num_layers)
