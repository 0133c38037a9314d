"""Turn a per-layer confidence profile into a set of layers to skip.

Pipeline: global z-score of the confidences, absolute second difference
rescaled to [0, 1], a per-layer window that widens with curvature and depth,
and finally the local-baseline test ``c_hat < mean_local - lam * std_local``
with the current layer left out of its own neighbourhood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .confidence import ConfidenceProfile
from .errors import ConfigError, InvalidInputError


@dataclass(frozen=True)
class SkipSet:
    """Sorted layer indices bypassed by the draft model.

    The first and last layer are never skip candidates.
    """

    layers: tuple[int, ...]
    num_layers: int

    def __post_init__(self):
        layers = tuple(int(i) for i in self.layers)
        object.__setattr__(self, "layers", layers)
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise InvalidInputError(f"skip set must be strictly increasing: {layers}")
        for i in layers:
            if not 1 <= i <= self.num_layers - 2:
                raise InvalidInputError(
                    f"layer {i} cannot be skipped in a {self.num_layers}-layer model"
                )

    @classmethod
    def of(cls, layers: Iterable[int], num_layers: int) -> "SkipSet":
        return cls(tuple(sorted(set(int(i) for i in layers))), num_layers)

    @classmethod
    def empty(cls, num_layers: int) -> "SkipSet":
        return cls((), num_layers)

    @property
    def skip_ratio(self) -> float:
        return len(self.layers) / self.num_layers

    def __len__(self):
        return len(self.layers)

    def __contains__(self, layer):
        return layer in self.layers

    def __iter__(self):
        return iter(self.layers)


@dataclass(frozen=True)
class FilterConfig:
    w_base: int = 2
    lam: float = 0.3
    epsilon: float = 1e-10
    min_skip_ratio: float = 0.40
    max_skip_ratio: float = 0.60
    enforce_bounds: bool = True
    plateau_tol: float = 1e-4

    def __post_init__(self):
        if self.w_base < 1:
            raise ConfigError(f"w_base must be >= 1, got {self.w_base}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 <= self.min_skip_ratio < 1.0:
            raise ConfigError(f"min_skip_ratio {self.min_skip_ratio} outside [0, 1)")
        if not self.min_skip_ratio < self.max_skip_ratio <= 1.0:
            raise ConfigError("need min_skip_ratio < max_skip_ratio <= 1")


def normalize(profile, epsilon: float = 1e-10) -> np.ndarray:
    """Z-score with population std: ``(c - mean) / (std + epsilon)``."""
    c = _as_values(profile)
    if c.size == 0:
        raise InvalidInputError("cannot normalize an empty profile")
    return (c - c.mean()) / (c.std() + epsilon)


def curvature(norm) -> np.ndarray:
    """Absolute second difference of ``norm``, min-max rescaled into [0, 1].

    Endpoints reuse the one-sided difference of their three nearest points.
    A flat result (max == min) maps to all zeros.
    """
    x = np.asarray(norm, dtype=np.float64)
    n = x.size
    if n < 3:
        raise InvalidInputError(f"curvature needs at least 3 entries, got {n}")
    d2 = np.empty(n)
    d2[1:-1] = x[2:] - 2.0 * x[1:-1] + x[:-2]
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    mag = np.abs(d2)
    lo, hi = mag.min(), mag.max()
    if hi == lo:
        return np.zeros(n)
    return (mag - lo) / (hi - lo)


def derive_w_max(profile, plateau_tol: float = 1e-4) -> int:
    """Length of the leading run of layers whose confidence matches the first one."""
    c = _as_values(profile)
    if c.size == 0:
        raise InvalidInputError("profile is empty")
    run = 1
    while run < c.size and abs(c[run] - c[0]) < plateau_tol:
        run += 1
    return run


def window_size(w_base: int, w_max: int, g_i: float, layer_index: int, num_layers: int) -> int:
    raw = w_base + w_max * g_i * (layer_index / num_layers)
    return max(w_base, math.floor(raw + 0.5))


def local_stats(norm, center_index: int, window: int) -> tuple[float, float]:
    """Population mean/std of positions within ``window`` of the centre, centre excluded."""
    x = np.asarray(norm, dtype=np.float64)
    if window < 1:
        raise InvalidInputError(f"window must be >= 1, got {window}")
    lo = max(0, center_index - window)
    hi = min(x.size, center_index + window + 1)
    neigh = np.concatenate([x[lo:center_index], x[center_index + 1 : hi]])
    if neigh.size == 0:
        raise InvalidInputError("neighbourhood is empty")
    return float(neigh.mean()), float(neigh.std())


@dataclass
class FilterResult:
    """Every intermediate of one filter pass, kept for diagnostics."""

    profile: ConfidenceProfile
    config: FilterConfig
    normalized: np.ndarray
    gradient: np.ndarray
    w_max: int
    windows: list[int]
    local_means: list[float]
    local_stds: list[float]
    thresholds: list[float]
    margins: list[float]
    marked: SkipSet
    skip_set: SkipSet
    adjusted: bool = False
    notes: list[str] = field(default_factory=list)

    def diagnostics(self) -> list[dict]:
        rows = []
        for i, layer in enumerate(self.profile.layers):
            rows.append(
                {
                    "layer": layer,
                    "confidence": self.profile.confidences[i],
                    "normalized": float(self.normalized[i]),
                    "gradient": float(self.gradient[i]),
                    "window": self.windows[i],
                    "local_mean": self.local_means[i],
                    "local_std": self.local_stds[i],
                    "threshold": self.thresholds[i],
                    "skipped": layer in self.skip_set,
                }
            )
        return rows


def skip_count_bounds(num_layers: int, cfg: FilterConfig) -> tuple[int, int]:
    """Smallest and largest skip-set sizes allowed by the ratio band."""
    lo = math.ceil(cfg.min_skip_ratio * num_layers - 1e-9)
    hi = math.floor(cfg.max_skip_ratio * num_layers + 1e-9)
    if lo > hi or lo > num_layers - 2:
        raise ConfigError(
            f"skip ratio band [{cfg.min_skip_ratio}, {cfg.max_skip_ratio}] cannot be met "
            f"with {num_layers - 2} candidate layers out of {num_layers}"
        )
    return lo, min(hi, num_layers - 2)


def run_filter(profile: ConfidenceProfile, cfg: FilterConfig) -> FilterResult:
    if len(profile) < 4:
        raise InvalidInputError(f"need at least 4 considered layers, got {len(profile)}")
    n_layers = profile.num_layers
    norm = normalize(profile, cfg.epsilon)
    grad = curvature(norm)
    w_max = derive_w_max(profile, cfg.plateau_tol)

    windows, means, stds, thresholds, margins = [], [], [], [], []
    for i, layer in enumerate(profile.layers):
        w = window_size(cfg.w_base, w_max, float(grad[i]), layer, n_layers)
        mu, sigma = local_stats(norm, i, w)
        threshold = mu - cfg.lam * sigma
        windows.append(w)
        means.append(mu)
        stds.append(sigma)
        thresholds.append(threshold)
        margins.append(float(norm[i]) - threshold)

    marked = [layer for layer, m in zip(profile.layers, margins) if m < 0]
    chosen = list(marked)
    notes = []
    if cfg.enforce_bounds:
        lo, hi = skip_count_bounds(n_layers, cfg)
        # Closest-to-threshold first; ties go to the lower layer index.
        if len(chosen) < lo:
            pool = sorted(
                (m, layer) for layer, m in zip(profile.layers, margins) if layer not in marked
            )
            added = [layer for _, layer in pool[: lo - len(chosen)]]
            chosen += added
            notes.append(f"added {added} to reach {lo} skipped layers")
        elif len(chosen) > hi:
            pool = sorted(
                (-m, layer) for layer, m in zip(profile.layers, margins) if layer in marked
            )
            removed = {layer for _, layer in pool[: len(chosen) - hi]}
            chosen = [layer for layer in chosen if layer not in removed]
            notes.append(f"removed {sorted(removed)} to stay at {hi} skipped layers")

    return FilterResult(
        profile=profile,
        config=cfg,
        normalized=norm,
        gradient=grad,
        w_max=w_max,
        windows=windows,
        local_means=means,
        local_stds=stds,
        thresholds=thresholds,
        margins=margins,
        marked=SkipSet.of(marked, n_layers),
        skip_set=SkipSet.of(chosen, n_layers),
        adjusted=bool(notes),
        notes=notes,
    )


def select_skip_layers(profile: ConfidenceProfile, cfg: FilterConfig) -> SkipSet:
    return run_filter(profile, cfg).skip_set


def _as_values(profile) -> np.ndarray:
    if isinstance(profile, ConfidenceProfile):
        return profile.values
    return np.asarray(profile, dtype=np.float64)


__all__ = [
    "FilterConfig",
    "FilterResult",
    "SkipSet",
    "curvature",
    "derive_w_max",
    "local_stats",
    "normalize",
    "run_filter",
    "select_skip_layers",
    "skip_count_bounds",
    "window_size",
]
