"""Independent reference implementations used to check the library.

Nothing here imports ``conflayers``.  The confidence oracle runs in mpmath at
50 significant digits; the filter oracle is written straight-line over plain
Python lists with ``math.fsum``.
"""

from __future__ import annotations

import math

import mpmath

DPS = 50


def stabilize(logits, bound=50.0):
    out = []
    for v in logits:
        v = float(v)
        if math.isnan(v):
            v = 0.0
        out.append(min(bound, max(-bound, v)))
    return out


def softmax_mp(logits):
    with mpmath.workdps(DPS):
        xs = [mpmath.mpf(v) for v in logits]
        top = max(xs)
        exps = [mpmath.exp(v - top) for v in xs]
        total = mpmath.fsum(exps)
        return [e / total for e in exps]


def entropy_mp(probs, eps=1e-10):
    with mpmath.workdps(DPS):
        eps = mpmath.mpf(eps)
        return -mpmath.fsum(p * mpmath.log(mpmath.mpf(p) + eps) for p in probs)


def confidence_mp(logits, eps=1e-10, bound=50.0):
    k = len(logits)
    with mpmath.workdps(DPS):
        p = softmax_mp(stabilize(logits, bound))
        c = 1 - entropy_mp(p, eps) / mpmath.log(k)
        return float(min(1, max(0, c)))


def layer_confidence_mp(attn, ffn, eps=1e-10):
    return (confidence_mp(attn, eps) + confidence_mp(ffn, eps)) / 2.0


def profile_from_trace_records(records, num_layers, eps=1e-10):
    """Mean layer confidence per considered layer over ``records``.

    ``records`` are parsed trace lines with a ``sublayers`` list ordered by
    layer 1 .. num_layers-2.
    """
    sums = [0.0] * (num_layers - 2)
    for rec in records:
        for j, (attn, ffn) in enumerate(rec["sublayers"]):
            sums[j] += layer_confidence_mp(attn, ffn, eps)
    return [s / len(records) for s in sums]


# -- filter --------------------------------------------------------------------


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _pstd(xs):
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))


def filter_oracle(
    confidences,
    num_layers,
    lam=0.3,
    w_base=2,
    eps=1e-10,
    tol=1e-4,
    bounds=None,
):
    """Straight-line skip-set selection.  Returns ``(marked, chosen)`` lists.

    ``bounds`` is ``None`` or ``(min_ratio, max_ratio)``.
    """
    c = [float(v) for v in confidences]
    n = len(c)
    layers = list(range(1, n + 1))

    mu, sd = _mean(c), _pstd(c)
    z = [(v - mu) / (sd + eps) for v in c]

    d2 = [0.0] * n
    for i in range(1, n - 1):
        d2[i] = abs(z[i + 1] - 2 * z[i] + z[i - 1])
    d2[0], d2[n - 1] = d2[1], d2[n - 2]
    lo, hi = min(d2), max(d2)
    g = [0.0] * n if hi == lo else [(v - lo) / (hi - lo) for v in d2]

    plateau = 1
    while plateau < n and abs(c[plateau] - c[0]) < tol:
        plateau += 1

    margins = []
    for i in range(n):
        w = w_base + plateau * g[i] * (layers[i] / num_layers)
        w = max(w_base, int(math.floor(w + 0.5)))
        neigh = [z[j] for j in range(max(0, i - w), min(n, i + w + 1)) if j != i]
        threshold = _mean(neigh) - lam * _pstd(neigh)
        margins.append(z[i] - threshold)

    marked = [layers[i] for i in range(n) if margins[i] < 0]
    chosen = list(marked)
    if bounds is not None:
        need = math.ceil(bounds[0] * num_layers - 1e-9)
        cap = min(math.floor(bounds[1] * num_layers + 1e-9), n)
        if len(chosen) < need:
            extra = sorted(
                (margins[i], layers[i]) for i in range(n) if layers[i] not in marked
            )
            chosen += [layer for _, layer in extra[: need - len(chosen)]]
        elif len(chosen) > cap:
            drop = sorted((-margins[i], layers[i]) for i in range(n) if layers[i] in marked)
            gone = {layer for _, layer in drop[: len(chosen) - cap]}
            chosen = [layer for layer in chosen if layer not in gone]
    return marked, sorted(chosen)
