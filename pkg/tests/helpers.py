"""Independent oracles used across the test suite.

Everything here is deliberately written against the definitions, not
against the package's implementation paths, so the two sides of each check
stay independent.
"""

from __future__ import annotations

import math

import numpy as np


def brute_force_rouge_counts(pred, ref, n):
    """(matched, pred total, ref total) by greedy one-to-one gram matching."""
    pred_grams = [tuple(pred[i:i + n]) for i in range(len(pred) - n + 1)]
    ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
    used = [False] * len(ref_grams)
    matched = 0
    for gram in pred_grams:
        for j, candidate in enumerate(ref_grams):
            if not used[j] and candidate == gram:
                used[j] = True
                matched += 1
                break
    return matched, len(pred_grams), len(ref_grams)


def brute_force_rouge(pred, ref, n):
    """(P, R, F1) from the brute-force counts with 0/0 -> 0."""
    matched, pt, rt = brute_force_rouge_counts(pred, ref, n)
    p = matched / pt if pt else 0.0
    r = matched / rt if rt else 0.0
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


def brute_force_tfidf_weights(corpus, tokens):
    """token -> count * idf for one sentence, recomputed from scratch."""
    n = len(corpus)
    weights = {}
    for tok in set(tokens):
        df = sum(1 for sent in corpus if tok in sent)
        if df == 0:
            continue
        idf = math.log((1 + n) / (1 + df)) + 1.0
        weights[tok] = tokens.count(tok) * idf
    return weights


def brute_force_cosine(wa: dict, wb: dict) -> float:
    dot = sum(w * wb.get(t, 0.0) for t, w in wa.items())
    na = math.sqrt(sum(w * w for w in wa.values()))
    nb = math.sqrt(sum(w * w for w in wb.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def numeric_gradients(loss_fn, params: dict[str, np.ndarray], h: float = 1e-5,
                      coords_per_param: int | None = None, rng=None):
    """Central finite differences of loss_fn() w.r.t. the arrays in `params`.

    loss_fn takes no arguments and reads the (mutated in place) arrays.
    With coords_per_param set, only a random sample of coordinates per
    parameter is filled in; the rest stay NaN so callers can mask them.
    """
    grads = {}
    for name in sorted(params):
        arr = params[name]
        flat = arr.reshape(-1)
        out = np.full(flat.shape, np.nan)
        if coords_per_param is None or coords_per_param >= flat.size:
            indices = range(flat.size)
        else:
            indices = rng.choice(flat.size, size=coords_per_param, replace=False)
        for i in indices:
            original = flat[i]
            flat[i] = original + h
            up = loss_fn()
            flat[i] = original - h
            down = loss_fn()
            flat[i] = original
            out[i] = (up - down) / (2.0 * h)
        grads[name] = out.reshape(arr.shape)
    return grads


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, 1e-6) where numeric is defined (non-NaN)."""
    mask = ~np.isnan(numeric)
    a = analytic[mask]
    n = numeric[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    return np.abs(a - n) / denom
