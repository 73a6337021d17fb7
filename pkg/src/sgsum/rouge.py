"""ROUGE-N precision/recall/F1 over token lists.

Matched counts are clipped (multiset intersection), the only convention
that keeps precision <= 1. All divisions by zero yield 0 for that
component. Tokens come from textproc, so scores are syllable-level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .textproc import ngrams


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)


def rouge_counts(pred: Sequence[str], ref: Sequence[str], n: int) -> tuple[int, int, int]:
    """(matched, predicted n-gram total, reference n-gram total), clipped."""
    pred_grams = ngrams(pred, n)
    ref_grams = ngrams(ref, n)
    matched = sum(min(count, ref_grams[gram]) for gram, count in pred_grams.items())
    return matched, sum(pred_grams.values()), sum(ref_grams.values())


def rouge_n(pred: Sequence[str], ref: Sequence[str], n: int = 2) -> RougeScore:
    """ROUGE-N of a predicted token list against a reference token list."""
    matched, pred_total, ref_total = rouge_counts(pred, ref, n)
    p = matched / pred_total if pred_total else 0.0
    r = matched / ref_total if ref_total else 0.0
    return RougeScore(precision=p, recall=r, f1=_f1(p, r))


def rouge_2_corpus(pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> RougeScore:
    """Micro-averaged ROUGE-2 over (pred, ref) token-list pairs.

    Counts are pooled across pairs and P/R/F1 computed from the aggregates.
    """
    if not pairs:
        raise ValueError("rouge_2_corpus needs at least one (pred, ref) pair")
    matched = pred_total = ref_total = 0
    for pred, ref in pairs:
        m, pt, rt = rouge_counts(pred, ref, 2)
        matched += m
        pred_total += pt
        ref_total += rt
    p = matched / pred_total if pred_total else 0.0
    r = matched / ref_total if ref_total else 0.0
    return RougeScore(precision=p, recall=r, f1=_f1(p, r))
