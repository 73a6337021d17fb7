"""Candidate construction, greedy oracle extraction, the ranking losses,
and inference-time sub-graph selection.

Training ranks candidates by their ROUGE against the gold summary and
pushes their encoded vectors into the same cosine order around the oracle
sub-graph; at inference the candidate closest to the pooled cluster vector
wins.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import Tensor
from .rouge import rouge_n
from .textproc import Cluster

logger = logging.getLogger(__name__)

# Subset enumeration is combinatorial; refuse configurations that would
# emit more candidates than this instead of silently grinding.
MAX_CANDIDATES = 20_000

ORACLE_OBJECTIVES = ("mean12", "rouge2")


@dataclass
class CandidateSummary:
    """A sorted sentence-index set forming one candidate sub-graph."""

    members: tuple[int, ...]
    rouge_rank_score: float = 0.0
    repr: Tensor | None = field(default=None, repr=False)


@dataclass(frozen=True)
class OracleSummary:
    """Greedy-extracted gold sentence set with its final objective score.

    `order` preserves the greedy pick sequence; `members` is the same set
    sorted by sentence index.
    """

    members: tuple[int, ...]
    score: float
    order: tuple[int, ...] = ()


@dataclass(frozen=True)
class TrainLabels:
    y: tuple[int, ...]


def _subset_tokens(cluster: Cluster, members: Sequence[int]) -> list[str]:
    sentences = cluster.sentences()
    return [tok for i in sorted(members) for tok in sentences[i].tokens]


def subset_rouge(
    cluster: Cluster,
    members: Sequence[int],
    reference: Sequence[str],
    objective: str = "mean12",
) -> float:
    """ROUGE objective of a sentence subset against reference tokens."""
    if objective not in ORACLE_OBJECTIVES:
        raise ValueError(f"objective must be one of {ORACLE_OBJECTIVES}, got {objective!r}")
    pred = _subset_tokens(cluster, members)
    r2 = rouge_n(pred, reference, 2).f1
    if objective == "rouge2":
        return r2
    r1 = rouge_n(pred, reference, 1).f1
    return 0.5 * (r1 + r2)


def sentence_rouge_ranking(cluster: Cluster, reference: Sequence[str]) -> list[tuple[float, float]]:
    """Per-sentence (ROUGE-2 F1, ROUGE-1 F1) against the reference tokens.

    The pair compares lexicographically, so ROUGE-1 only breaks ties.
    """
    if not reference:
        raise ValueError("reference token list is empty")
    ref = list(reference)
    return [
        (rouge_n(s.tokens, ref, 2).f1, rouge_n(s.tokens, ref, 1).f1)
        for s in cluster.sentences()
    ]


def generate_candidates(scores: Sequence, k: int, sizes: Sequence[int]) -> list[CandidateSummary]:
    """Every subset of each requested size over the top-k scored sentences.

    Ties in the score ranking go to the lower sentence index. Emission is
    deterministic: sizes ascending, member tuples lexicographic within each
    size. Sizes larger than the available top set yield nothing.
    """
    size_set = sorted({int(m) for m in sizes})
    if not size_set or size_set[0] < 1:
        raise ValueError(f"candidate sizes must be >= 1, got {sorted(sizes)}")
    if k < size_set[-1]:
        raise ValueError(f"k ({k}) must be >= the largest candidate size ({size_set[-1]})")
    n = len(scores)
    if n < size_set[0]:
        raise ValueError(f"cluster has {n} sentences, fewer than the smallest candidate size {size_set[0]}")
    ranked = sorted(range(n), key=lambda i: (scores[i], -i), reverse=True)
    top = sorted(ranked[:k])
    total = sum(math.comb(len(top), m) for m in size_set if m <= len(top))
    if total > MAX_CANDIDATES:
        raise ValueError(
            f"candidate enumeration would emit {total} subsets (> {MAX_CANDIDATES}); "
            f"reduce k or the candidate sizes"
        )
    return [
        CandidateSummary(members=combo)
        for m in size_set
        for combo in itertools.combinations(top, m)
    ]


def greedy_oracle(
    cluster: Cluster,
    reference: Sequence[str],
    max_sentences: int,
    objective: str = "mean12",
) -> OracleSummary:
    """Greedily grow the sentence set that maximizes the ROUGE objective.

    Each step adds the sentence with the largest strict improvement (ties
    to the lower index) and stops when nothing improves or max_sentences is
    reached. If no sentence scores above zero at the first pick, the
    lowest-index sentence is taken alone so the oracle is never empty.
    """
    if not reference:
        raise ValueError("reference token list is empty")
    if max_sentences < 1:
        raise ValueError(f"max_sentences must be >= 1, got {max_sentences}")
    ref = list(reference)
    n = cluster.sentence_count
    picked: list[int] = []
    current = 0.0
    while len(picked) < max_sentences:
        best_index = -1
        best_score = current
        for i in range(n):
            if i in picked:
                continue
            score = subset_rouge(cluster, picked + [i], ref, objective)
            if score > best_score:
                best_score = score
                best_index = i
        if best_index < 0:
            if not picked:
                picked.append(0)
            break
        picked.append(best_index)
        current = best_score
    return OracleSummary(members=tuple(sorted(picked)), score=current, order=tuple(picked))


def oracle_labels(n_sentences: int, oracle: OracleSummary) -> TrainLabels:
    """Binary per-sentence labels: 1 iff the sentence is in the oracle set."""
    selected = set(oracle.members)
    return TrainLabels(y=tuple(1 if i in selected else 0 for i in range(n_sentences)))


def rank_candidates(candidates: Sequence[CandidateSummary]) -> list[CandidateSummary]:
    """Sort by rouge_rank_score descending; ties by member tuple."""
    return sorted(candidates, key=lambda c: (-c.rouge_rank_score, c.members))


def loss_pairwise(
    candidates: Sequence[CandidateSummary],
    c_star_repr: Tensor,
    gamma0: float,
) -> Tensor:
    """Mean hinge over all candidate pairs, margin growing with rank gap.

    `candidates` must already be in descending ROUGE order with reprs
    filled; pair (i, j) with i < j contributes
    max(0, cos(C_j, C*) - cos(C_i, C*) + gamma0 * (j - i)).
    """
    if gamma0 < 0.0:
        raise ValueError(f"gamma0 must be >= 0, got {gamma0}")
    k = len(candidates)
    if k < 2:
        logger.warning("pairwise loss needs >= 2 candidates, got %d; returning 0", k)
        return Tensor(0.0)
    cos = nm.stack_scalars([nm.cosine_similarity(c.repr, c_star_repr) for c in candidates])
    # All pairs at once: later[i, j] = cos_j, earlier[i, j] = cos_i; entries
    # with i >= j are zeroed by the strict upper-triangular mask after the
    # hinge, so only i < j contributes to the sum and to gradients.
    row = nm.reshape(cos, (1, k))
    col = nm.reshape(cos, (k, 1))
    later = nm.matmul(Tensor(np.ones((k, 1))), row)
    earlier = nm.matmul(col, Tensor(np.ones((1, k))))
    ranks = np.arange(k, dtype=np.float64)
    margins = gamma0 * (ranks[None, :] - ranks[:, None])
    hinges = nm.relu(nm.add(nm.sub(later, earlier), Tensor(margins)))
    kept = nm.mul(hinges, Tensor(np.triu(np.ones((k, k)), k=1)))
    pairs = k * (k - 1) // 2
    return nm.scale(nm.sum_all(kept), 1.0 / pairs)


def loss_global(d_repr: Tensor, c_star_repr: Tensor) -> Tensor:
    """1 - cos(D, C*); a zero vector on either side is a checked failure."""
    return nm.add_scalar(nm.scale(nm.cosine_similarity(d_repr, c_star_repr), -1.0), 1.0)


def loss_sent(y_hat: Tensor, y: Sequence[int]) -> Tensor:
    """Summed binary cross-entropy with predictions clamped away from {0, 1}."""
    labels = np.asarray(y, dtype=np.float64)
    if labels.ndim != 1 or y_hat.data.shape != labels.shape:
        raise ValueError(f"labels shape {labels.shape} does not match predictions {y_hat.data.shape}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValueError("labels must be 0 or 1")
    clamped = nm.clip(y_hat, 1e-7, 1.0 - 1e-7)
    positive = nm.mul(Tensor(labels), nm.log(clamped))
    negative = nm.mul(Tensor(1.0 - labels), nm.log(nm.add_scalar(nm.scale(clamped, -1.0), 1.0)))
    return nm.scale(nm.sum_all(nm.add(positive, negative)), -1.0)


def total_loss(sent: Tensor, pairwise: Tensor, global_: Tensor) -> Tensor:
    """Unweighted sum of the three loss parts."""
    return nm.add(nm.add(sent, pairwise), global_)


def select_summary(candidates: Sequence[CandidateSummary], d_repr) -> CandidateSummary:
    """argmax over candidates of cos(C_i, D); ties to the smallest member set.

    Members are stored sorted, so emitting them in order preserves the
    original document order.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    d = d_repr.data if isinstance(d_repr, Tensor) else np.asarray(d_repr, dtype=np.float64)
    dn = float(np.linalg.norm(d))

    def cos_to_d(c: CandidateSummary) -> float:
        r = c.repr.data if isinstance(c.repr, Tensor) else np.asarray(c.repr, dtype=np.float64)
        rn = float(np.linalg.norm(r))
        if dn == 0.0 or rn == 0.0:
            return 0.0
        return float(r @ d) / (rn * dn)

    return min(candidates, key=lambda c: (-cos_to_d(c), c.members))
