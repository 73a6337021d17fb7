"""Text substrate: sentence segmentation, syllable-level tokenization,
n-gram counting, and tf-idf vectors with cosine similarity.

Tokens are lowercased Unicode letter/digit runs with diacritics kept, so
Vietnamese text is handled at the syllable level without an external word
segmenter. Every function here is pure; fitted models are immutable.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

# Words that end with '.' mid-sentence and must not trigger a split:
# Vietnamese honorifics/administrative units plus a few Latin staples.
_ABBREVIATIONS = {
    "tp", "q", "p", "ts", "ths", "gs", "pgs", "bs", "ks", "kts", "tt", "vd",
    "mr", "mrs", "ms", "dr", "prof", "st", "no", "vs", "etc",
}

_BOUNDARY = re.compile(r"([.!?…])([\"'”’»)\]]*)\s+")
_OPENING_QUOTES = "\"'“‘«(["
_TOKEN = re.compile(r"[^\W_]+")


def _abbreviation_before(text: str, dot: int) -> bool:
    i = dot
    while i > 0 and text[i - 1].isalpha():
        i -= 1
    word = text[i:dot]
    if not word:
        return False
    if len(word) == 1 and word.isupper():
        return True  # personal initial, e.g. "Nguyễn Văn A."
    return word.lower() in _ABBREVIATIONS


def segment_sentences(text: str) -> list[str]:
    """Split text into sentences at terminal punctuation.

    A boundary is `.` `!` `?` or `…` (plus any closing quotes) followed by
    whitespace and an uppercase letter or digit; an abbreviation guard
    suppresses the most common false splits. Concatenating the result
    reproduces the input up to whitespace.
    """
    pieces: list[str] = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        if match.group(1) == "." and _abbreviation_before(text, match.start(1)):
            continue
        follow = match.end()
        while follow < len(text) and text[follow] in _OPENING_QUOTES:
            follow += 1
        if follow >= len(text):
            continue
        if not (text[follow].isupper() or text[follow].isdigit()):
            continue
        piece = text[start:match.end(2)].strip()
        if piece:
            pieces.append(piece)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces


def tokenize(sentence: str) -> list[str]:
    """Lowercased syllable tokens: Unicode letter/digit runs, punctuation dropped."""
    text = unicodedata.normalize("NFC", sentence)
    return [t.lower() for t in _TOKEN.findall(text)]


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    """All contiguous n-grams of `tokens` with multiplicity."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class SparseVector:
    """Sorted (index, weight) pairs with strictly positive weights."""

    pairs: tuple[tuple[int, float], ...]

    def __post_init__(self):
        last = -1
        for index, weight in self.pairs:
            if index <= last:
                raise ValueError("indices must be strictly increasing")
            if not (weight > 0.0 and math.isfinite(weight)):
                raise ValueError(f"weight at index {index} must be positive and finite, got {weight}")
            last = index

    def norm(self) -> float:
        return math.sqrt(sum(w * w for _, w in self.pairs))


@dataclass(frozen=True)
class TfIdfModel:
    """Smoothed-idf statistics; every training sentence counts as one document."""

    vocabulary: dict[str, int]
    idf: tuple[float, ...]
    doc_count: int


def fit_tfidf(sentences: Sequence[Sequence[str]]) -> TfIdfModel:
    """Fit idf(t) = ln((1+N)/(1+df(t))) + 1 over sentence "documents".

    Raw term counts are used as tf at vectorize time; the +1 smoothing keeps
    every idf strictly positive so cosine stays in [0, 1].
    """
    if not any(len(s) > 0 for s in sentences):
        raise ValueError("cannot fit tf-idf on an empty corpus")
    df: Counter = Counter()
    for toks in sentences:
        df.update(set(toks))
    vocab_tokens = sorted(df)
    n = len(sentences)
    vocabulary = {t: i for i, t in enumerate(vocab_tokens)}
    idf = tuple(math.log((1 + n) / (1 + df[t])) + 1.0 for t in vocab_tokens)
    return TfIdfModel(vocabulary=vocabulary, idf=idf, doc_count=n)


def vectorize(model: TfIdfModel, tokens: Sequence[str]) -> SparseVector:
    """count(t) * idf(t) for in-vocabulary tokens; everything else is ignored."""
    counts = Counter(t for t in tokens if t in model.vocabulary)
    pairs = sorted(
        (model.vocabulary[t], c * model.idf[model.vocabulary[t]])
        for t, c in counts.items()
    )
    return SparseVector(tuple(pairs))


def cosine(u: SparseVector, v: SparseVector) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    nu = u.norm()
    nv = v.norm()
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = 0.0
    i = j = 0
    up, vp = u.pairs, v.pairs
    while i < len(up) and j < len(vp):
        ui, uw = up[i]
        vj, vw = vp[j]
        if ui == vj:
            dot += uw * vw
            i += 1
            j += 1
        elif ui < vj:
            i += 1
        else:
            j += 1
    return dot / (nu * nv)


@dataclass(frozen=True)
class Sentence:
    """One graph node: a sentence with its location in the cluster."""

    cluster_id: str
    doc_index: int
    sent_index: int
    raw_text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]


@dataclass(frozen=True)
class Cluster:
    """A topic cluster of documents; the model's input unit."""

    cluster_id: str
    documents: tuple[Document, ...]
    summary: str | None = None

    def sentences(self) -> list[Sentence]:
        """All sentences in document order; list index is the graph node id."""
        return [s for doc in self.documents for s in doc.sentences]

    @property
    def sentence_count(self) -> int:
        return sum(len(d.sentences) for d in self.documents)


def make_cluster(
    cluster_id: str,
    documents: Sequence[tuple[str, str]],
    summary: str | None = None,
) -> Cluster:
    """Segment and tokenize raw (doc_id, text) pairs into a Cluster.

    Sentences that tokenize to nothing are dropped; a document left with no
    usable sentences is an error because it cannot participate in the graph.
    """
    if not documents:
        raise ValueError(f"cluster {cluster_id!r} has no documents")
    docs: list[Document] = []
    for doc_index, (doc_id, text) in enumerate(documents):
        sents: list[Sentence] = []
        for raw in segment_sentences(text):
            toks = tokenize(raw)
            if not toks:
                continue
            sents.append(
                Sentence(
                    cluster_id=cluster_id,
                    doc_index=doc_index,
                    sent_index=len(sents),
                    raw_text=raw,
                    tokens=tuple(toks),
                )
            )
        if not sents:
            raise ValueError(
                f"document {doc_id!r} in cluster {cluster_id!r} has no sentences with tokens"
            )
        docs.append(Document(doc_id=doc_id, sentences=tuple(sents)))
    return Cluster(cluster_id=cluster_id, documents=tuple(docs), summary=summary)
