"""Neural core: a shared-weight transformer over each document's tokens,
graph-biased self-attention over the cluster's sentences, multi-head
weighted pooling into one cluster vector, sub-graph encoding for candidate
summaries, and the per-sentence score head.

All blocks are pre-norm residual transformers. The sentence-level layers
add theta*R + beta*R_prime to every head's attention logits, where R and
R_prime are the Gaussian biases of the similarity matrices; theta and beta
are fixed mixing weights, not trained.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .graph import BIAS_FORMS, BiasMatrices, ClusterGraph, bias_matrices
from .numerics import ParamStore, Tape, Tensor, derive_rng
from .textproc import Cluster, Document

logger = logging.getLogger(__name__)

# Sentence-position and document-position tables are fixed-size; indices
# beyond them saturate at the last slot. 16 matches the input format's
# documents-per-cluster ceiling.
MAX_DOC_SLOTS = 16


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden: int = 256
    ffn: int = 1024
    heads: int = 8
    token_layers: int = 6
    graph_layers: int = 2
    theta: float = 0.85
    beta: float = 0.15
    sigma: float = 1.0
    dropout_p: float = 0.1
    max_tokens_per_doc: int = 512
    max_sentences: int = 128
    bias_form: str = "paper"
    use_position_embeddings: bool = True
    tie_subgraph_params: bool = False

    def __post_init__(self):
        problems = []
        for key in ("vocab_size", "hidden", "ffn", "heads", "token_layers",
                    "graph_layers", "max_tokens_per_doc", "max_sentences"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.hidden % self.heads != 0:
            problems.append(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.theta < 0.0 or self.beta < 0.0:
            problems.append(f"theta and beta must be >= 0, got {self.theta}, {self.beta}")
        if self.sigma <= 0.0:
            problems.append(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.dropout_p < 1.0:
            problems.append(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.bias_form not in BIAS_FORMS:
            problems.append(f"bias_form must be one of {BIAS_FORMS}, got {self.bias_form!r}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


class Vocabulary:
    """Frequency-ranked token -> id map; id 0 is the out-of-vocabulary slot."""

    UNK = "<unk>"

    def __init__(self, tokens: Sequence[str]):
        self._tokens: tuple[str, ...] = (self.UNK, *tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, token_lists: Sequence[Sequence[str]], max_size: int) -> "Vocabulary":
        """Most frequent tokens first, ties alphabetical; capped at max_size ids."""
        if max_size < 2:
            raise ValueError(f"vocabulary needs room for at least one token, got max_size={max_size}")
        counts: Counter = Counter()
        for toks in token_lists:
            counts.update(toks)
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ranked[: max_size - 1])

    def id(self, token: str) -> int:
        return self._ids.get(token, 0)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def __len__(self) -> int:
        return len(self._tokens)

    def to_list(self) -> list[str]:
        """Serializable token list, excluding the implicit unk slot."""
        return list(self._tokens[1:])


class ForwardContext:
    """Parameters, config, and mode for one forward pass.

    Dropout masks come from a stream derived from (seed, step) and consumed
    in call order, so a fixed (seed, step) replays identical masks; a fresh
    context must be created per forward pass so the stream restarts.
    """

    def __init__(
        self,
        store: ParamStore,
        cfg: EncoderConfig,
        mode: str = "eval",
        tape: Tape | None = None,
        seed: int = 0,
        step: int = 0,
    ):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.store = store
        self.cfg = cfg
        self.mode = mode
        self.tape = tape
        self.seed = seed
        self.step = step
        self._rng: np.random.Generator | None = None

    def param(self, name: str) -> Tensor:
        array = self.store.params[name]
        if self.tape is not None:
            return self.tape.leaf(name, array)
        return Tensor(array)

    def dropout(self, x: Tensor) -> Tensor:
        if self.mode != "train" or self.cfg.dropout_p == 0.0:
            return x
        if self._rng is None:
            self._rng = derive_rng(self.seed, "dropout", self.step)
        return nm.dropout(x, self.cfg.dropout_p, "train", self._rng)


def _add_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, seed: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    store.add(name + "/w", derive_rng(seed, "init", name).uniform(-bound, bound, (fan_in, fan_out)))
    store.add(name + "/b", np.zeros(fan_out))


def _add_layer(store: ParamStore, prefix: str, cfg: EncoderConfig, seed: int) -> None:
    h = cfg.hidden
    store.add(prefix + "ln1/g", np.ones(h))
    store.add(prefix + "ln1/b", np.zeros(h))
    for proj in ("wq", "wk", "wv", "wo"):
        _add_linear(store, prefix + "attn/" + proj, h, h, seed)
    store.add(prefix + "ln2/g", np.ones(h))
    store.add(prefix + "ln2/b", np.zeros(h))
    _add_linear(store, prefix + "ffn/l1", h, cfg.ffn, seed)
    _add_linear(store, prefix + "ffn/l2", cfg.ffn, h, seed)


def _add_pool(store: ParamStore, prefix: str, cfg: EncoderConfig, seed: int) -> None:
    _add_linear(store, prefix + "score", cfg.hidden, cfg.heads, seed)
    _add_linear(store, prefix + "value", cfg.hidden, cfg.hidden, seed)
    _add_linear(store, prefix + "out", cfg.hidden, cfg.hidden, seed)


def init_params(cfg: EncoderConfig, seed: int = 0) -> ParamStore:
    """Fresh trainable parameters: N(0, 0.02) embeddings, fan-in uniform linears.

    Initialization is salted per parameter name, so values do not depend on
    creation order.
    """
    store = ParamStore()
    for name, rows in (
        ("embed/token", cfg.vocab_size),
        ("embed/sent_pos", cfg.max_sentences),
        ("embed/doc_pos", MAX_DOC_SLOTS),
    ):
        store.add(name, derive_rng(seed, "init", name).normal(0.0, 0.02, (rows, cfg.hidden)))
    for i in range(cfg.token_layers):
        _add_layer(store, f"tok{i}/", cfg, seed)
    for i in range(cfg.graph_layers):
        _add_layer(store, f"graph{i}/", cfg, seed)
    _add_pool(store, "pool/", cfg, seed)
    if not cfg.tie_subgraph_params:
        for i in range(cfg.graph_layers):
            _add_layer(store, f"sub{i}/", cfg, seed)
        _add_pool(store, "subpool/", cfg, seed)
    _add_linear(store, "head/score", cfg.hidden, 1, seed)
    return store


def subgraph_prefixes(cfg: EncoderConfig) -> tuple[str, str]:
    """(layer prefix stem, pooling prefix) used by the sub-graph encoder."""
    if cfg.tie_subgraph_params:
        return "graph", "pool/"
    return "sub", "subpool/"


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position signal added to token embeddings."""
    position = np.arange(length, dtype=np.float64)[:, None]
    index = np.arange(dim, dtype=np.float64)[None, :]
    angle = position / np.power(10000.0, 2.0 * np.floor(index / 2.0) / dim)
    return np.where(index % 2 == 0, np.sin(angle), np.cos(angle))


def transformer_layer(
    x: Tensor,
    prefix: str,
    ctx: ForwardContext,
    attn_bias: np.ndarray | None = None,
    alpha_sink: list[Tensor] | None = None,
) -> Tensor:
    """Pre-norm transformer block over the rows of x.

    attn_bias, when given, is added to every head's attention logits before
    the softmax. Dropout is applied to the input of every linear map in
    train mode.
    """
    cfg = ctx.cfg
    dh = cfg.head_dim
    p = ctx.param
    n = x.data.shape[0]
    if attn_bias is not None and attn_bias.shape != (n, n):
        raise nm.ShapeError(f"attention bias shape {attn_bias.shape} does not match {n} rows")
    normed = nm.layer_norm(x, p(prefix + "ln1/g"), p(prefix + "ln1/b"))
    q = nm.affine(ctx.dropout(normed), p(prefix + "attn/wq/w"), p(prefix + "attn/wq/b"))
    k = nm.affine(ctx.dropout(normed), p(prefix + "attn/wk/w"), p(prefix + "attn/wk/b"))
    v = nm.affine(ctx.dropout(normed), p(prefix + "attn/wv/w"), p(prefix + "attn/wv/b"))
    bias_t = Tensor(attn_bias) if attn_bias is not None else None
    heads = []
    for h in range(cfg.heads):
        qh = nm.slice_cols(q, h * dh, (h + 1) * dh)
        kh = nm.slice_cols(k, h * dh, (h + 1) * dh)
        vh = nm.slice_cols(v, h * dh, (h + 1) * dh)
        logits = nm.scale(nm.matmul(qh, nm.transpose(kh)), 1.0 / math.sqrt(dh))
        if bias_t is not None:
            logits = nm.add(logits, bias_t)
        alpha = nm.softmax_rows(logits)
        if alpha_sink is not None:
            alpha_sink.append(alpha)
        heads.append(nm.matmul(alpha, vh))
    merged = heads[0] if len(heads) == 1 else nm.concat(heads, axis=1)
    x = nm.add(x, nm.affine(ctx.dropout(merged), p(prefix + "attn/wo/w"), p(prefix + "attn/wo/b")))
    normed2 = nm.layer_norm(x, p(prefix + "ln2/g"), p(prefix + "ln2/b"))
    inner = nm.relu(nm.affine(ctx.dropout(normed2), p(prefix + "ffn/l1/w"), p(prefix + "ffn/l1/b")))
    outer = nm.affine(ctx.dropout(inner), p(prefix + "ffn/l2/w"), p(prefix + "ffn/l2/b"))
    return nm.add(x, outer)


def graph_attention_layer(
    x: Tensor,
    r: np.ndarray,
    r_prime: np.ndarray,
    theta: float,
    beta: float,
    prefix: str,
    ctx: ForwardContext,
    alpha_sink: list[Tensor] | None = None,
) -> Tensor:
    """Transformer block whose logits get theta*R + beta*R_prime.

    theta = beta = 0 degenerates to a plain transformer layer, bit for bit.
    """
    if theta == 0.0 and beta == 0.0:
        bias = None
    else:
        bias = theta * np.asarray(r, dtype=np.float64) + beta * np.asarray(r_prime, dtype=np.float64)
    return transformer_layer(x, prefix, ctx, attn_bias=bias, alpha_sink=alpha_sink)


@dataclass(eq=False)
class SentenceEncodings:
    """Per-sentence representations for one cluster; rows follow node ids."""

    X: Tensor
    doc_of: tuple[int, ...]


def _token_spans(doc: Document, vocab: Vocabulary, budget: int) -> tuple[list[tuple[int, int]], list[int]]:
    """Token ids for a document plus per-sentence (start, stop) spans.

    A document over budget is truncated, but every sentence keeps at least
    one token so it can still be encoded as a graph node.
    """
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    remaining = budget
    truncated = False
    for sent in doc.sentences:
        keep = len(sent.tokens) if len(sent.tokens) <= remaining else max(1, remaining)
        if keep < len(sent.tokens):
            truncated = True
        start = len(ids)
        ids.extend(vocab.encode(sent.tokens[:keep]))
        spans.append((start, len(ids)))
        remaining = max(0, remaining - keep)
    if truncated:
        logger.warning(
            "document %r exceeds %d tokens; sentences truncated (each keeps >= 1 token)",
            doc.doc_id, budget,
        )
    return spans, ids


def encode_documents(
    cluster: Cluster,
    graph: ClusterGraph,
    vocab: Vocabulary,
    ctx: ForwardContext,
    alpha_sink: list[Tensor] | None = None,
) -> SentenceEncodings:
    """Token layers per document (shared weights), then sentence-level
    graph-biased layers over the whole cluster.

    A sentence representation is the mean of its token vectors, plus learned
    sentence-position and document-position embeddings when enabled.
    """
    cfg = ctx.cfg
    rows: list[Tensor] = []
    sent_pos: list[int] = []
    doc_pos: list[int] = []
    for doc_index, doc in enumerate(cluster.documents):
        if not doc.sentences:
            raise ValueError(f"document {doc.doc_id!r} has no sentences")
        spans, ids = _token_spans(doc, vocab, cfg.max_tokens_per_doc)
        tokens = nm.gather_rows(ctx.param("embed/token"), ids)
        tokens = nm.add(tokens, Tensor(sinusoidal_positions(len(ids), cfg.hidden)))
        for layer in range(cfg.token_layers):
            tokens = transformer_layer(tokens, f"tok{layer}/", ctx, alpha_sink=alpha_sink)
        for sent, (start, stop) in zip(doc.sentences, spans):
            rows.append(nm.mean_rows(nm.slice_rows(tokens, start, stop)))
            sent_pos.append(min(sent.sent_index, cfg.max_sentences - 1))
            doc_pos.append(min(doc_index, MAX_DOC_SLOTS - 1))
    if len(rows) != graph.n:
        raise nm.ShapeError(f"cluster has {len(rows)} sentences but graph has {graph.n} nodes")
    x = nm.stack_rows(rows)
    if cfg.use_position_embeddings:
        positions = nm.add(
            nm.gather_rows(ctx.param("embed/sent_pos"), sent_pos),
            nm.gather_rows(ctx.param("embed/doc_pos"), doc_pos),
        )
        x = nm.add(x, positions)
    biases = bias_matrices(graph, cfg.bias_form)
    for layer in range(cfg.graph_layers):
        x = graph_attention_layer(
            x, biases.R, biases.R_prime, cfg.theta, cfg.beta, f"graph{layer}/", ctx,
            alpha_sink=alpha_sink,
        )
    return SentenceEncodings(X=x, doc_of=graph.doc_of)


def pool_graph(
    x: Tensor,
    ctx: ForwardContext,
    prefix: str = "pool/",
    alpha_sink: list[Tensor] | None = None,
) -> Tensor:
    """Multi-head weighted pooling of sentence rows into one vector.

    Each head scores every sentence with a learned projection, softmaxes
    over sentences, and takes the weighted sum of its value slice; head
    outputs are concatenated and projected back to model width.
    """
    cfg = ctx.cfg
    dh = cfg.head_dim
    p = ctx.param
    scores = nm.affine(ctx.dropout(x), p(prefix + "score/w"), p(prefix + "score/b"))
    alpha = nm.softmax_rows(nm.transpose(scores))  # (heads, sentences)
    if alpha_sink is not None:
        alpha_sink.append(alpha)
    values = nm.affine(ctx.dropout(x), p(prefix + "value/w"), p(prefix + "value/b"))
    pooled = [
        nm.matmul(nm.slice_rows(alpha, h, h + 1), nm.slice_cols(values, h * dh, (h + 1) * dh))
        for h in range(cfg.heads)
    ]
    merged = pooled[0] if len(pooled) == 1 else nm.concat(pooled, axis=1)
    out = nm.affine(ctx.dropout(merged), p(prefix + "out/w"), p(prefix + "out/b"))
    return nm.reshape(out, (cfg.hidden,))


def encode_subgraph(
    x: Tensor,
    members: Sequence[int],
    graph: ClusterGraph,
    ctx: ForwardContext,
    biases: BiasMatrices | None = None,
    alpha_sink: list[Tensor] | None = None,
) -> Tensor:
    """Encode the induced sub-graph over `members` into one vector.

    Rows of x and the bias matrices are restricted to the member set (order
    and duplicates in `members` are irrelevant), run through the sub-graph
    attention layers, and pooled. Pass precomputed `biases` when encoding
    many sub-graphs of the same cluster.
    """
    unique = tuple(sorted({int(m) for m in members}))
    if not unique:
        raise ValueError("sub-graph member set is empty")
    if unique[0] < 0 or unique[-1] >= graph.n:
        raise ValueError(f"sub-graph members {unique} out of range for {graph.n} nodes")
    cfg = ctx.cfg
    layer_stem, pool_prefix = subgraph_prefixes(cfg)
    selected = nm.gather_rows(x, unique)
    if biases is None:
        biases = bias_matrices(graph, cfg.bias_form)
    idx = np.asarray(unique)
    r = biases.R[np.ix_(idx, idx)]
    r_prime = biases.R_prime[np.ix_(idx, idx)]
    for layer in range(cfg.graph_layers):
        selected = graph_attention_layer(
            selected, r, r_prime, cfg.theta, cfg.beta, f"{layer_stem}{layer}/", ctx,
            alpha_sink=alpha_sink,
        )
    return pool_graph(selected, ctx, prefix=pool_prefix, alpha_sink=alpha_sink)


def sentence_scores(x: Tensor, ctx: ForwardContext) -> Tensor:
    """Per-sentence selection probability: sigmoid of a learned projection."""
    logits = nm.affine(ctx.dropout(x), ctx.param("head/score/w"), ctx.param("head/score/b"))
    return nm.sigmoid(nm.reshape(logits, (x.data.shape[0],)))
