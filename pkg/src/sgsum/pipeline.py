"""Dataset ingestion, run configuration, the training loop, evaluation,
inference, the theta/beta sweep harness, and checkpoint persistence.

Datasets are line-delimited JSON: one cluster object per line with fields
cluster_id, documents ([{doc_id, text}, ...]) and an optional summary.
Training is one cluster per optimizer step, epochs are full passes, and
everything is deterministic given (seed, config, data).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .encoder import (
    EncoderConfig,
    ForwardContext,
    Vocabulary,
    encode_documents,
    encode_subgraph,
    init_params,
    pool_graph,
    sentence_scores,
)
from .graph import BIAS_FORMS, TFIDF_SCOPES, ClusterGraph, bias_matrices, build_cluster_graph
from .ioutil import atomic_write_text
from .numerics import ParamStore, Tape, adam_step, clip_global_norm, load_tensors, save_tensors
from .ranking import (
    ORACLE_OBJECTIVES,
    CandidateSummary,
    OracleSummary,
    generate_candidates,
    greedy_oracle,
    loss_global,
    loss_pairwise,
    loss_sent,
    oracle_labels,
    rank_candidates,
    select_summary,
    sentence_rouge_ranking,
    subset_rouge,
    total_loss,
)
from .rouge import rouge_2_corpus, rouge_n
from .textproc import Cluster, fit_tfidf, make_cluster, tokenize

logger = logging.getLogger(__name__)

MAX_DOCUMENTS_PER_CLUSTER = 16

# The published mixing-weight grid, best row last.
DEFAULT_SWEEP_GRID = (
    (0.5, 0.5),
    (0.6, 0.4),
    (0.7, 0.3),
    (0.8, 0.2),
    (1.0, 0.0),
    (0.9, 0.1),
    (0.85, 0.15),
)


class ConfigError(ValueError):
    """Run configuration is invalid; message names every offending key."""


class DataError(ValueError):
    """Dataset file is unreadable or malformed."""


class PipelineError(RuntimeError):
    """A command failed partway (e.g. non-finite loss)."""


@dataclass
class RunConfig:
    """Every knob for training, inference, and the sweep harness."""

    # encoder / graph
    vocab_size: int = 8000
    hidden: int = 256
    ffn: int = 1024
    heads: int = 8
    token_layers: int = 6
    graph_layers: int = 2
    theta: float = 0.85
    beta: float = 0.15
    sigma: float = 1.0
    bias_form: str = "paper"
    dropout: float = 0.1
    max_tokens_per_doc: int = 512
    max_sentences: int = 128
    use_position_embeddings: bool = True
    tie_subgraph_params: bool = False
    # optimizer / training
    lr: float = 0.03
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 2.0
    epochs: int = 5
    seed: int = 0
    # candidates / oracle
    k_candidates: int = 10
    candidate_sizes: tuple[int, ...] = (9,)
    gamma0: float = 0.01
    oracle_max_sentences: int = 9
    oracle_objective: str = "mean12"
    tfidf_scope: str = "per_cluster"
    strict_load: bool = True
    # sweep
    sweep_grid: tuple[tuple[float, float], ...] = DEFAULT_SWEEP_GRID
    # paths (CLI flags override these)
    data: str | None = None
    val_data: str | None = None
    checkpoint: str | None = None
    out: str | None = None

    def validate(self) -> None:
        problems: list[str] = []
        positive_ints = (
            "vocab_size", "hidden", "ffn", "heads", "token_layers", "graph_layers",
            "max_tokens_per_doc", "max_sentences", "k_candidates", "oracle_max_sentences",
        )
        for key in positive_ints:
            value = getattr(self, key)
            if not isinstance(value, int) or value < 1:
                problems.append(f"{key}: must be a positive integer, got {value!r}")
        if isinstance(self.hidden, int) and isinstance(self.heads, int) and self.heads >= 1:
            if self.hidden % self.heads != 0:
                problems.append(f"hidden: {self.hidden} is not divisible by heads={self.heads}")
        for key in ("lr", "sigma", "clip_norm", "adam_eps"):
            if not getattr(self, key) > 0.0:
                problems.append(f"{key}: must be > 0, got {getattr(self, key)!r}")
        for key in ("theta", "beta", "gamma0"):
            if getattr(self, key) < 0.0:
                problems.append(f"{key}: must be >= 0, got {getattr(self, key)!r}")
        for key in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                problems.append(f"{key}: must be in [0, 1), got {getattr(self, key)!r}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout: must be in [0, 1), got {self.dropout!r}")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            problems.append(f"epochs: must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed: must be a non-negative integer, got {self.seed!r}")
        if self.bias_form not in BIAS_FORMS:
            problems.append(f"bias_form: must be one of {BIAS_FORMS}, got {self.bias_form!r}")
        if self.tfidf_scope not in TFIDF_SCOPES:
            problems.append(f"tfidf_scope: must be one of {TFIDF_SCOPES}, got {self.tfidf_scope!r}")
        if self.oracle_objective not in ORACLE_OBJECTIVES:
            problems.append(f"oracle_objective: must be one of {ORACLE_OBJECTIVES}, got {self.oracle_objective!r}")
        sizes = self.candidate_sizes
        if not sizes or any((not isinstance(s, int)) or s < 1 for s in sizes):
            problems.append(f"candidate_sizes: must be a non-empty list of positive integers, got {sizes!r}")
        elif isinstance(self.k_candidates, int) and self.k_candidates < max(sizes):
            problems.append(f"k_candidates: {self.k_candidates} is smaller than max(candidate_sizes)={max(sizes)}")
        if not self.sweep_grid or any(
            len(point) != 2 or point[0] < 0.0 or point[1] < 0.0 for point in self.sweep_grid
        ):
            problems.append(f"sweep_grid: must be a non-empty list of [theta, beta] pairs >= 0, got {self.sweep_grid!r}")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))

    def encoder_config(self, vocab_rows: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_rows,
            hidden=self.hidden,
            ffn=self.ffn,
            heads=self.heads,
            token_layers=self.token_layers,
            graph_layers=self.graph_layers,
            theta=self.theta,
            beta=self.beta,
            sigma=self.sigma,
            dropout_p=self.dropout,
            max_tokens_per_doc=self.max_tokens_per_doc,
            max_sentences=self.max_sentences,
            bias_form=self.bias_form,
            use_position_embeddings=self.use_position_embeddings,
            tie_subgraph_params=self.tie_subgraph_params,
        )


def paper_profile() -> RunConfig:
    """Hyperparameters as published: 256/1024 widths, 8 heads, 6+2 layers,
    lr 0.03, clip 2.0, dropout 0.1, 5 epochs, candidates 10/9, theta/beta
    0.85/0.15."""
    return RunConfig()


def toy_profile() -> RunConfig:
    """Desk-scale profile for tests and demos.

    The published learning rate (0.03) was tuned for pretrained
    initialization; from random init at width 8 it is far too hot, so the
    toy profile uses 3e-3.
    """
    return dataclasses.replace(
        RunConfig(),
        vocab_size=512,
        hidden=8,
        ffn=16,
        heads=2,
        token_layers=1,
        graph_layers=1,
        max_tokens_per_doc=64,
        max_sentences=16,
        lr=3e-3,
        k_candidates=6,
        candidate_sizes=(2, 3),
        oracle_max_sentences=3,
    )


PROFILES: dict[str, Callable[[], RunConfig]] = {"paper": paper_profile, "toy": toy_profile}

_TUPLE_OF_INT_KEYS = ("candidate_sizes",)
_GRID_KEYS = ("sweep_grid",)


def _coerce(key: str, value, target_type) -> object:
    if key in _TUPLE_OF_INT_KEYS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list of integers, got {value!r}")
        return tuple(int(v) for v in value)
    if key in _GRID_KEYS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list of [theta, beta] pairs, got {value!r}")
        return tuple(tuple(float(x) for x in point) for point in value)
    if target_type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        as_float = float(value)
        if as_float != int(as_float):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(as_float)
    if target_type is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value


def apply_settings(cfg: RunConfig, settings: dict) -> RunConfig:
    """Overlay a key/value mapping onto a config; unknown keys are errors."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(settings) - set(fields))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    updates = {}
    for key, value in settings.items():
        declared = fields[key].type
        if key in _TUPLE_OF_INT_KEYS or key in _GRID_KEYS:
            target = tuple
        elif declared in ("int",):
            target = int
        elif declared in ("float",):
            target = float
        elif declared in ("bool",):
            target = bool
        else:
            target = str
        if value is None and key in ("data", "val_data", "checkpoint", "out"):
            updates[key] = None
        else:
            updates[key] = _coerce(key, value, target)
    return dataclasses.replace(cfg, **updates)


def load_config_file(path, base: RunConfig) -> RunConfig:
    """JSON key/value document mirroring RunConfig, overlaid on `base`."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        settings = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(settings, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return apply_settings(base, settings)


def apply_overrides(cfg: RunConfig, overrides: Sequence[str]) -> RunConfig:
    """--set key=value overrides; values are parsed as JSON when possible."""
    settings = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            settings[key] = json.loads(raw)
        except json.JSONDecodeError:
            settings[key] = raw
    return apply_settings(cfg, settings)


def resolve_config(
    profile: str = "paper",
    config_path=None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
) -> RunConfig:
    """profile defaults < config file < --set overrides < explicit seed."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    if config_path is not None:
        cfg = load_config_file(config_path, cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# dataset loading and statistics
# ---------------------------------------------------------------------------


def _parse_record(record: dict, line_no: int) -> Cluster:
    if not isinstance(record, dict):
        raise DataError(f"line {line_no}: record must be a JSON object")
    cluster_id = record.get("cluster_id")
    if not isinstance(cluster_id, str) or not cluster_id:
        raise DataError(f"line {line_no}: missing or empty 'cluster_id'")
    documents = record.get("documents")
    if not isinstance(documents, list) or not documents:
        raise DataError(f"line {line_no}: missing or empty 'documents' list")
    if len(documents) > MAX_DOCUMENTS_PER_CLUSTER:
        raise DataError(
            f"line {line_no}: cluster {cluster_id!r} has {len(documents)} documents "
            f"(limit {MAX_DOCUMENTS_PER_CLUSTER})"
        )
    pairs = []
    for i, doc in enumerate(documents):
        if not isinstance(doc, dict):
            raise DataError(f"line {line_no}: documents[{i}] must be an object")
        doc_id = doc.get("doc_id")
        text = doc.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise DataError(f"line {line_no}: documents[{i}] missing 'doc_id'")
        if not isinstance(text, str) or not text.strip():
            raise DataError(f"line {line_no}: documents[{i}] has empty 'text'")
        pairs.append((doc_id, text))
    summary = record.get("summary")
    if summary is not None and not isinstance(summary, str):
        raise DataError(f"line {line_no}: 'summary' must be a string when present")
    try:
        return make_cluster(cluster_id, pairs, summary=summary)
    except ValueError as exc:
        raise DataError(f"line {line_no}: {exc}") from exc


def load_clusters(path, strict: bool = True) -> list[Cluster]:
    """Parse a line-delimited JSON dataset into validated clusters.

    With strict=True the first malformed line aborts with its line number;
    otherwise malformed lines are logged and skipped. Zero valid clusters
    is always an error.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    clusters: list[Cluster] = []
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON: {exc}") from exc
            cluster = _parse_record(record, line_no)
            if cluster.cluster_id in seen:
                raise DataError(f"line {line_no}: duplicate cluster_id {cluster.cluster_id!r}")
        except DataError as exc:
            if strict:
                raise
            logger.warning("skipping %s", exc)
            continue
        seen.add(cluster.cluster_id)
        clusters.append(cluster)
    if not clusters:
        raise DataError(f"dataset {path} contains no valid clusters")
    return clusters


def dataset_stats(clusters: Sequence[Cluster]) -> dict:
    """Cluster/document/sentence counts and averages for a split."""
    n_clusters = len(clusters)
    if n_clusters == 0:
        logger.warning("empty split: all statistics are zero")
        return {
            "clusters": 0, "documents": 0, "avg_documents_per_cluster": 0.0,
            "sentences": 0, "avg_sentences_per_document": 0.0,
            "avg_sentences_per_cluster": 0.0, "with_summary": 0,
        }
    n_docs = sum(len(c.documents) for c in clusters)
    n_sents = sum(c.sentence_count for c in clusters)
    return {
        "clusters": n_clusters,
        "documents": n_docs,
        "avg_documents_per_cluster": n_docs / n_clusters,
        "sentences": n_sents,
        "avg_sentences_per_document": n_sents / n_docs,
        "avg_sentences_per_cluster": n_sents / n_clusters,
        "with_summary": sum(1 for c in clusters if c.summary),
    }


def build_vocab(clusters: Sequence[Cluster], max_size: int) -> Vocabulary:
    return Vocabulary.build(
        [s.tokens for c in clusters for s in c.sentences()], max_size
    )


# ---------------------------------------------------------------------------
# checkpoint persistence (parameters + config/vocab metadata entry)
# ---------------------------------------------------------------------------

META_ENTRY = "__meta__"


def _config_to_jsonable(cfg: RunConfig) -> dict:
    raw = dataclasses.asdict(cfg)
    raw["candidate_sizes"] = list(cfg.candidate_sizes)
    raw["sweep_grid"] = [list(p) for p in cfg.sweep_grid]
    return raw


def save_checkpoint(path, store: ParamStore, cfg: RunConfig, vocab: Vocabulary) -> None:
    """Parameters plus a metadata entry holding the config and vocabulary.

    The metadata entry encodes UTF-8 JSON one byte per float64 so it rides
    the normal tensor format and round-trips bit-exactly.
    """
    tensors = dict(store.params)
    if META_ENTRY in tensors:
        raise nm.CheckpointError(f"parameter name {META_ENTRY!r} is reserved")
    meta = json.dumps(
        {"config": _config_to_jsonable(cfg), "vocab": vocab.to_list()},
        sort_keys=True,
        ensure_ascii=False,
    )
    tensors[META_ENTRY] = np.frombuffer(meta.encode("utf-8"), dtype=np.uint8).astype(np.float64)
    save_tensors(path, tensors)


def load_checkpoint(path) -> tuple[ParamStore, RunConfig, Vocabulary]:
    tensors = load_tensors(path)
    blob = tensors.pop(META_ENTRY, None)
    if blob is None:
        raise nm.CheckpointError(f"checkpoint {path} has no {META_ENTRY!r} entry")
    meta = json.loads(blob.astype(np.uint8).tobytes().decode("utf-8"))
    cfg = apply_settings(RunConfig(), meta["config"])
    cfg.validate()
    vocab = Vocabulary(meta["vocab"])
    store = ParamStore()
    for name in sorted(tensors):
        store.add(name, tensors[name])
    return store, cfg, vocab


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class StepMetrics:
    step: int
    epoch: int
    cluster_id: str
    total: float
    sent: float
    pairwise: float
    global_: float


@dataclass
class TrainResult:
    store: ParamStore
    vocab: Vocabulary
    config: RunConfig
    history: list[StepMetrics]
    best_val_f1: float | None = None
    best_epoch: int | None = None


@dataclass(eq=False)
class _ClusterPlan:
    """Per-cluster precomputation; none of it depends on the parameters."""

    cluster: Cluster
    graph: ClusterGraph
    reference: list[str]
    oracle: OracleSummary
    labels: tuple[int, ...]
    candidate_members: list[tuple[int, ...]]  # ROUGE-descending
    candidate_scores: list[float]


def _plan_cluster(cfg: RunConfig, cluster: Cluster, model=None) -> _ClusterPlan:
    graph = build_cluster_graph(cluster, cfg.tfidf_scope, cfg.sigma, model=model)
    reference = tokenize(cluster.summary or "")
    if not reference:
        raise DataError(f"cluster {cluster.cluster_id!r} has an empty summary after tokenization")
    oracle = greedy_oracle(cluster, reference, cfg.oracle_max_sentences, cfg.oracle_objective)
    labels = oracle_labels(graph.n, oracle).y
    per_sentence = sentence_rouge_ranking(cluster, reference)
    sizes = _effective_sizes(cfg.candidate_sizes, graph.n)
    candidates = generate_candidates(per_sentence, cfg.k_candidates, sizes)
    for cand in candidates:
        cand.rouge_rank_score = subset_rouge(cluster, cand.members, reference, cfg.oracle_objective)
    ordered = rank_candidates(candidates)
    return _ClusterPlan(
        cluster=cluster,
        graph=graph,
        reference=reference,
        oracle=oracle,
        labels=labels,
        candidate_members=[c.members for c in ordered],
        candidate_scores=[c.rouge_rank_score for c in ordered],
    )


def _effective_sizes(sizes: Sequence[int], n_sentences: int) -> tuple[int, ...]:
    """Candidate sizes clipped to the cluster's sentence count."""
    return tuple(sorted({min(int(s), n_sentences) for s in sizes}))


def global_tfidf_model(cfg: RunConfig, clusters: Sequence[Cluster]):
    if cfg.tfidf_scope != "global":
        return None
    return fit_tfidf([s.tokens for c in clusters for s in c.sentences()])


def forward_losses(
    plan: _ClusterPlan,
    store: ParamStore,
    enc_cfg: EncoderConfig,
    vocab: Vocabulary,
    cfg: RunConfig,
    mode: str,
    tape: Tape | None,
    step: int,
) -> dict[str, nm.Tensor]:
    """One full forward pass producing the three loss parts and their sum."""
    ctx = ForwardContext(store, enc_cfg, mode=mode, tape=tape, seed=cfg.seed, step=step)
    enc = encode_documents(plan.cluster, plan.graph, vocab, ctx)
    y_hat = sentence_scores(enc.X, ctx)
    d_repr = pool_graph(enc.X, ctx)
    biases = bias_matrices(plan.graph, cfg.bias_form)
    c_star = encode_subgraph(enc.X, plan.oracle.members, plan.graph, ctx, biases=biases)
    candidates = []
    for members, score in zip(plan.candidate_members, plan.candidate_scores):
        cand = CandidateSummary(members=members, rouge_rank_score=score)
        cand.repr = encode_subgraph(enc.X, members, plan.graph, ctx, biases=biases)
        candidates.append(cand)
    l_pair = loss_pairwise(candidates, c_star, cfg.gamma0)
    l_glob = loss_global(d_repr, c_star)
    l_sent = loss_sent(y_hat, plan.labels)
    return {
        "sent": l_sent,
        "pairwise": l_pair,
        "global": l_glob,
        "total": total_loss(l_sent, l_pair, l_glob),
    }


def _train_step(
    plan: _ClusterPlan,
    store: ParamStore,
    enc_cfg: EncoderConfig,
    vocab: Vocabulary,
    cfg: RunConfig,
    step: int,
) -> dict[str, float]:
    tape = Tape()
    try:
        losses = forward_losses(plan, store, enc_cfg, vocab, cfg, "train", tape, step)
    except nm.NumericsError as exc:
        raise PipelineError(
            f"step {step} on cluster {plan.cluster.cluster_id!r} produced non-finite values: {exc}"
        ) from exc
    parts = {name: t.item() for name, t in losses.items()}
    if not all(math.isfinite(v) for v in parts.values()):
        raise PipelineError(
            f"step {step} on cluster {plan.cluster.cluster_id!r} produced a non-finite loss; "
            f"parts: sent={parts['sent']!r} pairwise={parts['pairwise']!r} "
            f"global={parts['global']!r} total={parts['total']!r}"
        )
    grads = tape.backward(losses["total"])
    grads = clip_global_norm(grads, cfg.clip_norm)
    adam_step(store, grads, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return parts


def train(
    cfg: RunConfig,
    train_clusters: Sequence[Cluster],
    val_clusters: Sequence[Cluster] = (),
) -> TrainResult:
    """Train on clusters with summaries; keep the params that score the best
    validation ROUGE-2 F1 (micro), or the final params when there is no
    validation split."""
    cfg.validate()
    usable = []
    for cluster in train_clusters:
        if cluster.summary and tokenize(cluster.summary):
            usable.append(cluster)
        else:
            logger.warning("skipping training cluster %r: no usable summary", cluster.cluster_id)
    if not usable:
        raise PipelineError("no training clusters with summaries")
    vocab = build_vocab(usable, cfg.vocab_size)
    enc_cfg = cfg.encoder_config(len(vocab))
    store = init_params(enc_cfg, cfg.seed)
    tfidf_model = global_tfidf_model(cfg, usable)
    plans = [_plan_cluster(cfg, c, model=tfidf_model) for c in usable]

    history: list[StepMetrics] = []
    best_params: ParamStore | None = None
    best_f1: float | None = None
    best_epoch: int | None = None
    step = 0
    for epoch in range(cfg.epochs):
        for plan in plans:
            step += 1
            parts = _train_step(plan, store, enc_cfg, vocab, cfg, step)
            history.append(StepMetrics(
                step=step, epoch=epoch, cluster_id=plan.cluster.cluster_id,
                total=parts["total"], sent=parts["sent"],
                pairwise=parts["pairwise"], global_=parts["global"],
            ))
            if step == 1 or step % 25 == 0:
                logger.info(
                    "step %d (epoch %d): total=%.4f sent=%.4f pairwise=%.4f global=%.4f",
                    step, epoch, parts["total"], parts["sent"], parts["pairwise"], parts["global"],
                )
        if val_clusters:
            result = evaluate_model(store, vocab, cfg, val_clusters)
            f1 = result["micro"]["f1"]
            logger.info("epoch %d: validation ROUGE-2 F1 (micro) = %.4f", epoch, f1)
            if best_f1 is None or f1 > best_f1:
                best_f1 = f1
                best_epoch = epoch
                best_params = store.copy()
    final_store = best_params if best_params is not None else store
    return TrainResult(
        store=final_store, vocab=vocab, config=cfg, history=history,
        best_val_f1=best_f1, best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------


def summarize_cluster(
    store: ParamStore,
    vocab: Vocabulary,
    cfg: RunConfig,
    cluster: Cluster,
    tfidf_model=None,
) -> tuple[tuple[int, ...], str]:
    """Pick the sub-graph whose encoding best aligns with the cluster vector.

    Sentences are ranked by the trained score head, candidates are every
    subset of the configured sizes over the top-k, and the winning members
    are emitted in original document order.
    """
    graph = build_cluster_graph(cluster, cfg.tfidf_scope, cfg.sigma, model=tfidf_model)
    n = graph.n
    if n < min(cfg.candidate_sizes):
        logger.warning(
            "cluster %r has %d sentences, fewer than the smallest candidate size %d; "
            "emitting all sentences",
            cluster.cluster_id, n, min(cfg.candidate_sizes),
        )
    enc_cfg = cfg.encoder_config(len(vocab))
    ctx = ForwardContext(store, enc_cfg, mode="eval")
    enc = encode_documents(cluster, graph, vocab, ctx)
    y_hat = sentence_scores(enc.X, ctx).data.tolist()
    sizes = _effective_sizes(cfg.candidate_sizes, n)
    candidates = generate_candidates(y_hat, cfg.k_candidates, sizes)
    biases = bias_matrices(graph, cfg.bias_form)
    for cand in candidates:
        cand.repr = encode_subgraph(enc.X, cand.members, graph, ctx, biases=biases)
    d_repr = pool_graph(enc.X, ctx)
    chosen = select_summary(candidates, d_repr)
    sentences = cluster.sentences()
    text = " ".join(sentences[i].raw_text for i in chosen.members)
    return chosen.members, text


def summarize_clusters(
    store: ParamStore,
    vocab: Vocabulary,
    cfg: RunConfig,
    clusters: Sequence[Cluster],
) -> list[dict]:
    tfidf_model = global_tfidf_model(cfg, clusters)
    records = []
    for cluster in clusters:
        members, text = summarize_cluster(store, vocab, cfg, cluster, tfidf_model=tfidf_model)
        records.append({"cluster_id": cluster.cluster_id, "members": list(members), "summary": text})
    return records


def evaluate_pairs(predictions: dict[str, str], references: dict[str, str]) -> dict:
    """Per-cluster and corpus (micro + macro) ROUGE-2 for aligned summaries."""
    missing_refs = sorted(set(predictions) - set(references))
    missing_preds = sorted(set(references) - set(predictions))
    if missing_refs or missing_preds:
        raise PipelineError(
            "prediction/reference cluster ids do not align; "
            f"predictions without references: {missing_refs}; "
            f"references without predictions: {missing_preds}"
        )
    if not predictions:
        raise PipelineError("nothing to evaluate: empty prediction set")
    per_cluster = []
    token_pairs = []
    for cluster_id in sorted(predictions):
        pred = tokenize(predictions[cluster_id])
        ref = tokenize(references[cluster_id])
        token_pairs.append((pred, ref))
        score = rouge_n(pred, ref, 2)
        per_cluster.append({
            "cluster_id": cluster_id,
            "precision": score.precision,
            "recall": score.recall,
            "f1": score.f1,
        })
    micro = rouge_2_corpus(token_pairs)
    count = len(per_cluster)
    macro = {
        "precision": sum(row["precision"] for row in per_cluster) / count,
        "recall": sum(row["recall"] for row in per_cluster) / count,
        "f1": sum(row["f1"] for row in per_cluster) / count,
    }
    return {
        "clusters": per_cluster,
        "micro": {"precision": micro.precision, "recall": micro.recall, "f1": micro.f1},
        "macro": macro,
        "count": count,
    }


def evaluate_model(
    store: ParamStore,
    vocab: Vocabulary,
    cfg: RunConfig,
    clusters: Sequence[Cluster],
) -> dict:
    """Summarize clusters that carry reference summaries and score them."""
    with_refs = [c for c in clusters if c.summary]
    if not with_refs:
        raise PipelineError("no clusters with reference summaries to evaluate")
    records = summarize_clusters(store, vocab, cfg, with_refs)
    predictions = {r["cluster_id"]: r["summary"] for r in records}
    references = {c.cluster_id: c.summary for c in with_refs}
    return evaluate_pairs(predictions, references)


# ---------------------------------------------------------------------------
# sweep harness
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list[dict]
    best_index: int


def sweep(
    cfg: RunConfig,
    train_clusters: Sequence[Cluster],
    val_clusters: Sequence[Cluster],
) -> SweepResult:
    """Train one model per (theta, beta) grid point with a shared seed and
    report validation ROUGE-2 for each; the best row is flagged."""
    if not val_clusters:
        raise PipelineError("sweep needs a validation split")
    rows = []
    for theta, beta in cfg.sweep_grid:
        point_cfg = dataclasses.replace(cfg, theta=theta, beta=beta)
        logger.info("sweep point theta=%.3g beta=%.3g", theta, beta)
        result = train(point_cfg, train_clusters, val_clusters=())
        report = evaluate_model(result.store, result.vocab, point_cfg, val_clusters)
        rows.append({
            "theta": theta,
            "beta": beta,
            "precision": report["micro"]["precision"],
            "recall": report["micro"]["recall"],
            "f1": report["micro"]["f1"],
            "best": False,
        })
    best_index = max(range(len(rows)), key=lambda i: (rows[i]["f1"], -i))
    rows[best_index]["best"] = True
    return SweepResult(rows=rows, best_index=best_index)


# ---------------------------------------------------------------------------
# report formatting and file output helpers
# ---------------------------------------------------------------------------


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt("-" * w for w in widths)]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)


def write_jsonl(path, records: Sequence[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))


def write_json(path, payload: dict | list) -> None:
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def metrics_lines(history: Sequence[StepMetrics]) -> list[dict]:
    return [
        {
            "step": m.step, "epoch": m.epoch, "cluster_id": m.cluster_id,
            "total": m.total, "sent": m.sent, "pairwise": m.pairwise, "global": m.global_,
        }
        for m in history
    ]


def graph_summary(cluster: Cluster, cfg: RunConfig, model=None) -> dict:
    graph = build_cluster_graph(cluster, cfg.tfidf_scope, cfg.sigma, model=model)
    off_diag = graph.G[~np.eye(graph.n, dtype=bool)] if graph.n > 1 else np.zeros(0)
    return {
        "cluster_id": cluster.cluster_id,
        "sentences": graph.n,
        "documents": len(cluster.documents),
        "mean_similarity": float(off_diag.mean()) if off_diag.size else 0.0,
        "max_similarity": float(off_diag.max()) if off_diag.size else 0.0,
    }


def dump_graph_matrices(cluster: Cluster, cfg: RunConfig, out_dir, model=None) -> list[Path]:
    """Write G and G_same as row-major space-separated decimal text files."""
    graph = build_cluster_graph(cluster, cfg.tfidf_scope, cfg.sigma, model=model)
    out = Path(out_dir)
    written = []
    for name, matrix in (("G", graph.G), ("G_same", graph.G_same)):
        target = out / f"{cluster.cluster_id}.{name}.txt"
        text = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in matrix) + "\n"
        atomic_write_text(target, text)
        written.append(target)
    return written
