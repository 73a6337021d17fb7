"""Command-line interface: train, summarize, evaluate, sweep, stats,
oracle, and graph-stats.

Every command exits 0 on success and nonzero on any error; output files
are written atomically so failures leave no partial files behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .numerics import CheckpointError
from .ranking import greedy_oracle
from .textproc import tokenize

logger = logging.getLogger("sgsum")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file overlaid on the profile defaults")
    sub.add_argument("--profile", choices=sorted(pl.PROFILES), default="paper",
                     help="base hyperparameter profile (default: paper)")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgsum",
        description="Extractive multi-document summarization by sub-graph selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and save the best checkpoint")
    _add_common(p_train)
    p_train.add_argument("--data", help="training clusters (JSONL)")
    p_train.add_argument("--val", help="validation clusters (JSONL)")
    p_train.add_argument("--out", help="output directory")

    p_sum = sub.add_parser("summarize", help="summarize clusters with a trained checkpoint")
    _add_common(p_sum)
    p_sum.add_argument("--checkpoint", help="trained model checkpoint")
    p_sum.add_argument("--data", help="clusters to summarize (JSONL)")
    p_sum.add_argument("--out", help="output summaries (JSONL)")

    p_eval = sub.add_parser("evaluate", help="score predictions against references")
    _add_common(p_eval)
    p_eval.add_argument("--predictions", required=True, help="summaries to score (JSONL)")
    p_eval.add_argument("--data",
                        help="references: dataset JSONL with summaries, or prediction-format JSONL")
    p_eval.add_argument("--out", help="write the full report as JSON")

    p_sweep = sub.add_parser("sweep", help="train/evaluate every (theta, beta) grid point")
    _add_common(p_sweep)
    p_sweep.add_argument("--data", help="training clusters (JSONL)")
    p_sweep.add_argument("--val", help="validation clusters (JSONL)")
    p_sweep.add_argument("--out", help="write the sweep table as JSON")

    p_stats = sub.add_parser("stats", help="dataset shape statistics")
    _add_common(p_stats)
    p_stats.add_argument("--data")
    p_stats.add_argument("--out", help="write the statistics as JSON")

    p_oracle = sub.add_parser("oracle", help="greedy oracle summaries for a labeled split")
    _add_common(p_oracle)
    p_oracle.add_argument("--data")
    p_oracle.add_argument("--out", help="write oracle records as JSONL")

    p_gs = sub.add_parser("graph-stats", help="sentence-graph statistics, optional matrix dump")
    _add_common(p_gs)
    p_gs.add_argument("--data")
    p_gs.add_argument("--out", help="directory for G / G_same matrix text dumps")

    return parser


def _config_from(args: argparse.Namespace) -> pl.RunConfig:
    return pl.resolve_config(
        profile=args.profile,
        config_path=args.config,
        overrides=args.overrides,
        seed=args.seed,
    )


def _path(args: argparse.Namespace, cfg: pl.RunConfig, flag: str, key: str, required: bool = True):
    """CLI flag wins; the config path field is the fallback."""
    value = getattr(args, flag, None) or getattr(cfg, key, None)
    if value is None and required:
        raise pl.ConfigError(f"--{flag} is required (or set {key!r} in the config)")
    return value


def _load_predictions(path) -> dict[str, str]:
    records = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise pl.DataError(f"{path} line {line_no}: invalid JSON: {exc}") from exc
        cluster_id = record.get("cluster_id")
        summary = record.get("summary")
        if not isinstance(cluster_id, str) or not isinstance(summary, str):
            raise pl.DataError(f"{path} line {line_no}: needs string 'cluster_id' and 'summary'")
        if cluster_id in records:
            raise pl.DataError(f"{path} line {line_no}: duplicate cluster_id {cluster_id!r}")
        records[cluster_id] = summary
    if not records:
        raise pl.DataError(f"{path} contains no records")
    return records


def _load_references(path) -> dict[str, str]:
    """Accept either a full dataset (summary field) or prediction-format JSONL."""
    refs = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise pl.DataError(f"{path} line {line_no}: invalid JSON: {exc}") from exc
        cluster_id = record.get("cluster_id")
        summary = record.get("summary")
        if not isinstance(cluster_id, str) or not cluster_id:
            raise pl.DataError(f"{path} line {line_no}: missing 'cluster_id'")
        if not isinstance(summary, str) or not summary:
            raise pl.DataError(f"{path} line {line_no}: cluster {cluster_id!r} has no reference summary")
        refs[cluster_id] = summary
    if not refs:
        raise pl.DataError(f"{path} contains no reference summaries")
    return refs


def cmd_train(args) -> int:
    cfg = _config_from(args)
    val_path = _path(args, cfg, "val", "val_data", required=False)
    train_clusters = pl.load_clusters(_path(args, cfg, "data", "data"), strict=cfg.strict_load)
    val_clusters = pl.load_clusters(val_path, strict=cfg.strict_load) if val_path else []
    result = pl.train(cfg, train_clusters, val_clusters)
    out_dir = Path(_path(args, cfg, "out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.sgs"
    pl.save_checkpoint(checkpoint, result.store, cfg, result.vocab)
    pl.write_jsonl(out_dir / "metrics.jsonl", pl.metrics_lines(result.history))
    if result.best_val_f1 is not None:
        logger.info("best validation ROUGE-2 F1 (micro): %.4f at epoch %d",
                    result.best_val_f1, result.best_epoch)
    logger.info("saved checkpoint to %s", checkpoint)
    return 0


def cmd_summarize(args) -> int:
    paths_cfg = _config_from(args)
    store, cfg, vocab = pl.load_checkpoint(_path(args, paths_cfg, "checkpoint", "checkpoint"))
    if args.overrides:
        cfg = pl.apply_overrides(cfg, args.overrides)
        cfg.validate()
    clusters = pl.load_clusters(_path(args, paths_cfg, "data", "data"), strict=cfg.strict_load)
    records = pl.summarize_clusters(store, vocab, cfg, clusters)
    out = _path(args, paths_cfg, "out", "out")
    pl.write_jsonl(out, records)
    logger.info("wrote %d summaries to %s", len(records), out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from(args)
    predictions = _load_predictions(args.predictions)
    references = _load_references(_path(args, cfg, "data", "data"))
    report = pl.evaluate_pairs(predictions, references)
    rows = [
        [row["cluster_id"], f"{row['precision']:.4f}", f"{row['recall']:.4f}", f"{row['f1']:.4f}"]
        for row in report["clusters"]
    ]
    print(pl.format_table(["cluster", "R-2 P", "R-2 R", "R-2 F1"], rows))
    print()
    for kind in ("micro", "macro"):
        agg = report[kind]
        print(f"{kind}: P={agg['precision']:.4f} R={agg['recall']:.4f} F1={agg['f1']:.4f}")
    out = _path(args, cfg, "out", "out", required=False)
    if out:
        pl.write_json(out, report)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from(args)
    train_clusters = pl.load_clusters(_path(args, cfg, "data", "data"), strict=cfg.strict_load)
    val_clusters = pl.load_clusters(_path(args, cfg, "val", "val_data"), strict=cfg.strict_load)
    result = pl.sweep(cfg, train_clusters, val_clusters)
    rows = [
        [f"{row['theta']:g}", f"{row['beta']:g}",
         f"{row['precision']:.4f}", f"{row['recall']:.4f}", f"{row['f1']:.4f}",
         "*" if row["best"] else ""]
        for row in result.rows
    ]
    print(pl.format_table(["theta", "beta", "R-2 P", "R-2 R", "R-2 F1", "best"], rows))
    out = _path(args, cfg, "out", "out", required=False)
    if out:
        pl.write_json(out, {"rows": result.rows, "best_index": result.best_index})
    return 0


def cmd_stats(args) -> int:
    cfg = _config_from(args)
    clusters = pl.load_clusters(_path(args, cfg, "data", "data"), strict=cfg.strict_load)
    stats = pl.dataset_stats(clusters)
    rows = [[key, f"{value:.3f}" if isinstance(value, float) else str(value)]
            for key, value in stats.items()]
    print(pl.format_table(["statistic", "value"], rows))
    out = _path(args, cfg, "out", "out", required=False)
    if out:
        pl.write_json(out, stats)
    return 0


def cmd_oracle(args) -> int:
    cfg = _config_from(args)
    clusters = pl.load_clusters(_path(args, cfg, "data", "data"), strict=cfg.strict_load)
    records = []
    for cluster in clusters:
        if not cluster.summary:
            logger.warning("skipping cluster %r: no reference summary", cluster.cluster_id)
            continue
        reference = tokenize(cluster.summary)
        if not reference:
            logger.warning("skipping cluster %r: summary has no tokens", cluster.cluster_id)
            continue
        oracle = greedy_oracle(cluster, reference, cfg.oracle_max_sentences, cfg.oracle_objective)
        sentences = cluster.sentences()
        records.append({
            "cluster_id": cluster.cluster_id,
            "members": list(oracle.members),
            "score": oracle.score,
            "summary": " ".join(sentences[i].raw_text for i in oracle.members),
        })
    if not records:
        raise pl.PipelineError("no clusters with summaries; nothing to extract oracles from")
    out = _path(args, cfg, "out", "out", required=False)
    if out:
        pl.write_jsonl(out, records)
        logger.info("wrote %d oracle records to %s", len(records), out)
    else:
        for record in records:
            print(json.dumps(record, ensure_ascii=False))
    return 0


def cmd_graph_stats(args) -> int:
    cfg = _config_from(args)
    clusters = pl.load_clusters(_path(args, cfg, "data", "data"), strict=cfg.strict_load)
    out = _path(args, cfg, "out", "out", required=False)
    model = pl.global_tfidf_model(cfg, clusters)
    rows = []
    for cluster in clusters:
        summary = pl.graph_summary(cluster, cfg, model=model)
        rows.append([
            summary["cluster_id"], str(summary["sentences"]), str(summary["documents"]),
            f"{summary['mean_similarity']:.4f}", f"{summary['max_similarity']:.4f}",
        ])
        if out:
            pl.dump_graph_matrices(cluster, cfg, out, model=model)
    print(pl.format_table(["cluster", "sentences", "documents", "mean sim", "max sim"], rows))
    if out:
        logger.info("wrote matrix dumps to %s", out)
    return 0


_COMMANDS = {
    "train": cmd_train,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "stats": cmd_stats,
    "oracle": cmd_oracle,
    "graph-stats": cmd_graph_stats,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, CheckpointError, pl.PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
