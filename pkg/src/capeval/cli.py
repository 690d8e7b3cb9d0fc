"""Batch front door for the engine.

Subcommands wire the file formats to the engines and run the full
correlation study. All randomness funnels through ``--seed``; outputs are
byte-deterministic for identical inputs. ``PREGEN_THREADS`` caps the
thread pool used for per-image post-gen scoring.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from . import analysis, postgen, pregen, toyworld
from .datamodel import SchemaError, load_dataset, load_traces, save_dataset, save_traces

T = TypeVar("T")
U = TypeVar("U")


def _thread_count() -> int:
    raw = os.environ.get("PREGEN_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_map(fn: Callable[[T], U], items: Iterable[T]) -> list[U]:
    """Order-preserving map, fanned out over at most PREGEN_THREADS threads."""
    items = list(items)
    threads = _thread_count()
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _format_value(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(piece) for piece in raw.split(",") if piece.strip() != ""]
    except ValueError:
        raise ValueError(f"{flag} must be a comma-separated list of numbers, got {raw!r}") from None


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        return [int(piece) for piece in raw.split(",") if piece.strip() != ""]
    except ValueError:
        raise ValueError(f"{flag} must be a comma-separated list of integers, got {raw!r}") from None


def _pregen_config(args: argparse.Namespace) -> pregen.PregenConfig:
    return pregen.PregenConfig(include_end_token=not args.no_end_token)


def cmd_pregen(args: argparse.Namespace) -> int:
    traces = load_traces(args.traces)
    scores = pregen.compute_all(traces, _pregen_config(args))
    _write_csv(
        Path(args.out),
        ["metric", "value"],
        ((name, _format_value(scores[name])) for name in sorted(scores)),
    )
    return 0


def _score_images(dataset, idf, emb):
    entries = list(dataset)
    scores = _parallel_map(lambda e: postgen.per_image_postgen(e, idf, emb), entries)
    return {entry.image_id: score for entry, score in zip(entries, scores)}


def cmd_postgen(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    emb = postgen.load_embeddings(args.embeddings)
    idf = postgen.build_idf(dataset)
    per_image = _score_images(dataset, idf, emb)
    corpus = postgen.corpus_postgen(dataset, idf, emb, per_image=per_image)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "per_image.csv",
        ["image_id", "metric", "value"],
        (
            (image_id, metric, _format_value(per_image[image_id][metric]))
            for image_id in sorted(per_image)
            for metric in postgen.POSTGEN_METRICS
        ),
    )
    _write_csv(
        out_dir / "corpus.csv",
        ["metric", "value"],
        ((metric, _format_value(corpus[metric])) for metric in postgen.POSTGEN_METRICS),
    )
    return 0


def cmd_stratify(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    emb = postgen.load_embeddings(args.embeddings)
    idf = postgen.build_idf(dataset)
    per_image = _score_images(dataset, idf, emb)
    ciders = {image_id: scores["cider"] for image_id, scores in per_image.items()}
    k_values = _parse_int_list(args.k, "--k")
    if len(k_values) != 1:
        raise ValueError("stratify takes a single --k value")
    split = analysis.stratify(ciders, k_values[0])
    _write_csv(
        Path(args.out),
        ["image_id", "stratum", "cider"],
        (
            (image_id, split.assignment[image_id], _format_value(ciders[image_id]))
            for image_id in sorted(split.assignment)
        ),
    )
    return 0


def _read_score_table(path: str) -> analysis.ScoreTable:
    table = analysis.ScoreTable()
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"model_id", "k", "stratum", "metric", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: expected columns {sorted(required)}")
        for record in reader:
            table.append(
                analysis.ScoreRow(
                    model_id=record["model_id"],
                    k=int(record["k"]),
                    stratum=int(record["stratum"]),
                    metric=record["metric"],
                    value=float(record["value"]),
                )
            )
    return table


def _postgen_metrics_in(table: analysis.ScoreTable) -> list[str]:
    return [m for m in postgen.POSTGEN_METRICS if table.samples(m)]


def _all_correlations(table: analysis.ScoreTable) -> list[analysis.CorrelationResult]:
    results = []
    for y_metric in _postgen_metrics_in(table):
        for metric_id in pregen.enumerate_metrics():
            name = metric_id.canonical_name
            if not table.samples(name):
                continue
            try:
                results.append(analysis.correlate(table, name, y_metric))
            except ValueError:
                continue  # non-finite or degenerate samples are skipped
    return results


def _correlation_rows(results: Iterable[analysis.CorrelationResult]):
    for res in results:
        yield (
            res.x_metric,
            res.y_metric,
            res.n,
            _format_value(res.r),
            _format_value(res.r_squared),
            _format_value(res.p_value),
        )


def cmd_correlate(args: argparse.Namespace) -> int:
    table = _read_score_table(args.scores)
    results = _all_correlations(table)
    _write_csv(
        Path(args.out),
        ["x_metric", "y_metric", "n", "r", "r2", "p"],
        _correlation_rows(results),
    )
    return 0


def _rankings(table: analysis.ScoreTable, top_k: int, only: str | None = None):
    rankings = {}
    skipped = {}
    metrics = [only] if only else _postgen_metrics_in(table)
    for y_metric in metrics:
        rankings[y_metric], skipped[y_metric] = analysis.rank_pregen(table, y_metric, top_k=top_k)
    return rankings, skipped


def _ranking_rows(rankings: dict):
    for y_metric in sorted(rankings):
        for item in rankings[y_metric]:
            yield (
                y_metric,
                item.rank,
                item.pregen_metric,
                _format_value(item.r_squared),
                _format_value(item.r),
                _format_value(item.p_value),
            )


def _print_ranking_tables(rankings: dict, sample_counts: dict[str, int] | None = None) -> None:
    for y_metric in sorted(rankings):
        suffix = f" (n={sample_counts[y_metric]})" if sample_counts else ""
        print(f"Top {len(rankings[y_metric])} pre-gen metrics for {y_metric}{suffix}:")
        print(f"  {'rank':<6}{'pregen_metric':<34}{'r2':>10}{'r':>10}  p")
        for item in rankings[y_metric]:
            print(
                f"  {item.rank:<6}{item.pregen_metric:<34}"
                f"{item.r_squared:>10.4f}{item.r:>10.4f}  {item.p_value:.3g}"
            )
        print()


def cmd_rank(args: argparse.Namespace) -> int:
    table = _read_score_table(args.scores)
    rankings, _ = _rankings(table, args.top_k, args.postgen)
    _write_csv(
        Path(args.out),
        ["postgen_metric", "rank", "pregen_metric", "r2", "r", "p"],
        _ranking_rows(rankings),
    )
    counts = {m: len(table.samples(m)) for m in rankings}
    _print_ranking_tables(rankings, counts)
    return 0


def cmd_toy_gen(args: argparse.Namespace) -> int:
    dataset = toyworld.gen_world(args.seed, args.num_images, args.refs_per_image)
    save_dataset(args.out, dataset)
    if args.embeddings_out:
        postgen.save_embeddings(args.embeddings_out, toyworld.toy_embeddings(args.seed))
    return 0


def cmd_toy_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    model = toyworld.train_toy_model(dataset, args.epsilon, args.alpha, args.seed)
    toyworld.save_model(args.out, model)
    return 0


def cmd_toy_decode(args: argparse.Namespace) -> int:
    model = toyworld.load_model(args.model)
    dataset = load_dataset(args.dataset)
    decoded = toyworld.decode_dataset(model, dataset, width=args.beam_width, max_len=args.max_len)
    save_dataset(args.out, decoded)
    return 0


def cmd_toy_trace(args: argparse.Namespace) -> int:
    model = toyworld.load_model(args.model)
    dataset = load_dataset(args.dataset)
    save_traces(args.out, toyworld.emit_traces(model, dataset))
    return 0


def _scatter_rows(table: analysis.ScoreTable, x_metric: str, y_metric: str):
    xs = table.samples(x_metric)
    ys = table.samples(y_metric)
    for key in sorted(set(xs) & set(ys)):
        model_id, k, stratum = key
        yield (_format_value(xs[key]), _format_value(ys[key]), model_id, k, stratum)


def cmd_study(args: argparse.Namespace) -> int:
    epsilon_grid = _parse_float_list(args.epsilon_grid, "--epsilon-grid")
    if len(epsilon_grid) < 3:
        raise ValueError(
            "degenerate correlation sample: --epsilon-grid needs at least 3 values"
        )
    if any(not 0.0 <= e <= 1.0 for e in epsilon_grid):
        raise ValueError("--epsilon-grid values must lie in [0, 1]")
    k_values = _parse_int_list(args.k, "--k")
    config = _pregen_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = toyworld.gen_world(args.seed, args.num_images, args.refs_per_image)
    emb = toyworld.toy_embeddings(args.seed)
    idf = postgen.build_idf(dataset)
    save_dataset(str(out_dir / "dataset.json"), dataset)
    postgen.save_embeddings(str(out_dir / "embeddings.txt"), emb)

    table = analysis.ScoreTable()
    for epsilon in epsilon_grid:
        model_id = f"eps{epsilon:g}"
        model = toyworld.train_toy_model(dataset, epsilon, args.alpha, args.seed)
        decoded = toyworld.decode_dataset(
            model, dataset, width=args.beam_width, max_len=args.max_len
        )
        traces = toyworld.emit_traces(model, dataset)
        per_image = _score_images(decoded, idf, emb)
        table.extend(
            analysis.expand_strata(
                model_id,
                traces,
                decoded,
                idf,
                emb,
                config=config,
                k_values=k_values,
                per_image=per_image,
            )
        )

    _write_csv(
        out_dir / "scores.csv",
        ["model_id", "k", "stratum", "metric", "value"],
        (
            (row.model_id, row.k, row.stratum, row.metric, _format_value(row.value))
            for row in table.rows
        ),
    )
    results = _all_correlations(table)
    _write_csv(
        out_dir / "correlations.csv",
        ["x_metric", "y_metric", "n", "r", "r2", "p"],
        _correlation_rows(results),
    )
    rankings, skipped = _rankings(table, args.top_k)
    _write_csv(
        out_dir / "ranking.csv",
        ["postgen_metric", "rank", "pregen_metric", "r2", "r", "p"],
        _ranking_rows(rankings),
    )
    _write_csv(
        out_dir / "skipped.csv",
        ["postgen_metric", "pregen_metric", "reason"],
        (
            (y_metric, name, reason)
            for y_metric in sorted(skipped)
            for name, reason in skipped[y_metric]
        ),
    )
    baseline = "geomean_join_pplx_none"
    for y_metric in sorted(rankings):
        pairs = [(baseline, y_metric)]
        if rankings[y_metric]:
            pairs.append((rankings[y_metric][0].pregen_metric, y_metric))
        for x_metric, target in dict.fromkeys(pairs):
            _write_csv(
                out_dir / f"scatter_{x_metric}__vs__{target}.csv",
                ["x", "y", "model_id", "k", "stratum"],
                _scatter_rows(table, x_metric, target),
            )
    counts = {m: len(table.samples(m)) for m in rankings}
    _print_ranking_tables(rankings, counts)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    ranking_path = Path(args.study) / "ranking.csv"
    rankings: dict[str, list[analysis.RankedMetric]] = {}
    with open(ranking_path, "r", encoding="utf-8", newline="") as handle:
        for record in csv.DictReader(handle):
            item = analysis.RankedMetric(
                rank=int(record["rank"]),
                pregen_metric=record["pregen_metric"],
                r_squared=float(record["r2"]),
                r=float(record["r"]),
                p_value=float(record["p"]),
            )
            rankings.setdefault(record["postgen_metric"], []).append(item)
    for y_metric in rankings:
        rankings[y_metric] = sorted(rankings[y_metric], key=lambda i: i.rank)[: args.top_k]
    _print_ranking_tables(rankings)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capeval",
        description="Caption-quality evaluation: pre-gen metrics, post-gen metrics, "
        "stratified correlation studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pregen", help="compute all 504 pre-gen metrics from a trace file")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-end-token", action="store_true")
    p.set_defaults(func=cmd_pregen)

    p = sub.add_parser("postgen", help="compute per-image and corpus post-gen metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_postgen)

    p = sub.add_parser("stratify", help="split images into k strata by per-image CIDEr-D")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", default="2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stratify)

    p = sub.add_parser("correlate", help="correlate pre-gen against post-gen metrics")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("rank", help="rank pre-gen metrics by R^2 against post-gen metrics")
    p.add_argument("--scores", required=True)
    p.add_argument("--postgen", default=None, help="restrict to one post-gen metric")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    toy = sub.add_parser("toy", help="synthetic world: gen | train | decode | trace")
    toy_sub = toy.add_subparsers(dest="toy_command", required=True)

    p = toy_sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-images", type=int, default=120)
    p.add_argument("--refs-per-image", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings-out", default=None)
    p.set_defaults(func=cmd_toy_gen)

    p = toy_sub.add_parser("train", help="train a toy model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy_train)

    p = toy_sub.add_parser("decode", help="beam-decode captions for every image")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy_decode)

    p = toy_sub.add_parser("trace", help="emit teacher-forced traces for every reference")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy_trace)

    p = sub.add_parser("study", help="run the full pre-gen/post-gen correlation study")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-images", type=int, default=120)
    p.add_argument("--refs-per-image", type=int, default=3)
    p.add_argument(
        "--epsilon-grid",
        default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
    )
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--k", default="1,2,3,4,5")
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--no-end-token", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("report", help="reprint the top-k tables from a study directory")
    p.add_argument("--study", required=True, help="study output directory")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        filename = exc.filename if exc.filename else exc
        print(f"capeval: file not found: {filename}", file=sys.stderr)
        return 2
    except (SchemaError, ValueError, OSError) as exc:
        print(f"capeval: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
