"""The four-tier pre-generation metric space.

A pre-gen metric scores a caption generator from its probabilities on
reference captions alone, before decoding anything. Each metric composes
four tiers:

1. a filter selecting which token positions count,
2. a sentence score folding the selected probabilities per caption,
3. an image aggregator folding caption scores per image (or ``join``),
4. a dataset aggregator folding image scores into one number.

3 filters x 4 sentence scores x 7 image aggregators x 6 dataset aggregators
gives 504 compositions. A metric is named tier-4 first, e.g.
``mean_max_normcount_prefix0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .datamodel import CaptionTrace


class FilterKind(str, Enum):
    NONE = "none"
    FILTER0 = "filter0"
    PREFIX0 = "prefix0"


class SentenceScoreKind(str, Enum):
    PROB = "prob"
    PPLX = "pplx"
    COUNT = "count"
    NORMCOUNT = "normcount"


class ImageAggKind(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    MEDIAN = "median"
    GEOMEAN = "geomean"
    MAX = "max"
    MIN = "min"
    JOIN = "join"


class DatasetAggKind(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    MEDIAN = "median"
    GEOMEAN = "geomean"
    MAX = "max"
    MIN = "min"


@dataclass(frozen=True)
class PregenConfig:
    """Engine knobs. ``include_end_token`` controls whether the end-token
    prediction (position m+1) is a candidate position."""

    include_end_token: bool = True


@dataclass(frozen=True)
class PregenMetricId:
    """One of the 504 tier compositions."""

    t1: FilterKind
    t2: SentenceScoreKind
    t3: ImageAggKind
    t4: DatasetAggKind

    @property
    def canonical_name(self) -> str:
        return f"{self.t4.value}_{self.t3.value}_{self.t2.value}_{self.t1.value}"


def parse_metric_name(name: str) -> PregenMetricId:
    """Inverse of ``canonical_name``: ``<t4>_<t3>_<t2>_<t1>``."""
    parts = name.split("_")
    if len(parts) != 4:
        raise ValueError(f"metric name {name!r} must have exactly 4 components, got {len(parts)}")
    raw4, raw3, raw2, raw1 = parts
    if raw4 == "join":
        raise ValueError(f"metric name {name!r}: 'join' is not a dataset aggregator")
    try:
        t4 = DatasetAggKind(raw4)
    except ValueError:
        raise ValueError(f"metric name {name!r}: unknown dataset aggregator {raw4!r}") from None
    try:
        t3 = ImageAggKind(raw3)
    except ValueError:
        raise ValueError(f"metric name {name!r}: unknown image aggregator {raw3!r}") from None
    try:
        t2 = SentenceScoreKind(raw2)
    except ValueError:
        raise ValueError(f"metric name {name!r}: unknown sentence score {raw2!r}") from None
    try:
        t1 = FilterKind(raw1)
    except ValueError:
        raise ValueError(f"metric name {name!r}: unknown filter {raw1!r}") from None
    return PregenMetricId(t1=t1, t2=t2, t3=t3, t4=t4)


def enumerate_metrics() -> list[PregenMetricId]:
    """All 504 metric ids, lexicographic by (t4, t3, t2, t1) name."""
    t4s = sorted(DatasetAggKind, key=lambda k: k.value)
    t3s = sorted(ImageAggKind, key=lambda k: k.value)
    t2s = sorted(SentenceScoreKind, key=lambda k: k.value)
    t1s = sorted(FilterKind, key=lambda k: k.value)
    return [
        PregenMetricId(t1=t1, t2=t2, t3=t3, t4=t4)
        for t4 in t4s
        for t3 in t3s
        for t2 in t2s
        for t1 in t1s
    ]


def candidate_positions(trace: CaptionTrace, config: PregenConfig) -> int:
    """Number of positions a filter may select: m+1 with the end token, m without."""
    m = len(trace.tokens)
    return m + 1 if config.include_end_token else m


def apply_filter(kind: FilterKind, trace: CaptionTrace, config: PregenConfig) -> list[int]:
    """Selected position indices (1-based, ascending) out of 1..P."""
    limit = candidate_positions(trace, config)
    flags = [trace.predictions[i].is_argmax for i in range(limit)]
    if kind is FilterKind.NONE:
        return list(range(1, limit + 1))
    if kind is FilterKind.FILTER0:
        return [i + 1 for i, flag in enumerate(flags) if flag]
    # prefix0: longest prefix of all-argmax positions.
    selected = []
    for i, flag in enumerate(flags):
        if not flag:
            break
        selected.append(i + 1)
    return selected


def sentence_score(
    kind: SentenceScoreKind,
    trace: CaptionTrace,
    selected: Sequence[int],
    config: PregenConfig,
) -> float:
    """Fold the selected positions' probabilities into one caption score.

    Conventions for empty selections: prob = 1.0 (empty product),
    pplx = +inf, count = 0, normcount = 0. A selected probability of 0
    makes prob 0.0 and pplx +inf.
    """
    if kind is SentenceScoreKind.COUNT:
        return float(len(selected))
    if kind is SentenceScoreKind.NORMCOUNT:
        return len(selected) / candidate_positions(trace, config)
    probs = [trace.predictions[i - 1].probability for i in selected]
    if kind is SentenceScoreKind.PROB:
        if any(p == 0.0 for p in probs):
            return 0.0
        return math.exp(math.fsum(math.log(p) for p in probs))
    # pplx = (prod p)^(-1/N)
    if not probs:
        return math.inf
    if any(p == 0.0 for p in probs):
        return math.inf
    return math.exp(-math.fsum(math.log(p) for p in probs) / len(probs))


def aggregate(kind: ImageAggKind | DatasetAggKind, values: Sequence[float]):
    """Fold a nonempty score sequence; ``join`` returns it unchanged.

    IEEE semantics carry +inf sentinels through: max/min/median stay
    well-defined, sum/mean/geomean become +inf. A zero value forces
    geomean to 0 (zeros and infinities never co-occur in tier outputs).
    """
    if len(values) == 0:
        raise ValueError("no scores to aggregate")
    if kind is ImageAggKind.JOIN:
        return list(values)
    name = kind.value
    if name == "sum":
        return math.fsum(values)
    if name == "mean":
        return math.fsum(values) / len(values)
    if name == "median":
        ordered = sorted(values)
        mid = len(ordered) // 2
        if len(ordered) % 2 == 1:
            return ordered[mid]
        return (ordered[mid - 1] + ordered[mid]) / 2.0
    if name == "max":
        return max(values)
    if name == "min":
        return min(values)
    # geomean
    if any(v < 0 for v in values):
        raise ValueError("geomean of a negative value")
    if any(v == 0.0 for v in values):
        return 0.0
    if any(math.isinf(v) for v in values):
        return math.inf
    return math.exp(math.fsum(math.log(v) for v in values) / len(values))


def group_traces(traces: Iterable[CaptionTrace]) -> dict[str, list[CaptionTrace]]:
    """Group traces by image id; images and captions in ascending id order."""
    grouped: dict[str, list[CaptionTrace]] = {}
    for trace in traces:
        grouped.setdefault(trace.image_id, []).append(trace)
    ordered = {}
    for image_id in sorted(grouped):
        ordered[image_id] = sorted(grouped[image_id], key=lambda t: t.caption_id)
    return ordered


def compute_metric(
    metric: PregenMetricId,
    traces: Iterable[CaptionTrace] | Mapping[str, Sequence[CaptionTrace]],
    config: PregenConfig = PregenConfig(),
) -> float:
    """Evaluate one metric over a trace set (deterministic image/caption order)."""
    grouped = traces if isinstance(traces, Mapping) else group_traces(traces)
    if not grouped:
        raise ValueError("no scores to aggregate")
    caption_scores_per_image: list[list[float]] = []
    for image_id in sorted(grouped):
        image_traces = sorted(grouped[image_id], key=lambda t: t.caption_id)
        scores = [
            sentence_score(metric.t2, trace, apply_filter(metric.t1, trace, config), config)
            for trace in image_traces
        ]
        caption_scores_per_image.append(scores)
    if metric.t3 is ImageAggKind.JOIN:
        joined = [s for scores in caption_scores_per_image for s in scores]
        return aggregate(metric.t4, joined)
    image_scores = [aggregate(metric.t3, scores) for scores in caption_scores_per_image]
    return aggregate(metric.t4, image_scores)


_SCALAR_AGGS = ("geomean", "max", "mean", "median", "min", "sum")


def _scalar_aggregates(values: Sequence[float]) -> dict[str, float]:
    """All six scalar aggregates of one list in a single pass.

    Bitwise-identical to ``aggregate`` per kind: same fsum sequences, same
    median rule, same geomean zero/infinity conventions.
    """
    n = len(values)
    if n == 0:
        raise ValueError("no scores to aggregate")
    total = math.fsum(values)
    ordered = sorted(values)
    mid = n // 2
    if n % 2 == 1:
        median = ordered[mid]
    else:
        median = (ordered[mid - 1] + ordered[mid]) / 2.0
    low = ordered[0]
    high = ordered[-1]
    if low < 0:
        raise ValueError("geomean of a negative value")
    if low == 0.0:
        geomean = 0.0
    elif math.isinf(high):
        geomean = math.inf
    else:
        geomean = math.exp(math.fsum(math.log(v) for v in values) / n)
    return {
        "geomean": geomean,
        "max": high,
        "mean": total / n,
        "median": median,
        "min": low,
        "sum": total,
    }


def _caption_pair_scores(trace: CaptionTrace, config: PregenConfig) -> dict[tuple[str, str], float]:
    """Tier-2 scores for all 12 (filter, sentence score) pairs of one caption."""
    limit = candidate_positions(trace, config)
    predictions = trace.predictions
    probs = [predictions[i].probability for i in range(limit)]
    flags = [predictions[i].is_argmax for i in range(limit)]

    all_positions = probs
    filtered = [p for p, flag in zip(probs, flags) if flag]
    prefix_len = 0
    for flag in flags:
        if not flag:
            break
        prefix_len += 1
    prefix = probs[:prefix_len]

    scores: dict[tuple[str, str], float] = {}
    for name, selected in (("none", all_positions), ("filter0", filtered), ("prefix0", prefix)):
        count = len(selected)
        scores[(name, "count")] = float(count)
        scores[(name, "normcount")] = count / limit
        if any(p == 0.0 for p in selected):
            scores[(name, "prob")] = 0.0
            scores[(name, "pplx")] = math.inf
        else:
            log_total = math.fsum(math.log(p) for p in selected)
            scores[(name, "prob")] = math.exp(log_total)
            scores[(name, "pplx")] = math.exp(-log_total / count) if count else math.inf
    return scores


def compute_all(
    traces: Iterable[CaptionTrace],
    config: PregenConfig = PregenConfig(),
) -> dict[str, float]:
    """Evaluate all 504 metrics, sharing tier-1/tier-2 work across compositions.

    Each (filter, sentence score) pair is computed once per caption, each
    image's caption scores are folded by all aggregators in one pass, and
    likewise at the dataset tier. Values match ``compute_metric`` bit for
    bit.
    """
    grouped = group_traces(traces)
    if not grouped:
        raise ValueError("no scores to aggregate")
    pair_keys = [(t1.value, t2.value) for t1 in FilterKind for t2 in SentenceScoreKind]

    # (t1, t2) -> per-image caption-score lists, in ascending image order.
    per_pair: dict[tuple[str, str], list[list[float]]] = {key: [] for key in pair_keys}
    for image_id in sorted(grouped):
        image_traces = sorted(grouped[image_id], key=lambda t: t.caption_id)
        caption_scores = [_caption_pair_scores(trace, config) for trace in image_traces]
        for key in pair_keys:
            per_pair[key].append([scores[key] for scores in caption_scores])

    # (t1, t2, t3) -> {t4 name: value}
    folded: dict[tuple[str, str, str], dict[str, float]] = {}
    for key, per_image in per_pair.items():
        image_aggs = [_scalar_aggregates(scores) for scores in per_image]
        for t3 in _SCALAR_AGGS:
            folded[(*key, t3)] = _scalar_aggregates([aggs[t3] for aggs in image_aggs])
        folded[(*key, "join")] = _scalar_aggregates(
            [score for scores in per_image for score in scores]
        )

    return {
        name: folded[(t1, t2, t3)][t4]
        for name, t1, t2, t3, t4 in _metric_name_keys()
    }


_METRIC_NAME_KEYS: list[tuple[str, str, str, str, str]] = []


def _metric_name_keys() -> list[tuple[str, str, str, str, str]]:
    if not _METRIC_NAME_KEYS:
        _METRIC_NAME_KEYS.extend(
            (m.canonical_name, m.t1.value, m.t2.value, m.t3.value, m.t4.value)
            for m in enumerate_metrics()
        )
    return _METRIC_NAME_KEYS
