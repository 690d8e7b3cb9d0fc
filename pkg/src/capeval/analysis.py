"""Stratification, correlation, and pre-gen metric ranking.

The study widens the dynamic range of metric scores by splitting each
model's dataset into k quality-ordered strata (by per-image CIDEr-D) for
k = 1..5, scoring every stratum with all pre-gen and post-gen metrics, and
correlating the two families over the pooled (model, k, stratum) samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .datamodel import CaptionTrace, Dataset
from .postgen import (
    EmbeddingTable,
    IdfTable,
    POSTGEN_METRICS,
    corpus_postgen,
    per_image_postgen,
)
from .pregen import PregenConfig, compute_all, enumerate_metrics

DEFAULT_K_VALUES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class StratumAssignment:
    """Partition of images into k strata ordered worst-to-best."""

    k: int
    assignment: Mapping[str, int]

    def stratum_images(self, index: int) -> list[str]:
        return sorted(i for i, s in self.assignment.items() if s == index)


def stratify(per_image_scores: Mapping[str, float], k: int) -> StratumAssignment:
    """Split images into k contiguous score-sorted chunks, worst first.

    Sizes differ by at most one; the first (N mod k) strata take the extra
    image. Ties sort by image id so the split is deterministic.
    """
    n = len(per_image_scores)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k ({k}) exceeds the image count ({n})")
    ordered = sorted(per_image_scores, key=lambda image_id: (per_image_scores[image_id], image_id))
    base, extra = divmod(n, k)
    assignment: dict[str, int] = {}
    cursor = 0
    for stratum in range(k):
        size = base + (1 if stratum < extra else 0)
        for image_id in ordered[cursor : cursor + size]:
            assignment[image_id] = stratum
        cursor += size
    return StratumAssignment(k=k, assignment=assignment)


@dataclass(frozen=True)
class ScoreRow:
    model_id: str
    k: int
    stratum: int
    metric: str
    value: float


class ScoreTable:
    """Rows of (model, k, stratum, metric) -> value with uniqueness enforced."""

    def __init__(self, rows: Iterable[ScoreRow] = ()) -> None:
        self.rows: list[ScoreRow] = []
        self._by_metric: dict[str, dict[tuple[str, int, int], float]] = {}
        for row in rows:
            self.append(row)

    def append(self, row: ScoreRow) -> None:
        per_metric = self._by_metric.setdefault(row.metric, {})
        key = (row.model_id, row.k, row.stratum)
        if key in per_metric:
            raise ValueError(f"duplicate score row {key + (row.metric,)}")
        per_metric[key] = row.value
        self.rows.append(row)

    def extend(self, rows: Iterable[ScoreRow]) -> None:
        for row in rows:
            self.append(row)

    def samples(self, metric: str) -> dict[tuple[str, int, int], float]:
        """(model, k, stratum) -> value for one metric."""
        return dict(self._by_metric.get(metric, {}))

    def metrics(self) -> list[str]:
        return sorted(self._by_metric)


def expand_strata(
    model_id: str,
    traces: Sequence[CaptionTrace],
    dataset: Dataset,
    idf: IdfTable,
    emb: EmbeddingTable,
    config: PregenConfig = PregenConfig(),
    k_values: Sequence[int] = DEFAULT_K_VALUES,
    per_image: Mapping[str, Mapping[str, float]] | None = None,
) -> list[ScoreRow]:
    """Score every stratum of every k with all pre-gen and post-gen metrics.

    Stratification uses per-image CIDEr-D of the generated captions with the
    idf table passed in (built once on the whole dataset, not per stratum).
    ``per_image`` may carry per-image scores precomputed by the caller.
    """
    if per_image is None:
        per_image = {entry.image_id: per_image_postgen(entry, idf, emb) for entry in dataset}
    per_image_cider = {image_id: scores["cider"] for image_id, scores in per_image.items()}
    traces_by_image: dict[str, list[CaptionTrace]] = {}
    for trace in traces:
        traces_by_image.setdefault(trace.image_id, []).append(trace)

    rows: list[ScoreRow] = []
    for k in k_values:
        split = stratify(per_image_cider, k)
        for stratum in range(k):
            image_ids = split.stratum_images(stratum)
            sub_dataset = dataset.restrict(image_ids)
            sub_traces = [t for i in image_ids for t in traces_by_image.get(i, [])]
            pregen_scores = compute_all(sub_traces, config)
            postgen_scores = corpus_postgen(sub_dataset, idf, emb, per_image=per_image)
            for metric in sorted(pregen_scores):
                rows.append(ScoreRow(model_id, k, stratum, metric, pregen_scores[metric]))
            for metric in POSTGEN_METRICS:
                rows.append(ScoreRow(model_id, k, stratum, metric, postgen_scores[metric]))
    return rows


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz continued fraction for the incomplete beta integral."""
    max_iterations = 300
    epsilon = 1e-16
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iterations + 1):
        m2 = 2 * m
        numerator = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        numerator = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < epsilon:
            return h
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """Two-sided tail probability of Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


# Smallest positive float; perfect correlations would otherwise yield p = 0,
# which the p in (0, 1] contract excludes.
_MIN_P = 5e-324


@dataclass(frozen=True)
class CorrelationResult:
    x_metric: str
    y_metric: str
    n: int
    r: float
    r_squared: float
    p_value: float


def pearson(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Pearson's r and its two-sided p-value.

    Requires n >= 3 finite samples with nonzero variance on both sides;
    non-finite inputs (e.g. the pplx +inf sentinel) are rejected so callers
    exclude those metrics' rows instead of correlating against infinity.
    """
    n = len(xs)
    if n != len(ys):
        raise ValueError("samples must have equal length")
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    if any(not math.isfinite(x) for x in xs) or any(not math.isfinite(y) for y in ys):
        raise ValueError("non-finite sample values; exclude this metric's rows")
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    dx = [x - mean_x for x in xs]
    dy = [y - mean_y for y in ys]
    var_x = math.fsum(d * d for d in dx)
    var_y = math.fsum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise ValueError("degenerate sample: zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(var_x * var_y)
    r = max(-1.0, min(1.0, r))
    if r * r >= 1.0:
        return r, _MIN_P
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = student_t_two_sided_p(t, n - 2)
    return r, min(max(p, _MIN_P), 1.0)


def correlate(table: ScoreTable, x_metric: str, y_metric: str) -> CorrelationResult:
    """Correlate two metrics over their common (model, k, stratum) samples."""
    xs_map = table.samples(x_metric)
    ys_map = table.samples(y_metric)
    keys = sorted(set(xs_map) & set(ys_map))
    xs = [xs_map[key] for key in keys]
    ys = [ys_map[key] for key in keys]
    r, p = pearson(xs, ys)
    return CorrelationResult(
        x_metric=x_metric,
        y_metric=y_metric,
        n=len(keys),
        r=r,
        r_squared=r * r,
        p_value=p,
    )


@dataclass(frozen=True)
class RankedMetric:
    rank: int
    pregen_metric: str
    r_squared: float
    r: float
    p_value: float


def rank_pregen(
    table: ScoreTable,
    postgen_metric: str,
    top_k: int = 5,
) -> tuple[list[RankedMetric], list[tuple[str, str]]]:
    """Top pre-gen metrics by R-squared against one post-gen metric.

    Returns (ranking, skipped) where skipped holds (metric, reason) for
    pre-gen metrics with non-finite or zero-variance samples.
    """
    y_map = table.samples(postgen_metric)
    if len(y_map) < 3:
        raise ValueError(f"need at least 3 strata rows for {postgen_metric!r}")
    scored: list[tuple[float, str, CorrelationResult]] = []
    skipped: list[tuple[str, str]] = []
    for metric in enumerate_metrics():
        name = metric.canonical_name
        x_map = table.samples(name)
        if not x_map:
            continue
        keys = sorted(set(x_map) & set(y_map))
        xs = [x_map[key] for key in keys]
        ys = [y_map[key] for key in keys]
        if any(not math.isfinite(x) for x in xs):
            skipped.append((name, "non-finite values"))
            continue
        if len(keys) < 3:
            skipped.append((name, "too few samples"))
            continue
        if len(set(xs)) == 1:
            skipped.append((name, "degenerate sample: zero variance"))
            continue
        try:
            r, p = pearson(xs, ys)
        except ValueError as exc:
            skipped.append((name, str(exc)))
            continue
        result = CorrelationResult(name, postgen_metric, len(keys), r, r * r, p)
        scored.append((result.r_squared, name, result))
    if not scored:
        raise ValueError(f"no valid pre-gen metric to rank against {postgen_metric!r}")
    scored.sort(key=lambda item: (-item[0], item[1]))
    ranking = [
        RankedMetric(
            rank=i + 1,
            pregen_metric=result.x_metric,
            r_squared=result.r_squared,
            r=result.r,
            p_value=result.p_value,
        )
        for i, (_, _, result) in enumerate(scored[:top_k])
    ]
    return ranking, skipped
