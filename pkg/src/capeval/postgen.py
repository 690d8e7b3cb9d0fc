"""Reference-based caption metrics: CIDEr-D, corpus BLEU, and Word Mover's
Distance backed by the exact transportation solver.

CIDEr-D follows the consensus formulation: per-n tf-idf vectors with
candidate counts clipped to the reference's, cosine normalization by the
unclipped norms, and a gaussian length penalty (sigma = 6), averaged over
references and n = 1..4, scaled by 10. Clipping is applied to the numerator
only; normalizing by the clipped candidate norm would reward token
repetition, which the clipping exists to punish.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .datamodel import Dataset, ImageEntry
from .transport import TransportProblem, solve_transport

MAX_NGRAM = 4
CIDER_SIGMA = 6.0

Tokens = Sequence[str]


def ngram_counts(tokens: Tokens, max_n: int = MAX_NGRAM) -> Counter:
    """Multiset of n-grams for n = 1..max_n, keyed by token tuples."""
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


@dataclass(frozen=True)
class IdfTable:
    """Inverse document frequencies over a reference corpus.

    ``idf[g] = ln(corpus_size / df(g))`` where df counts images whose
    reference set contains g. N-grams never seen in the corpus weigh
    ``ln(corpus_size)`` (document frequency floored at 1).
    """

    weights: Mapping[tuple[str, ...], float]
    corpus_size: int

    def weight(self, gram: tuple[str, ...]) -> float:
        got = self.weights.get(gram)
        if got is None:
            return math.log(self.corpus_size)
        return got


def build_idf(dataset: Dataset) -> IdfTable:
    if len(dataset) == 0:
        raise ValueError("cannot build idf over an empty dataset")
    document_frequency: Counter = Counter()
    for entry in dataset:
        grams: set[tuple[str, ...]] = set()
        for ref in entry.references:
            grams.update(ngram_counts(ref))
        for gram in grams:
            document_frequency[gram] += 1
    size = len(dataset)
    weights = {gram: math.log(size / df) for gram, df in document_frequency.items()}
    return IdfTable(weights=weights, corpus_size=size)


def _tfidf_by_n(counts: Counter, idf: IdfTable) -> list[dict[tuple[str, ...], float]]:
    vectors: list[dict[tuple[str, ...], float]] = [{} for _ in range(MAX_NGRAM)]
    for gram, count in counts.items():
        vectors[len(gram) - 1][gram] = count * idf.weight(gram)
    return vectors


def cider_d(candidate: Tokens, references: Sequence[Tokens], idf: IdfTable) -> float:
    """Per-image CIDEr-D score in [0, 10]."""
    if not candidate:
        raise ValueError("candidate caption is empty")
    if not references or any(not r for r in references):
        raise ValueError("references must be nonempty")
    cand_vecs = _tfidf_by_n(ngram_counts(candidate), idf)
    cand_norms = [math.sqrt(math.fsum(w * w for w in vec.values())) for vec in cand_vecs]
    per_n_totals = [0.0] * MAX_NGRAM
    for ref in references:
        ref_vecs = _tfidf_by_n(ngram_counts(ref), idf)
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * CIDER_SIGMA**2))
        for n in range(MAX_NGRAM):
            ref_vec = ref_vecs[n]
            ref_norm = math.sqrt(math.fsum(w * w for w in ref_vec.values()))
            if cand_norms[n] == 0.0 or ref_norm == 0.0:
                continue
            numerator = math.fsum(
                min(w, ref_vec[gram]) * ref_vec[gram]
                for gram, w in cand_vecs[n].items()
                if gram in ref_vec
            )
            per_n_totals[n] += penalty * numerator / (cand_norms[n] * ref_norm)
    mean_over_n = math.fsum(per_n_totals) / MAX_NGRAM
    return 10.0 * mean_over_n / len(references)


def bleu(pairs: Sequence[tuple[Tokens, Sequence[Tokens]]], max_n: int = MAX_NGRAM) -> float:
    """Corpus BLEU with reference-clipped modified precision and brevity penalty."""
    if not pairs:
        raise ValueError("bleu needs at least one candidate")
    matched = [0] * max_n
    total = [0] * max_n
    candidate_length = 0
    reference_length = 0
    for candidate, references in pairs:
        if not candidate:
            raise ValueError("candidate caption is empty")
        if not references or any(not r for r in references):
            raise ValueError("references must be nonempty")
        candidate_length += len(candidate)
        # Closest reference length; ties go to the shorter one.
        reference_length += min(
            (abs(len(r) - len(candidate)), len(r)) for r in references
        )[1]
        for n in range(1, max_n + 1):
            cand_grams = Counter(
                tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1)
            )
            if not cand_grams:
                continue
            clip: Counter = Counter()
            for ref in references:
                ref_grams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
                for gram in cand_grams:
                    clip[gram] = max(clip[gram], ref_grams.get(gram, 0))
            matched[n - 1] += sum(min(count, clip[gram]) for gram, count in cand_grams.items())
            total[n - 1] += sum(cand_grams.values())
    # Levels where no candidate is long enough contribute no precision and
    # are skipped; a zero precision with a nonzero denominator zeroes BLEU.
    log_precisions = []
    for n in range(max_n):
        if total[n] == 0:
            continue
        if matched[n] == 0:
            return 0.0
        log_precisions.append(math.log(matched[n] / total[n]))
    brevity = min(1.0, math.exp(1.0 - reference_length / candidate_length))
    return brevity * math.exp(math.fsum(log_precisions) / len(log_precisions))


@dataclass(frozen=True)
class EmbeddingTable:
    """Word vectors of a fixed dimension."""

    vectors: Mapping[str, tuple[float, ...]]
    dimension: int

    def __post_init__(self) -> None:
        for word, vector in self.vectors.items():
            if len(vector) != self.dimension:
                raise ValueError(
                    f"embedding for {word!r} has dimension {len(vector)}, expected {self.dimension}"
                )

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def distance(self, a: str, b: str) -> float:
        va = self.vectors[a]
        vb = self.vectors[b]
        return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(va, vb)))


def load_embeddings(path: str) -> EmbeddingTable:
    """Read text word2vec format: header "V d", then one "word v1 .. vd" per line."""
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'V d'")
        count, dimension = int(header[0]), int(header[1])
        if dimension < 1:
            raise ValueError(f"{path}: dimension must be >= 1")
        vectors: dict[str, tuple[float, ...]] = {}
        for lineno, line in enumerate(handle, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dimension + 1:
                raise ValueError(f"{path}:{lineno}: expected {dimension + 1} fields")
            vectors[parts[0]] = tuple(float(x) for x in parts[1:])
    if len(vectors) != count:
        raise ValueError(f"{path}: header promised {count} vectors, found {len(vectors)}")
    return EmbeddingTable(vectors=vectors, dimension=dimension)


def save_embeddings(path: str, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{len(table.vectors)} {table.dimension}\n")
        for word in sorted(table.vectors):
            values = " ".join(repr(x) for x in table.vectors[word])
            handle.write(f"{word} {values}\n")


def wmd(candidate: Tokens, reference: Tokens, emb: EmbeddingTable) -> float:
    """Word Mover's Distance between two token bags.

    Out-of-vocabulary tokens are dropped. Marginals are made integral by
    cross-multiplying the two bags' total counts, so the transport solver
    terminates exactly; the objective is scaled back by the common total.
    """
    cand_counts = Counter(t for t in candidate if t in emb)
    ref_counts = Counter(t for t in reference if t in emb)
    if not cand_counts or not ref_counts:
        raise ValueError("no embeddable tokens on one side of the wmd pair")
    cand_words = sorted(cand_counts)
    ref_words = sorted(ref_counts)
    cand_total = sum(cand_counts.values())
    ref_total = sum(ref_counts.values())
    supplies = tuple(cand_counts[w] * ref_total for w in cand_words)
    demands = tuple(ref_counts[w] * cand_total for w in ref_words)
    costs = tuple(
        tuple(emb.distance(cw, rw) for rw in ref_words) for cw in cand_words
    )
    objective, _ = solve_transport(
        TransportProblem(supplies=supplies, demands=demands, costs=costs)
    )
    return objective / (cand_total * ref_total)


POSTGEN_METRICS = ("bleu", "cider", "wmd_sim")


def per_image_postgen(image: ImageEntry, idf: IdfTable, emb: EmbeddingTable) -> dict[str, float]:
    """Per-image scores of the generated caption against the references."""
    if image.generated is None:
        raise ValueError(f"image {image.image_id!r} has no generated caption")
    generated = image.generated
    distance = min(wmd(generated, ref, emb) for ref in image.references)
    return {
        "bleu": bleu([(generated, image.references)]),
        "cider": cider_d(generated, image.references, idf),
        "wmd_sim": math.exp(-distance),
    }


def corpus_postgen(
    dataset: Dataset,
    idf: IdfTable,
    emb: EmbeddingTable,
    per_image: Mapping[str, Mapping[str, float]] | None = None,
) -> dict[str, float]:
    """Corpus scores: mean per-image cider and wmd_sim, corpus-level bleu.

    ``per_image`` may carry precomputed per-image scores (e.g. when scoring
    many overlapping strata); values must come from ``per_image_postgen``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    pairs = []
    ciders = []
    wmd_sims = []
    for entry in dataset:
        if entry.generated is None:
            raise ValueError(f"image {entry.image_id!r} has no generated caption")
        pairs.append((entry.generated, entry.references))
        scores = per_image[entry.image_id] if per_image is not None else per_image_postgen(entry, idf, emb)
        ciders.append(scores["cider"])
        wmd_sims.append(scores["wmd_sim"])
    return {
        "bleu": bleu(pairs),
        "cider": math.fsum(ciders) / len(ciders),
        "wmd_sim": math.fsum(wmd_sims) / len(wmd_sims),
    }
