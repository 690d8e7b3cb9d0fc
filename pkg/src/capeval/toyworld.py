"""A synthetic caption world with models of controllable quality.

Images carry (color, object, action) attributes drawn from small alphabets,
so several images share an attribute tuple and the model pools their
statistics. References realize one of three disjoint phrasing registers
(each register speaks its own synonym set for the attribute words) and end
with a register-specific alternating filler word. Models are count-based
conditional bigram tables P(next | previous token, attributes) with
add-alpha smoothing, corrupted toward the uniform distribution by a mixing
weight epsilon. Everything is an exact, seeded, pure function, so every
downstream number is reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .datamodel import CaptionTrace, Dataset, ImageEntry, TokenPrediction
from .postgen import EmbeddingTable

START_TOKEN = "<s>"
END_TOKEN = "</s>"

Attributes = tuple[str, str, str]

# Realizations per attribute value: one word per register.
COLORS: Mapping[str, tuple[str, str, str]] = {
    "red": ("red", "crimson", "scarlet"),
    "blue": ("blue", "azure", "cobalt"),
    "green": ("green", "emerald", "jade"),
}
OBJECTS: Mapping[str, tuple[str, str, str]] = {
    "dog": ("dog", "puppy", "hound"),
    "cat": ("cat", "kitten", "tabby"),
    "bird": ("bird", "sparrow", "finch"),
}
ACTIONS: Mapping[str, tuple[str, str, str]] = {
    "running": ("running", "sprinting", "racing"),
    "sleeping": ("sleeping", "resting", "dozing"),
    "jumping": ("jumping", "leaping", "hopping"),
}
_FAMILIES = (COLORS, OBJECTS, ACTIONS)

# Three phrasing registers sharing no vocabulary. Every register mentions
# all three attributes and ends with a two-way filler slot; the weights
# skew agreement so images disagree to different degrees, which is what
# grades model quality per image.
REGISTER_WEIGHTS = (0.45, 0.35, 0.20)
WOBBLE_WORDS = (("today", "tonight"), ("around", "about"), ("inside", "indoors"))
WOBBLE_RATE = 0.45

_REALIZATION_TO_CANONICAL: dict[str, tuple[int, str]] = {}
for _family_index, _family in enumerate(_FAMILIES):
    for _canonical, _variants in _family.items():
        for _variant in _variants:
            _REALIZATION_TO_CANONICAL[_variant] = (_family_index, _canonical)


def realize_reference(attrs: Attributes, register: int, wobble: int) -> tuple[str, ...]:
    """One reference caption in the given register (0..2), filler variant 0/1."""
    color, obj, action = attrs
    filler = WOBBLE_WORDS[register][wobble]
    if register == 0:
        return (COLORS[color][0], OBJECTS[obj][0], "is", ACTIONS[action][0], "out", filler)
    if register == 1:
        return ("one", COLORS[color][1], OBJECTS[obj][1], "keeps", ACTIONS[action][1], filler)
    if register == 2:
        return ("very", COLORS[color][2], OBJECTS[obj][2], "stays", ACTIONS[action][2], filler)
    raise ValueError(f"register must be 0..2, got {register}")


def world_words() -> list[str]:
    """Every word the toy world can emit, sorted."""
    words = {w for family in _FAMILIES for variants in family.values() for w in variants}
    words.update(w for pair in WOBBLE_WORDS for w in pair)
    words.update(("is", "out", "one", "keeps", "very", "stays"))
    return sorted(words)


def gen_world(seed: int, num_images: int, refs_per_image: int) -> Dataset:
    """Deterministic synthetic dataset of attribute-realizing references."""
    if num_images < 2:
        raise ValueError(f"num_images must be >= 2, got {num_images}")
    if refs_per_image < 1:
        raise ValueError(f"refs_per_image must be >= 1, got {refs_per_image}")
    rng = random.Random(f"world:{seed}")
    registers = tuple(range(len(REGISTER_WEIGHTS)))
    entries = []
    for i in range(num_images):
        attrs: Attributes = (
            rng.choice(sorted(COLORS)),
            rng.choice(sorted(OBJECTS)),
            rng.choice(sorted(ACTIONS)),
        )
        references = tuple(
            realize_reference(
                attrs,
                rng.choices(registers, weights=REGISTER_WEIGHTS, k=1)[0],
                1 if rng.random() < WOBBLE_RATE else 0,
            )
            for _ in range(refs_per_image)
        )
        entries.append(ImageEntry(image_id=f"img{i:05d}", references=references))
    return Dataset(tuple(entries))


def derive_attributes(references: Sequence[Sequence[str]]) -> Attributes:
    """Recover (color, object, action) from reference tokens.

    The realization alphabets are disjoint, so the attribute words in any
    single reference identify the image; generated references always carry
    all three.
    """
    found: list[str | None] = [None, None, None]
    for token in references[0]:
        hit = _REALIZATION_TO_CANONICAL.get(token)
        if hit is None:
            continue
        family_index, canonical = hit
        if found[family_index] is not None and found[family_index] != canonical:
            raise ValueError(f"reference mentions conflicting attributes: {references[0]}")
        found[family_index] = canonical
    if any(value is None for value in found):
        raise ValueError(f"reference does not identify all attributes: {references[0]}")
    return (found[0], found[1], found[2])  # type: ignore[return-value]


@dataclass
class ToyModel:
    """Conditional bigram table with add-alpha smoothing and uniform mixing.

    The published conditional is P' = (1 - epsilon) * P_smoothed + epsilon / V.
    Content words take the low token ids and the control tokens the highest,
    so argmax ties at fully uniform rows resolve to a real word.
    """

    vocab: tuple[str, ...]
    counts: Mapping[tuple[Attributes, str], Mapping[str, int]]
    epsilon: float
    alpha: float
    seed: int
    _token_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    _row_cache: dict[tuple[Attributes, str], tuple[tuple[float, ...], int]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.vocab[-2:] != (START_TOKEN, END_TOKEN):
            raise ValueError("vocab must end with the start and end tokens")
        self._token_ids = {token: i for i, token in enumerate(self.vocab)}
        self._row_cache = {}

    def token_id(self, token: str) -> int:
        got = self._token_ids.get(token)
        if got is None:
            raise ValueError(f"token {token!r} outside model vocabulary")
        return got

    def row(self, attrs: Attributes, previous: str) -> tuple[tuple[float, ...], int]:
        """(probabilities over the vocab, argmax token id) for one context."""
        key = (attrs, previous)
        cached = self._row_cache.get(key)
        if cached is not None:
            return cached
        size = len(self.vocab)
        context_counts = self.counts.get(key, {})
        total = sum(context_counts.values())
        denominator = total + self.alpha * size
        uniform = self.epsilon / size
        keep = 1.0 - self.epsilon
        probs = tuple(
            keep * ((context_counts.get(token, 0) + self.alpha) / denominator) + uniform
            for token in self.vocab
        )
        best = 0
        best_p = probs[0]
        for i in range(1, size):
            if probs[i] > best_p:
                best_p = probs[i]
                best = i
        result = (probs, best)
        self._row_cache[key] = result
        return result


def train_toy_model(dataset: Dataset, epsilon: float, alpha: float, seed: int) -> ToyModel:
    """Count bigrams per (attributes, previous token) over all references.

    The seed is recorded as model identity; training itself is an exact
    deterministic function of (dataset, epsilon, alpha).
    """
    counts: dict[tuple[Attributes, str], dict[str, int]] = {}
    words: set[str] = set()
    for entry in dataset:
        attrs = derive_attributes(entry.references)
        for ref in entry.references:
            words.update(ref)
            walk = [START_TOKEN, *ref, END_TOKEN]
            for previous, nxt in zip(walk, walk[1:]):
                row = counts.setdefault((attrs, previous), {})
                row[nxt] = row.get(nxt, 0) + 1
    vocab = (*sorted(words), START_TOKEN, END_TOKEN)
    return ToyModel(vocab=vocab, counts=counts, epsilon=epsilon, alpha=alpha, seed=seed)


def emit_traces(model: ToyModel, dataset: Dataset) -> list[CaptionTrace]:
    """Teacher-forced traces: probability and argmax flag for every reference
    position including the end token."""
    traces = []
    for entry in dataset:
        attrs = derive_attributes(entry.references)
        for j, ref in enumerate(entry.references):
            predictions = []
            previous = START_TOKEN
            for token in (*ref, END_TOKEN):
                token_id = model.token_id(token)
                probs, argmax_id = model.row(attrs, previous)
                predictions.append(
                    TokenPrediction(probability=probs[token_id], is_argmax=token_id == argmax_id)
                )
                previous = token
            traces.append(
                CaptionTrace(
                    image_id=entry.image_id,
                    caption_id=f"c{j:02d}",
                    tokens=tuple(ref),
                    predictions=tuple(predictions),
                )
            )
    return traces


def beam_search(
    model: ToyModel,
    image: ImageEntry,
    width: int = 3,
    max_len: int = 16,
) -> tuple[str, ...]:
    """Length-normalized beam search; width 1 reduces to greedy decoding.

    Beams are compared by mean log-probability per emitted token, ties by
    token-id sequence (so the lowest token id wins a tied step).
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    attrs = derive_attributes(image.references)
    end_id = model.token_id(END_TOKEN)

    # Each beam: (log-prob sum, token-id path). The normalized score divides
    # by the path length, which counts the end token when taken.
    live: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    finished: list[tuple[float, tuple[int, ...]]] = []
    for _ in range(max_len):
        candidates = []
        for logp, path in live:
            previous = model.vocab[path[-1]] if path else START_TOKEN
            probs, _ = model.row(attrs, previous)
            for token_id, p in enumerate(probs):
                candidates.append((logp + math.log(p), (*path, token_id)))
        candidates.sort(key=lambda c: (-(c[0] / len(c[1])), c[1]))
        live = []
        for cand in candidates[:width]:
            if cand[1][-1] == end_id:
                finished.append(cand)
            else:
                live.append(cand)
        if not live:
            break
    pool = finished + live
    score, path = min(pool, key=lambda c: (-(c[0] / len(c[1])), c[1]))
    if path and path[-1] == end_id:
        path = path[:-1]
    return tuple(model.vocab[token_id] for token_id in path)


def decode_dataset(model: ToyModel, dataset: Dataset, width: int = 3, max_len: int = 16) -> Dataset:
    """Copy of the dataset with generated captions from beam decoding."""
    entries = tuple(
        ImageEntry(
            image_id=entry.image_id,
            references=entry.references,
            generated=beam_search(model, entry, width=width, max_len=max_len),
        )
        for entry in dataset
    )
    return Dataset(entries)


def toy_embeddings(seed: int, dimension: int = 8) -> EmbeddingTable:
    """Deterministic word vectors for the toy vocabulary.

    Register variants of an attribute value sit close to its base word so
    WMD sees the attribute structure; unrelated words get independent
    vectors.
    """
    rng = random.Random(f"embeddings:{seed}")
    vectors: dict[str, tuple[float, ...]] = {}
    for family in _FAMILIES:
        for canonical in sorted(family):
            base = tuple(rng.gauss(0.0, 1.0) for _ in range(dimension))
            vectors[canonical] = base
            for variant in family[canonical]:
                if variant == canonical:
                    continue
                vectors[variant] = tuple(b + 0.15 * rng.gauss(0.0, 1.0) for b in base)
    for word in world_words():
        if word not in vectors:
            vectors[word] = tuple(rng.gauss(0.0, 1.0) for _ in range(dimension))
    return EmbeddingTable(vectors=vectors, dimension=dimension)


def save_model(path: str, model: ToyModel) -> None:
    payload = {
        "epsilon": model.epsilon,
        "alpha": model.alpha,
        "seed": model.seed,
        "vocab": list(model.vocab),
        "counts": {
            "|".join((*attrs, previous)): dict(sorted(row.items()))
            for (attrs, previous), row in sorted(model.counts.items())
        },
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1)
        handle.write("\n")


def load_model(path: str) -> ToyModel:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    counts: dict[tuple[Attributes, str], dict[str, int]] = {}
    for key, row in payload["counts"].items():
        color, obj, action, previous = key.split("|")
        counts[((color, obj, action), previous)] = {t: int(c) for t, c in row.items()}
    return ToyModel(
        vocab=tuple(payload["vocab"]),
        counts=counts,
        epsilon=float(payload["epsilon"]),
        alpha=float(payload["alpha"]),
        seed=int(payload["seed"]),
    )
