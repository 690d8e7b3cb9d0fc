"""Shared domain types, canonical tokenization, and the trace/dataset file formats.

Everything here is immutable after construction and safe to share across
threads. File formats:

* ``traces.jsonl`` -- one JSON object per line:
  ``{"image_id","caption_id","tokens","p_ref","argmax"}`` where ``p_ref`` and
  ``argmax`` have one entry per caption token plus one for the end token.
* ``dataset.json`` -- ``{"images": [{"id","refs","gen"?}]}`` with ``refs`` a
  list of token lists and ``gen`` an optional token list.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class SchemaError(ValueError):
    """A file or record violates the trace/dataset schema or its invariants."""


_NON_TOKEN_CHARS = re.compile(r"[^a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Canonical tokenizer: lowercase, keep only [a-z0-9'], split on whitespace.

    All-punctuation input yields an empty list; callers decide whether that
    is an error.
    """
    return [piece for piece in _NON_TOKEN_CHARS.sub(" ", text.lower()).split() if piece]


def _check_token(token: str, context: str) -> None:
    # Tokens must be exactly what tokenize() can produce; control tokens
    # like "<s>" never appear in traces or datasets.
    if not token or _NON_TOKEN_CHARS.search(token):
        raise SchemaError(f"{context}: invalid token {token!r}")


@dataclass(frozen=True)
class TokenPrediction:
    """Model output for one reference position: probability of the correct
    next token and whether that token was the vocabulary argmax."""

    probability: float
    is_argmax: bool

    def __post_init__(self) -> None:
        if not (0.0 <= self.probability <= 1.0):
            raise SchemaError(f"probability {self.probability!r} outside [0, 1]")


@dataclass(frozen=True)
class CaptionTrace:
    """Teacher-forced predictions for one reference caption.

    ``predictions`` has ``len(tokens) + 1`` entries: one per caption token and
    a final one for the end token.
    """

    image_id: str
    caption_id: str
    tokens: tuple[str, ...]
    predictions: tuple[TokenPrediction, ...]

    def __post_init__(self) -> None:
        ctx = f"caption {self.caption_id!r} of image {self.image_id!r}"
        if len(self.tokens) < 1:
            raise SchemaError(f"{ctx}: caption has no tokens")
        if len(self.predictions) != len(self.tokens) + 1:
            raise SchemaError(
                f"{ctx}: length mismatch: {len(self.predictions)} predictions "
                f"for {len(self.tokens)} tokens (need tokens + 1)"
            )
        for token in self.tokens:
            _check_token(token, ctx)


@dataclass(frozen=True)
class ImageEntry:
    """An image's reference captions plus an optional generated caption."""

    image_id: str
    references: tuple[tuple[str, ...], ...]
    generated: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.references) < 1:
            raise SchemaError(f"image {self.image_id!r}: no reference captions")
        for i, ref in enumerate(self.references):
            if len(ref) < 1:
                raise SchemaError(f"image {self.image_id!r}: reference {i} is empty")
            for token in ref:
                _check_token(token, f"image {self.image_id!r} reference {i}")
        if self.generated is not None:
            for token in self.generated:
                _check_token(token, f"image {self.image_id!r} generated caption")


@dataclass(frozen=True)
class Dataset:
    """Images keyed by id; iteration order is ascending image id."""

    images: tuple[ImageEntry, ...]
    _by_id: dict[str, ImageEntry] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.images, key=lambda e: e.image_id))
        by_id: dict[str, ImageEntry] = {}
        for entry in ordered:
            if entry.image_id in by_id:
                raise SchemaError(f"duplicate image id {entry.image_id!r}")
            by_id[entry.image_id] = entry
        object.__setattr__(self, "images", ordered)
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def image_ids(self) -> list[str]:
        return [entry.image_id for entry in self.images]

    def entry(self, image_id: str) -> ImageEntry:
        return self._by_id[image_id]

    def restrict(self, image_ids: Iterable[str]) -> "Dataset":
        """Sub-dataset containing only the given image ids."""
        keep = set(image_ids)
        return Dataset(tuple(e for e in self.images if e.image_id in keep))


def _require(record: dict, key: str, kind: type, context: str):
    if key not in record:
        raise SchemaError(f"{context}: missing field {key!r}")
    value = record[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"{context}: field {key!r} is not a number")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{context}: field {key!r} is not a {kind.__name__}")
    return value


def load_traces(path: str) -> list[CaptionTrace]:
    """Read a traces.jsonl file, validating every invariant at load time."""
    traces: list[CaptionTrace] = []
    seen: set[tuple[str, str]] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            context = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{context}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise SchemaError(f"{context}: line is not a JSON object")
            image_id = _require(record, "image_id", str, context)
            caption_id = _require(record, "caption_id", str, context)
            tokens = _require(record, "tokens", list, context)
            p_ref = _require(record, "p_ref", list, context)
            argmax = _require(record, "argmax", list, context)
            if not all(isinstance(t, str) for t in tokens):
                raise SchemaError(f"{context}: tokens must be strings")
            if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in p_ref):
                raise SchemaError(f"{context}: p_ref must be numbers")
            if not all(isinstance(a, bool) for a in argmax):
                raise SchemaError(f"{context}: argmax must be booleans")
            if len(p_ref) != len(argmax):
                raise SchemaError(
                    f"{context}: caption {caption_id!r}: p_ref and argmax lengths differ"
                )
            key = (image_id, caption_id)
            if key in seen:
                raise SchemaError(f"{context}: duplicate caption {caption_id!r} for image {image_id!r}")
            seen.add(key)
            try:
                trace = CaptionTrace(
                    image_id=image_id,
                    caption_id=caption_id,
                    tokens=tuple(tokens),
                    predictions=tuple(
                        TokenPrediction(float(p), bool(a)) for p, a in zip(p_ref, argmax)
                    ),
                )
            except SchemaError as exc:
                raise SchemaError(f"{context}: {exc}") from exc
            traces.append(trace)
    return traces


def save_traces(path: str, traces: Sequence[CaptionTrace]) -> None:
    """Write traces.jsonl. Probabilities round-trip bit-for-bit."""
    with open(path, "w", encoding="utf-8") as handle:
        for trace in traces:
            record = {
                "image_id": trace.image_id,
                "caption_id": trace.caption_id,
                "tokens": list(trace.tokens),
                "p_ref": [p.probability for p in trace.predictions],
                "argmax": [p.is_argmax for p in trace.predictions],
            }
            handle.write(json.dumps(record) + "\n")


def load_dataset(path: str) -> Dataset:
    """Read a dataset.json file, validating every invariant at load time."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: malformed JSON ({exc.msg})") from exc
    if not isinstance(payload, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")
    images_raw = _require(payload, "images", list, path)
    entries = []
    for i, record in enumerate(images_raw):
        context = f"{path}: images[{i}]"
        if not isinstance(record, dict):
            raise SchemaError(f"{context}: not a JSON object")
        image_id = _require(record, "id", str, context)
        refs = _require(record, "refs", list, context)
        for j, ref in enumerate(refs):
            if not isinstance(ref, list) or not all(isinstance(t, str) for t in ref):
                raise SchemaError(f"{context}: refs[{j}] must be a list of strings")
        generated = None
        if "gen" in record and record["gen"] is not None:
            gen = record["gen"]
            if not isinstance(gen, list) or not all(isinstance(t, str) for t in gen):
                raise SchemaError(f"{context}: gen must be a list of strings")
            generated = tuple(gen)
        try:
            entries.append(
                ImageEntry(
                    image_id=image_id,
                    references=tuple(tuple(ref) for ref in refs),
                    generated=generated,
                )
            )
        except SchemaError as exc:
            raise SchemaError(f"{context}: {exc}") from exc
    try:
        return Dataset(tuple(entries))
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def save_dataset(path: str, dataset: Dataset) -> None:
    records = []
    for entry in dataset:
        record: dict = {"id": entry.image_id, "refs": [list(ref) for ref in entry.references]}
        if entry.generated is not None:
            record["gen"] = list(entry.generated)
        records.append(record)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"images": records}, handle, indent=1)
        handle.write("\n")
