from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, strategies as st

from capeval.datamodel import (
    CaptionTrace,
    Dataset,
    ImageEntry,
    SchemaError,
    TokenPrediction,
    load_dataset,
    load_traces,
    save_dataset,
    save_traces,
    tokenize,
)


def test_tokenize_strips_punctuation_and_lowercases() -> None:
    assert tokenize("A man, riding!") == ["a", "man", "riding"]


def test_tokenize_identity_word() -> None:
    assert tokenize("dog") == ["dog"]


def test_tokenize_keeps_apostrophes_and_digits() -> None:
    assert tokenize("it's 2 dogs") == ["it's", "2", "dogs"]


def test_tokenize_all_punctuation_is_empty() -> None:
    assert tokenize("?!...") == []


@given(st.text(max_size=80))
def test_tokenize_idempotent(text: str) -> None:
    once = tokenize(text)
    assert tokenize(" ".join(once)) == once


@given(st.text(max_size=80))
def test_tokenize_output_charset(text: str) -> None:
    for token in tokenize(text):
        assert token
        assert all(c in "abcdefghijklmnopqrstuvwxyz0123456789'" for c in token)


def _trace(image_id: str = "img1", caption_id: str = "c1", probs=(0.5, 0.25, 1.0)) -> CaptionTrace:
    return CaptionTrace(
        image_id=image_id,
        caption_id=caption_id,
        tokens=("a", "dog"),
        predictions=tuple(TokenPrediction(p, i % 2 == 0) for i, p in enumerate(probs)),
    )


def test_trace_requires_one_extra_prediction() -> None:
    with pytest.raises(SchemaError, match="length mismatch"):
        _trace(probs=(0.5, 0.25))


def test_prediction_probability_range() -> None:
    with pytest.raises(SchemaError, match="outside"):
        TokenPrediction(1.5, True)
    with pytest.raises(SchemaError):
        TokenPrediction(-0.1, False)


def test_traces_round_trip_bit_for_bit(tmp_path) -> None:
    rng = random.Random(5)
    traces = [
        _trace(image_id=f"img{i}", caption_id=f"c{j}", probs=(rng.random(), rng.random(), rng.random()))
        for i in range(5)
        for j in range(3)
    ]
    path = tmp_path / "traces.jsonl"
    save_traces(str(path), traces)
    loaded = load_traces(str(path))
    assert loaded == traces
    # and again: load-save-load is stable
    save_traces(str(path), loaded)
    assert load_traces(str(path)) == traces


def test_load_traces_names_line_on_malformed_json(tmp_path) -> None:
    path = tmp_path / "traces.jsonl"
    good = json.dumps(
        {"image_id": "i", "caption_id": "c", "tokens": ["a"], "p_ref": [0.5, 0.5], "argmax": [True, False]}
    )
    path.write_text(good + "\n{broken\n")
    with pytest.raises(SchemaError, match=r":2"):
        load_traces(str(path))


def test_load_traces_rejects_length_mismatch(tmp_path) -> None:
    path = tmp_path / "traces.jsonl"
    record = {"image_id": "i", "caption_id": "c7", "tokens": ["a", "b"], "p_ref": [0.5, 0.5], "argmax": [True, False]}
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(SchemaError, match="c7"):
        load_traces(str(path))


def test_load_traces_rejects_duplicate_caption(tmp_path) -> None:
    path = tmp_path / "traces.jsonl"
    record = {"image_id": "i", "caption_id": "c", "tokens": ["a"], "p_ref": [0.5, 0.5], "argmax": [True, False]}
    path.write_text(json.dumps(record) + "\n" + json.dumps(record) + "\n")
    with pytest.raises(SchemaError, match="duplicate caption"):
        load_traces(str(path))


def test_load_traces_rejects_missing_field(tmp_path) -> None:
    path = tmp_path / "traces.jsonl"
    path.write_text(json.dumps({"image_id": "i", "caption_id": "c", "tokens": ["a"]}) + "\n")
    with pytest.raises(SchemaError, match="p_ref"):
        load_traces(str(path))


def test_load_traces_accepts_scientific_notation(tmp_path) -> None:
    path = tmp_path / "traces.jsonl"
    record = {"image_id": "i", "caption_id": "c", "tokens": ["a"], "p_ref": [1e-300, 5e-1], "argmax": [True, False]}
    path.write_text(json.dumps(record) + "\n")
    loaded = load_traces(str(path))
    assert loaded[0].predictions[0].probability == 1e-300


def test_dataset_sorted_and_unique() -> None:
    entries = (
        ImageEntry("b", (("a", "dog"),)),
        ImageEntry("a", (("a", "cat"),)),
    )
    dataset = Dataset(entries)
    assert dataset.image_ids() == ["a", "b"]
    with pytest.raises(SchemaError, match="duplicate image"):
        Dataset((entries[0], entries[0]))


def test_image_entry_rejects_empty_reference() -> None:
    with pytest.raises(SchemaError, match="empty"):
        ImageEntry("x", (tuple(),))
    with pytest.raises(SchemaError, match="no reference"):
        ImageEntry("x", tuple())


def test_dataset_round_trip(tmp_path) -> None:
    dataset = Dataset(
        (
            ImageEntry("img1", (("a", "dog"), ("the", "dog")), generated=("a", "dog")),
            ImageEntry("img2", (("a", "cat"),)),
        )
    )
    path = tmp_path / "dataset.json"
    save_dataset(str(path), dataset)
    loaded = load_dataset(str(path))
    assert loaded == dataset
    assert loaded.entry("img2").generated is None


def test_load_dataset_rejects_bad_refs(tmp_path) -> None:
    path = tmp_path / "dataset.json"
    path.write_text(json.dumps({"images": [{"id": "x", "refs": [["ok"], "oops"]}]}))
    with pytest.raises(SchemaError, match=r"refs\[1\]"):
        load_dataset(str(path))


def test_dataset_restrict_keeps_order() -> None:
    dataset = Dataset(tuple(ImageEntry(f"img{i}", (("a", "dog"),)) for i in range(5)))
    sub = dataset.restrict(["img3", "img1"])
    assert sub.image_ids() == ["img1", "img3"]
