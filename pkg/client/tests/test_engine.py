from __future__ import annotations

import random
from pathlib import Path

import pytest

from capeval_client import EngineError, TraceWriter, run_engine


def _write_world(tmp_path: Path) -> dict[str, Path]:
    dataset = tmp_path / "dataset.json"
    embeddings = tmp_path / "embeddings.txt"
    model = tmp_path / "model.json"
    decoded = tmp_path / "decoded.json"
    run_engine(
        "toy gen",
        ["--seed", "2", "--num-images", "10", "--refs-per-image", "2",
         "--out", str(dataset), "--embeddings-out", str(embeddings)],
    )
    run_engine(
        "toy train",
        ["--dataset", str(dataset), "--epsilon", "0.2", "--alpha", "0.1",
         "--seed", "2", "--out", str(model)],
    )
    run_engine(
        "toy decode",
        ["--model", str(model), "--dataset", str(dataset), "--beam-width", "2",
         "--out", str(decoded)],
    )
    return {"dataset": dataset, "embeddings": embeddings, "model": model, "decoded": decoded}


def test_pregen_round_trip_through_writer(tmp_path) -> None:
    rng = random.Random(5)
    traces = tmp_path / "traces.jsonl"
    with TraceWriter(str(traces)) as writer:
        for i in range(4):
            for j in range(2):
                m = rng.randint(1, 5)
                writer.append(
                    f"img{i}",
                    f"c{j}",
                    [f"w{t}" for t in range(m)],
                    [rng.random() for _ in range(m + 1)],
                    [rng.random() < 0.5 for _ in range(m + 1)],
                )
    out = tmp_path / "pregen.csv"
    result = run_engine(
        "pregen", ["--traces", str(traces), "--out", str(out)], csv_outputs=[str(out)]
    )
    rows = result.outputs[str(out)]
    assert len(rows) == 504
    assert {"metric", "value"} <= set(rows[0])


def test_postgen_invocation(tmp_path) -> None:
    files = _write_world(tmp_path)
    out_dir = tmp_path / "postgen"
    result = run_engine(
        "postgen",
        ["--dataset", str(files["decoded"]), "--embeddings", str(files["embeddings"]),
         "--out", str(out_dir)],
        csv_outputs=[str(out_dir / "corpus.csv")],
    )
    corpus = {row["metric"]: float(row["value"]) for row in result.outputs[str(out_dir / "corpus.csv")]}
    assert set(corpus) == {"bleu", "cider", "wmd_sim"}
    assert 0.0 <= corpus["cider"] <= 10.0


def test_study_invocation(tmp_path) -> None:
    out_dir = tmp_path / "study"
    result = run_engine(
        "study",
        ["--seed", "3", "--num-images", "20", "--refs-per-image", "2",
         "--epsilon-grid", "0,0.4,0.8", "--k", "1,2", "--beam-width", "2",
         "--out", str(out_dir)],
        csv_outputs=[str(out_dir / "ranking.csv")],
    )
    assert "pre-gen metrics for cider" in result.stdout
    ranking = result.outputs[str(out_dir / "ranking.csv")]
    assert {row["postgen_metric"] for row in ranking} == {"bleu", "cider", "wmd_sim"}


def test_nonzero_exit_raises_with_diagnostic(tmp_path) -> None:
    with pytest.raises(EngineError) as excinfo:
        run_engine("pregen", ["--traces", str(tmp_path / "missing.jsonl"),
                              "--out", str(tmp_path / "out.csv")])
    assert excinfo.value.exit_code == 2
    assert "missing.jsonl" in excinfo.value.diagnostic


def test_missing_binary_raises() -> None:
    with pytest.raises(EngineError, match="not found"):
        run_engine("pregen", [], binary="capeval-does-not-exist")
