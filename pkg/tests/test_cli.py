"""CLI surface: commands, exit codes, artifacts."""

import json

import pytest

from feedbackrank.cli import main
from feedbackrank.corpus import dump_corpus
from feedbackrank.datagen import synthetic_corpus
from feedbackrank.engine import EngineConfig
from feedbackrank.indicators import read_indicators_jsonl
from feedbackrank.ranker import RankerConfig


def write_config(tmp_path, **overrides):
    config = EngineConfig(
        corpus_path=str(tmp_path / "corpus.jsonl"),
        index_dir=str(tmp_path / "index"),
        indicator_store_path=str(tmp_path / "indicators.jsonl"),
        embedding_dim=64,
        max_chunk_size=320,
        ranker=RankerConfig(top_k=5),
    )
    data = config.to_dict()
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def workspace(tmp_path):
    corpus = synthetic_corpus(seed=3, n_docs=10, families=2)
    dump_corpus(corpus, tmp_path / "corpus.jsonl")
    config_path = write_config(tmp_path)
    return tmp_path, config_path, corpus


def last_json_lines(capsys):
    out = capsys.readouterr().out
    return [json.loads(line) for line in out.strip().splitlines() if line.strip()]


def test_index_builds_and_reports_counts(workspace, capsys):
    tmp_path, config_path, corpus = workspace
    assert main(["index", "--config", str(config_path)]) == 0
    payload = last_json_lines(capsys)[-1]
    assert payload["documents"] == 10
    assert payload["synthetic_indicators"] == 5 * payload["chunks"]
    assert (tmp_path / "index" / "meta.json").exists()


def test_index_rerun_byte_identical(workspace, capsys):
    tmp_path, config_path, _ = workspace
    assert main(["index", "--config", str(config_path)]) == 0
    artifacts = {
        name: (tmp_path / "index" / name).read_bytes()
        for name in ("chunks.jsonl", "indicators.jsonl", "meta.json")
    }
    assert main(["index", "--config", str(config_path)]) == 0
    for name, payload in artifacts.items():
        assert (tmp_path / "index" / name).read_bytes() == payload


def test_index_missing_corpus_is_io_error(tmp_path, capsys):
    config_path = write_config(tmp_path)  # corpus file never written
    assert main(["index", "--config", str(config_path)]) == 2


def test_index_lock_rejects_concurrent_build(workspace, capsys):
    tmp_path, config_path, _ = workspace
    lock = tmp_path / "index" / ".build.lock"
    lock.parent.mkdir(parents=True, exist_ok=True)
    lock.write_text("held")
    assert main(["index", "--config", str(config_path)]) == 2
    lock.unlink()
    assert main(["index", "--config", str(config_path)]) == 0


def test_query_outputs_ranked_records(workspace, capsys):
    tmp_path, config_path, corpus = workspace
    main(["index", "--config", str(config_path)])
    capsys.readouterr()
    token = corpus[0].title.split()[0]
    assert main(["query", f"how to {token}", "--config", str(config_path)]) == 0
    lines = last_json_lines(capsys)
    summary = lines[-1]
    assert summary["count"] == len(lines) - 1
    assert all({"chunk_id", "doc_id", "vote", "rrf", "round", "indicators"} <= set(r)
               for r in lines[:-1])


def test_query_k_zero_is_usage_error(workspace, capsys):
    _, config_path, _ = workspace
    main(["index", "--config", str(config_path)])
    capsys.readouterr()
    assert main(["query", "anything", "--k", "0", "--config", str(config_path)]) == 1


def test_query_missing_index_is_io_error(workspace, capsys):
    _, config_path, _ = workspace
    assert main(["query", "anything", "--config", str(config_path)]) == 2


def test_feedback_writes_signals(workspace, capsys):
    tmp_path, config_path, corpus = workspace
    docs = ",".join(d.doc_id for d in corpus[:3])
    code = main(["feedback", "--query", "how to frobnicate", "--stars", "5",
                 "--docs", docs, "--config", str(config_path)])
    assert code == 0
    payload = last_json_lines(capsys)[-1]
    assert payload["written"] == 3
    stored = read_indicators_jsonl(tmp_path / "indicators.jsonl")
    signals = sorted((i.target_doc_id, i.signal) for i in stored)
    expected = sorted((d.doc_id, s) for d, s in zip(corpus[:3], (1.0, 0.75, 0.5)))
    assert signals == expected


def test_feedback_unknown_doc_skipped_exit_zero(workspace, capsys):
    _, config_path, _ = workspace
    code = main(["feedback", "--query", "q", "--stars", "3",
                 "--docs", "nonexistent-doc", "--config", str(config_path)])
    assert code == 0
    payload = last_json_lines(capsys)[-1]
    assert payload["written"] == 0
    assert payload["skipped"] == ["nonexistent-doc"]


def test_feedback_bad_stars_usage_error(workspace, capsys):
    _, config_path, _ = workspace
    code = main(["feedback", "--query", "q", "--stars", "9",
                 "--docs", "a", "--config", str(config_path)])
    assert code == 1


def test_feedback_trims_store_to_k(workspace, capsys):
    tmp_path, _, corpus = workspace
    config_path = write_config(tmp_path, max_feedback_per_doc=2)
    target = corpus[0].doc_id
    for i in range(3):
        main(["feedback", "--query", f"q{i}", "--stars", "4",
              "--docs", target, "--config", str(config_path)])
    stored = read_indicators_jsonl(tmp_path / "indicators.jsonl")
    assert [i.query for i in stored] == ["q2", "q1"]


def test_simulate_deterministic_and_baseline_only(workspace, capsys):
    tmp_path, config_path, _ = workspace
    args = ["simulate", "--config", str(config_path), "--iterations", "2",
            "--seed", "7", "--out", str(tmp_path / "results"),
            "--configs", "baseline", "--run-id", "run-a"]
    assert main(args) == 0
    first = (tmp_path / "results" / "run-a" / "metrics.csv").read_bytes()

    args[-1] = "run-b"
    assert main(args) == 0
    second = (tmp_path / "results" / "run-b" / "metrics.csv").read_bytes()
    assert first == second

    rows = first.decode().strip().splitlines()
    configs = {line.split(",")[0] for line in rows[1:]}
    assert configs == {"baseline"}
    manifest = json.loads((tmp_path / "results" / "run-a" / "manifest.json").read_text())
    assert manifest["seed"] == 7


def test_simulate_insufficient_pool_fails_validation(workspace, capsys):
    tmp_path, config_path, _ = workspace
    code = main(["simulate", "--config", str(config_path), "--iterations", "500",
                 "--seed", "1", "--out", str(tmp_path / "results"),
                 "--configs", "baseline"])
    assert code == 1


def test_scenarios_missing_history_is_io_error(workspace, capsys):
    tmp_path, config_path, _ = workspace
    code = main(["scenarios", "--config", str(config_path),
                 "--history", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "results")])
    assert code == 2


def test_scenarios_end_to_end(workspace, capsys):
    tmp_path, config_path, corpus = workspace
    history = tmp_path / "history.jsonl"
    lines = []
    for i, doc in enumerate(corpus[:4]):
        lines.append(json.dumps({
            "query": f"peculiar request number {i} nothing shares",
            "stars": 5 if i % 2 == 0 else 1,
            "docs": [doc.doc_id],
            "timestamp": f"2024-01-01T00:00:{i:02d}+00:00",
        }))
    history.write_text("\n".join(lines) + "\n")
    code = main(["scenarios", "--config", str(config_path),
                 "--history", str(history), "--out", str(tmp_path / "results"),
                 "--unseen", "20", "--configs", "baseline,feedback:0.75"])
    assert code == 0
    run_dirs = list((tmp_path / "results").iterdir())
    assert len(run_dirs) == 1
    csv_text = (run_dirs[0] / "scenarios.csv").read_text()
    assert "exact_high" in csv_text and "exact_low" in csv_text


def test_datagen_writes_corpus(tmp_path, capsys):
    out = tmp_path / "generated.jsonl"
    assert main(["datagen", "--out", str(out), "--docs", "6", "--seed", "2"]) == 0
    assert len(out.read_text().strip().splitlines()) == 6


def test_unknown_command_usage_error(capsys):
    assert main(["definitely-not-a-command"]) == 1
