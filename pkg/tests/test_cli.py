import json

import pytest
from click.testing import CliRunner

from qaroute.cli import main
from qaroute.core import Action

from helpers import FIXTURES, make_sample


@pytest.fixture()
def runner():
    return CliRunner()


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0


def test_usage_error_exit_code_2(runner):
    result = runner.invoke(main, ["ingest", "convert", "--source", "nope"])
    assert result.exit_code == 2


def test_ingest_convert_and_validate(runner, tmp_path):
    raw = tmp_path / "raw.jsonl"
    _write_jsonl(raw, [
        {"id": "c1", "hypothesis": "Data may be shared",
         "premise": "text", "choice": "Entailment"},
        {"id": "c2", "hypothesis": "Data is secret",
         "premise": "text", "choice": "NotMentioned"},
    ])
    out = tmp_path / "unified.jsonl"
    result = runner.invoke(main, ["ingest", "convert", "--source",
                                  "contract_nli", "--in", str(raw),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "converted 2" in result.output
    result = runner.invoke(main, ["ingest", "validate", "--in", str(out)])
    assert result.exit_code == 0
    assert "0 error(s)" in result.output


def test_ingest_validate_fails_on_bad_record(runner, tmp_path):
    bad = tmp_path / "bad.jsonl"
    d = json.loads(make_sample("x", "q?", Action.ANSWER).to_json())
    d["action"] = "PUNT"
    _write_jsonl(bad, [d])
    result = runner.invoke(main, ["ingest", "validate", "--in", str(bad)])
    assert result.exit_code == 1


def test_ingest_balance(runner, tmp_path):
    samples = []
    for i, action in enumerate([Action.ANSWER, Action.ASK, Action.ABSTAIN] * 4):
        missing = [] if action is Action.ANSWER else ["x"]
        samples.append(json.loads(make_sample(
            f"b{i}", f"query {i}", action, missing=missing,
            dialogue_id=f"d{i}", turn_id=0).to_json()))
    src = tmp_path / "in.jsonl"
    _write_jsonl(src, samples)
    out = tmp_path / "out.jsonl"
    rep = tmp_path / "report.json"
    result = runner.invoke(main, ["--seed", "3", "ingest", "balance",
                                  "--in", str(src), "--out", str(out),
                                  "--report", str(rep)])
    assert result.exit_code == 0, result.output
    assert rep.exists()
    assert out.read_text().strip()


def test_index_build_and_query(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    _write_jsonl(corpus, [
        {"doc_id": "d1", "source": "sharc",
         "text": "the album desire sold two million copies"},
        {"doc_id": "d2", "source": "sharc",
         "text": "a completely different document about contracts"},
    ])
    idx_dir = tmp_path / "idx"
    result = runner.invoke(main, ["index", "build", "--corpus", str(corpus),
                                  "--out", str(idx_dir)])
    assert result.exit_code == 0, result.output
    result = runner.invoke(main, ["index", "query", "--index", str(idx_dir),
                                  "--query", "album sales", "-k", "1"])
    assert result.exit_code == 0
    rec = json.loads(result.output.splitlines()[0])
    assert rec["chunk_id"] == "d1::c0"


def test_kg_build_path_and_stats(runner, tmp_path):
    out = tmp_path / "graph.json"
    result = runner.invoke(main, [
        "--lexicon", str(FIXTURES / "lexicon.tsv"),
        "kg", "build", "--corpus", str(FIXTURES / "kg_corpus.jsonl"),
        "--out", str(out), "--stats"])
    assert result.exit_code == 0, result.output
    assert out.exists()
    result = runner.invoke(main, ["kg", "path", "--graph", str(out),
                                  "--start", "bob dylan",
                                  "--goal", "hurricane"])
    assert result.exit_code == 0
    assert float(result.output.strip()) > 0.0
    result = runner.invoke(main, ["kg", "path", "--graph", str(out),
                                  "--start", "bob dylan",
                                  "--goal", "nobody"])
    assert result.exit_code == 1


def test_route_and_decide(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    _write_jsonl(corpus, [
        {"doc_id": "d1", "source": "sharc",
         "text": "the album desire sold two million copies worldwide"},
        {"doc_id": "d2", "source": "sharc",
         "text": "the album desire sold well after release"},
    ])
    idx_dir = tmp_path / "idx"
    runner.invoke(main, ["index", "build", "--corpus", str(corpus),
                         "--out", str(idx_dir)])
    result = runner.invoke(main, [
        "--lexicon", str(FIXTURES / "lexicon.tsv"),
        "decide", "--index", str(idx_dir),
        "--query", "How did the album sell?",
        "--required-var", "album", "--required-var", "sales performance"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["action"] == "ASK"
    assert payload["resolution"] == 0.5

    result = runner.invoke(main, [
        "--lexicon", str(FIXTURES / "lexicon.tsv"),
        "route", "--index", str(idx_dir),
        "--query", "How did the album sell?"])
    assert result.exit_code == 0, result.output
    rec = json.loads(result.output.splitlines()[-1])
    assert rec["action"] in ("ANSWER", "ASK", "ABSTAIN")
    assert rec["response"]


def test_route_requires_one_input_mode(runner, tmp_path):
    result = runner.invoke(main, ["route", "--index", str(tmp_path)])
    assert result.exit_code == 2


def test_ftdata_build_cli(runner, tmp_path):
    from helpers import golden_dialogue, golden_graph
    from qaroute import kg as kgmod
    from qaroute.ingest import write_jsonl
    samples_path = tmp_path / "samples.jsonl"
    write_jsonl(golden_dialogue(), samples_path)
    graph_path = tmp_path / "graph.json"
    kgmod.save(golden_graph(), graph_path)
    out_dir = tmp_path / "ft"
    result = runner.invoke(main, ["ftdata", "build",
                                  "--samples", str(samples_path),
                                  "--graph", str(graph_path),
                                  "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert (out_dir / "chat_format.jsonl").exists()
    assert (out_dir / "template_format.jsonl").exists()
    assert (out_dir / "filter_report.json").exists()
    assert len((out_dir / "chat_format.jsonl").read_text().splitlines()) == 2


def test_eval_cli_writes_bundle(runner, tmp_path):
    preds = tmp_path / "preds.jsonl"
    _write_jsonl(preds, [
        {"gold": "ANSWER", "predicted": "ANSWER", "answer_correct": True},
        {"gold": "ASK", "predicted": "ASK"},
        {"gold": "ABSTAIN", "predicted": "ANSWER", "answer_correct": False},
    ])
    out_dir = tmp_path / "report"
    result = runner.invoke(main, ["eval", "--predictions", str(preds),
                                  "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "confusion_matrix.png").exists()
    assert (out_dir / "per_action_metrics.png").exists()
    assert "Accuracy" in result.output


def test_repl_flow(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    _write_jsonl(corpus, [
        {"doc_id": "d1", "source": "sharc",
         "text": "the album desire sold two million copies worldwide"},
        {"doc_id": "d2", "source": "sharc",
         "text": "the album desire sold well after release"},
    ])
    idx_dir = tmp_path / "idx"
    runner.invoke(main, ["index", "build", "--corpus", str(corpus),
                         "--out", str(idx_dir)])
    result = runner.invoke(main, [
        "--lexicon", str(FIXTURES / "lexicon.tsv"),
        "repl", "--index", str(idx_dir),
        "--required-var", "album", "--required-var", "sales performance"],
        input="How did the album sell?\nit sold two million copies\nexit\n")
    assert result.exit_code == 0, result.output
    assert "[ASK" in result.output
    assert "[ANSWER" in result.output
    assert "resolution 1.00" in result.output
