import csv
import json

import pytest

from biasaudit import __version__
from biasaudit.cli import run
from biasaudit.report import EvalReport
from biasaudit.scenarios import SUBGROUP_TAG, scenario_metrics
from biasaudit.scorer.mock import MockScoringServer, digest_score


def test_version(capsys):
    assert run(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_flag(capsys):
    assert run(["simulate", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand():
    assert run([]) == 2


def test_missing_required_flag(tmp_path):
    assert run(["simulate", "--scenario", "B"]) == 2
    assert run(["evaluate", "--out", str(tmp_path / "r.json")]) == 2


def test_simulate_is_byte_stable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run(["simulate", "--scenario", "B", "--seed", "42", "--scale", "1000", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 4001


def test_simulate_from_spec(tmp_path):
    from biasaudit.scenarios import preset

    spec = tmp_path / "spec.json"
    spec.write_text(preset("E").to_json())
    assert run(["simulate", "--spec", str(spec), "--scale", "10", "--out", str(tmp_path / "e.csv")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bg_neg": {"mean": 0.1}}))
    assert run(["simulate", "--spec", str(bad), "--out", str(tmp_path / "x.csv")]) == 1


def test_evaluate_matches_in_process(tmp_path):
    data, out = tmp_path / "s.csv", tmp_path / "r.json"
    assert run(["simulate", "--scenario", "B", "--seed", "42", "--scale", "1000", "--out", str(data)]) == 0
    assert run(["evaluate", "--input", str(data), "--out", str(out)]) == 0
    report = EvalReport.from_json(out.read_bytes())
    (row,) = report.rows["model"]
    assert row == scenario_metrics("B", seed=42, scale=1000)
    assert report.dataset_id == "s.csv"


def test_pipeline_byte_stable(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1557705600")
    outputs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        assert run(["simulate", "--scenario", "G", "--seed", "7", "--scale", "200", "--out", str(d / "s.csv")]) == 0
        assert run(["--threads", "2", "evaluate", "--input", str(d / "s.csv"), "--dataset-id", "g",
                    "--out", str(d / "r.json")]) == 0
        assert run(["report", "--input", str(d / "r.json"), "--format", "svg-heatmap", "--out", str(d / "r.svg")]) == 0
        assert run(["report", "--input", str(d / "r.json"), "--out", str(d / "r.md")]) == 0
        outputs.append([(d / n).read_bytes() for n in ("s.csv", "r.json", "r.svg", "r.md")])
    assert outputs[0] == outputs[1]


def write_corpus(path, n=300):
    rows = ["id,comment_text,toxicity,score_a,score_b,female,male"]
    for i in range(n):
        text = "x" * (i % 150 + 1)
        label = 0.9 if i % 3 == 0 else 0.1
        a = (i * 37 % 100) / 100
        b = (i * 53 % 100) / 100
        rows.append(f"{i},{text},{label},{a},{b},{1 if i % 2 else 0},{1 if i % 5 == 0 else ''}")
    path.write_text("\n".join(rows) + "\n")


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "corpus.csv"
    write_corpus(path)
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"identity_columns": ["female", "male"]}))
    return path, schema


def test_evaluate_two_models_with_slice(tmp_path, corpus):
    path, schema = corpus
    out = tmp_path / "r.json"
    argv = ["evaluate", "--input", str(path), "--schema", str(schema), "--max-chars", "100", "--min-count", "20",
            "--score-column", "score_a", "--score-column", "score_b", "--model-name", "v1", "--model-name", "v6",
            "--out", str(out)]
    assert run(argv) == 0
    report = EvalReport.from_json(out.read_bytes())
    assert report.models == ("v1", "v6") and report.max_chars == 100
    assert set(report.subgroups) == {"female", "male"}
    assert [r.subgroup_id for r in report.rows["v1"]] == [r.subgroup_id for r in report.rows["v6"]]


def test_evaluate_sketch_and_csv(tmp_path, corpus):
    path, schema = corpus
    argv = ["evaluate", "--input", str(path), "--schema", str(schema), "--score-column", "score_a",
            "--out", str(tmp_path / "r.csv"), "--sketch", "female", "--sketch-out", str(tmp_path / "f.json")]
    assert run(argv) == 0
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert {r["model"] for r in rows} == {"score_a"}
    sketch = json.loads((tmp_path / "f.json").read_text())
    assert sum(c["size"] for c in sketch["cells"].values()) == 300


def test_evaluate_errors(tmp_path, corpus, capsys):
    path, schema = corpus
    # no score column in this schema
    assert run(["evaluate", "--input", str(path), "--schema", str(schema), "--out", str(tmp_path / "r.json")]) == 1
    assert "MissingScore" in capsys.readouterr().err
    argv = ["evaluate", "--input", str(path), "--schema", str(schema), "--score-column", "score_a",
            "--min-count", "1000", "--out", str(tmp_path / "r.json")]
    assert run(argv) == 1
    err = capsys.readouterr().err
    assert "NoQualifyingSubgroups" in err and len(err.strip().splitlines()) == 1
    assert run(["evaluate", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "r.json")]) == 1
    argv = ["evaluate", "--input", str(path), "--score-column", "a", "--score-column", "b", "--score-column", "c",
            "--out", str(tmp_path / "r.json")]
    assert run(argv) == 2
    assert run(["evaluate", "--input", str(path), "--out", str(tmp_path / "r.txt")]) == 2


def test_report_unsupported(tmp_path, capsys):
    data, out = tmp_path / "s.csv", tmp_path / "r.json"
    run(["simulate", "--scenario", "A", "--scale", "20", "--out", str(data)])
    run(["evaluate", "--input", str(data), "--out", str(out)])
    assert run(["report", "--input", str(out), "--format", "pdf", "--out", str(tmp_path / "r.pdf")]) == 2
    assert run(["report", "--input", str(out), "--out", str(tmp_path / "r.csv")]) == 0
    (row,) = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert row["subgroup"] == SUBGROUP_TAG


def test_score_against_mock(tmp_path, monkeypatch):
    monkeypatch.setenv("SCORER_API_KEY", "k")
    texts = tmp_path / "texts.csv"
    texts.write_text('id,comment_text,extra\n1,hello,a\n2,"bad, words",b\n3,hello,c\n')
    with MockScoringServer(api_key="k") as server:
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "endpoint_url": server.url,
            "model_name": "mock",
            "request_template": {"comment": {"text": "{text}"}},
            "response_score_path": "/score",
            "max_qps": 100,
            "cache_dir": str(tmp_path / "cache"),
        }))
        out = tmp_path / "scored.csv"
        assert run(["score", "--input", str(texts), "--scorer", str(cfg), "--out", str(out)]) == 0
        assert len(server.calls) == 2
    rows = list(csv.DictReader(open(out)))
    assert [r["extra"] for r in rows] == ["a", "b", "c"]
    assert float(rows[1]["score"]) == digest_score("bad, words")


def test_score_partial_failure(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SCORER_API_KEY", "k")
    texts = tmp_path / "texts.csv"
    texts.write_text("id,comment_text\n1,fine\n2,boom\n")
    with MockScoringServer(fail_texts={"boom": 500}) as server:
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "endpoint_url": server.url, "model_name": "mock", "request_template": {"t": "{text}"},
            "response_score_path": "/score", "max_retries": 1, "backoff_base": 0.0, "max_qps": 100,
        }))
        out = tmp_path / "scored.csv"
        assert run(["score", "--input", str(texts), "--scorer", str(cfg), "--out", str(out)]) == 1
    assert "1 of 2" in capsys.readouterr().err
    manifest = [json.loads(line) for line in open(tmp_path / "scored.csv.errors.jsonl")]
    assert manifest == [{"id": "2", "error": "ScorerError", "message": manifest[0]["message"]}]
    rows = list(csv.DictReader(open(out)))
    assert rows[0]["score"] != "" and rows[1]["score"] == ""


def test_score_missing_key(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("SCORER_API_KEY", raising=False)
    texts = tmp_path / "texts.csv"
    texts.write_text("id,comment_text\n1,fine\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"endpoint_url": "http://127.0.0.1:9/x", "model_name": "m",
                               "request_template": {"t": "{text}"}, "response_score_path": "/score"}))
    assert run(["score", "--input", str(texts), "--scorer", str(cfg), "--out", str(tmp_path / "o.csv")]) == 1
    assert "AuthError" in capsys.readouterr().err


def test_calibrate_prints_table(capsys, monkeypatch):
    import biasaudit.cli as cli
    from biasaudit import calibration

    narrowed = [
        calibration.Knob(k.scenario, k.param, k.grid[:2], k.target_name, k.target, k.measure)
        for k in calibration.KNOBS
    ]
    monkeypatch.setattr(cli, "calibrate", lambda seed, scale: calibration.calibrate(seed, 1000, narrowed))
    assert run(["calibrate"]) == 0
    out = capsys.readouterr().out
    assert "B_shift" in out and "bpsn_auc" in out
