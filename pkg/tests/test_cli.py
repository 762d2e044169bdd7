import json

import pytest

from reviewsent.cli import run, stage_seed
from reviewsent.corpus import write_jsonl
from reviewsent.evaluation import write_prediction_log
from reviewsent.mock_server import MockChatServer
from reviewsent.synthetic import keyword_reviews


def test_no_arguments_is_usage(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["nosuch"], ["clean", "--bogus"], ["split", "--in", "x", "--fractions", "a,b"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_clean_fixture_summary(raw50, tmp_path, capsys):
    out = tmp_path / "clean.jsonl"
    assert run(["clean", "--in", str(raw50), "--out", str(out), "--log", str(tmp_path / "log.json")]) == 0
    line = capsys.readouterr().out.strip()
    assert line == "clean: kept 43 of 50; removed 7 (empty=2, non_alphabetic=1, emoji_only=2, too_long=2)"
    assert len(out.read_text().splitlines()) == 43
    assert json.loads((tmp_path / "log.json").read_text())["kept_count"] == 43


def test_missing_input_fails_fast(tmp_path, capsys):
    assert run(["clean", "--in", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == 1
    assert "--in" in capsys.readouterr().err
    assert not (tmp_path / "o.jsonl").exists()
    assert run(["clean", "--in", str(tmp_path), "--out", str(tmp_path / "no" / "o.jsonl")]) == 1


def test_bad_input_is_validation_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "x", "rating": 9}\n')
    assert run(["clean", "--in", str(bad), "--out", str(tmp_path / "o.jsonl")]) == 1
    assert "rating 9" in capsys.readouterr().err


def test_split_rerun_identical_and_config(tmp_path):
    src = tmp_path / "syn.jsonl"
    write_jsonl(keyword_reviews(100, seed=1), src)
    outs = [tmp_path / f"{n}.jsonl" for n in ("tr", "ev", "te")]
    argv = ["split", "--in", str(src), "--train", str(outs[0]), "--eval", str(outs[1]), "--test", str(outs[2])]
    assert run(argv + ["--seed", "7"]) == 0
    first = [p.read_bytes() for p in outs]
    assert run(argv + ["--seed", "7"]) == 0
    assert [p.read_bytes() for p in outs] == first
    ini = tmp_path / "run.ini"
    ini.write_text(f"[global]\nseed = 7\nmax_words = 100\n[split]\nin = {src}\ntrain = {outs[0]}\n"
                   f"eval = {outs[1]}\ntest = {outs[2]}\nfractions = 0.68,0.20,0.12\n")
    assert run(["split", "--config", str(ini)]) == 0
    assert [p.read_bytes() for p in outs] == first
    assert run(["split", "--config", str(ini), "--seed", "8"]) == 0
    assert [p.read_bytes() for p in outs] != first
    ini.write_text("[split]\nnot_a_flag = 1\n")
    assert run(["split", "--config", str(ini), "--in", str(src)] + argv[3:]) == 1


def test_stage_seeds_differ():
    assert stage_seed(0, "split") != stage_seed(0, "train")
    assert stage_seed(0, "split") == stage_seed(0, "split")


def test_evaluate_collapse(tmp_path, capsys):
    rows = [{"id": f"i{i}", "true": t, "pred": p} for i, (t, p) in enumerate([(1, 1), (2, 1), (3, 3), (5, 4)])]
    write_prediction_log(rows, tmp_path / "p.jsonl")
    truth = tmp_path / "t.jsonl"
    write_prediction_log(rows, truth)
    out = tmp_path / "rep"
    assert run(["evaluate", "--pred", str(tmp_path / "p.jsonl"), "--truth", str(truth),
                "--out-dir", str(out), "--collapse"]) == 0
    assert capsys.readouterr().out.strip() == "evaluate: model (5-class) acc=0.5000, model (3-class) acc=1.0000"
    for stem in ("report_5class", "report_3class"):
        assert (out / f"{stem}.md").exists()
        json.loads((out / f"{stem}.json").read_text())


def test_evaluate_misaligned(tmp_path):
    write_prediction_log([{"id": "a", "true": 1, "pred": 1}], tmp_path / "p.jsonl")
    write_prediction_log([{"id": "b", "true": 1, "pred": 1}], tmp_path / "t.jsonl")
    assert run(["evaluate", "--pred", str(tmp_path / "p.jsonl"), "--truth", str(tmp_path / "t.jsonl"),
                "--out-dir", str(tmp_path / "r")]) == 1


def test_report_published(tmp_path, capsys):
    out = tmp_path / "r.md"
    assert run(["report", "--published", "--out", str(out)]) == 0
    text = out.read_text()
    assert "67.41%" in text and "68.74%" in text and "83.42%" in text


def test_remote_auth_failure_is_runtime_error(tmp_path, capsys):
    src = tmp_path / "r.jsonl"
    write_jsonl(keyword_reviews(3), src)
    preds = tmp_path / "p.jsonl"
    write_prediction_log([{"id": r.id, "true": r.rating, "pred": r.rating} for r in keyword_reviews(3)], preds)
    with MockChatServer(statuses=[401]) as srv:
        code = run(["compare-remote", "--in", str(src), "--local-pred", str(preds),
                    "--out-dir", str(tmp_path / "c"), "--endpoint", srv.url])
    assert code == 2


def test_remote_missing_token_is_validation_error(tmp_path, monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    src = tmp_path / "r.jsonl"
    write_jsonl(keyword_reviews(3), src)
    assert run(["compare-remote", "--in", str(src), "--local-pred", str(src), "--out-dir", str(tmp_path)]) == 1


def test_train_predict_round_trip(tmp_path, capsys):
    rs = keyword_reviews(40, seed=0)
    src = tmp_path / "d.jsonl"
    write_jsonl(rs, src)
    model = tmp_path / "m"
    assert run(["train", "--train", str(src), "--eval", str(src), "--out-dir", str(model),
                "--epochs", "1", "--vocab-size", "60", "--max-positions", "16"]) == 0
    assert sorted(p.name for p in model.iterdir()) == ["model.json", "train_log.jsonl", "vocab.txt", "weights.stsf"]
    assert run(["predict", "--model-dir", str(model), "--in", str(src), "--out", str(tmp_path / "p.jsonl")]) == 0
    assert len((tmp_path / "p.jsonl").read_text().splitlines()) == 40
    (model / "weights.stsf").write_bytes(b"garbage")
    assert run(["predict", "--model-dir", str(model), "--in", str(src), "--out", str(tmp_path / "p.jsonl")]) == 1
