"""Tests for the grind command line: exit codes, reports and model files."""

import io
import json

import numpy as np
import pytest

from corpus import Review
from evaluate import DEFAULT_RIDGE_GRID, split
from featurize import FeatureConfig, Recipe, Vocabulary
from interpret import top_terms
from main import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from model_file import load_model, save_model
from regress import LinearModel, predict_texts

from conftest import make_planted_corpus


def _run(capsys, *argv):
    code = run([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _hand_model(tmp_path, intercept=90.0, weights=None, name="hand.json"):
    weights = weights or {"sweet": 2.0, "sour": -1.5}
    terms = tuple(weights)
    config = FeatureConfig(feature_space="counts", orders=(1,), stopwords=frozenset({"and"}))
    recipe = Recipe(config, Vocabulary(terms=terms, doc_freq=tuple(1 for _ in terms), n_docs=1), None)
    model = LinearModel(intercept=intercept, weights=np.array([weights[t] for t in terms]), recipe=recipe)
    return save_model(tmp_path / name, model)


@pytest.fixture
def corpus_file(write_reviews):
    return write_reviews(make_planted_corpus(80, seed=3), "corpus.jsonl")


# ── stats ─────────────────────────────────────────────────────────────


class TestStats:
    def test_three_review_fixture(self, capsys, write_jsonl):
        path = write_jsonl([
            {"text": "Syrupy mouthfeel, long finish.", "score": 80},
            {"text": "Syrupy mouthfeel with cocoa.", "score": 90},
            {"text": "Bright and floral.", "score": 100},
            {"text": "", "score": 91},
            {"text": "No score here.", "score": None},
        ])
        code, out, _ = _run(capsys, "stats", "--input", path)
        assert code == EXIT_OK
        report = json.loads(out)
        summary = report["summary"]
        assert summary["count"] == 3
        assert (summary["q1"], summary["median"], summary["q3"]) == (85.0, 90.0, 95.0)
        assert summary["dropped_empty_text"] == 1
        assert summary["dropped_missing_score"] == 1
        assert report["top_unigrams"][:2] == [["mouthfeel", 2], ["syrupy", 2]]
        assert report["top_bigrams"][0] == ["syrupy mouthfeel", 2]
        assert report["quantile_rule"] == "linear interpolation between closest ranks"

    def test_empty_file(self, capsys, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        code, out, err = _run(capsys, "stats", "--input", path)
        assert code == EXIT_DATA
        assert out == ""
        assert "no valid reviews" in err

    def test_text_format(self, capsys, corpus_file):
        code, out, _ = _run(capsys, "stats", "--input", corpus_file, "--format", "text", "--top-k", "5")
        assert code == EXIT_OK
        assert "語料摘要" in out
        assert "最常見 bigram（前 5）" in out

    def test_csv_by_extension(self, capsys, tmp_path):
        path = tmp_path / "reviews.csv"
        path.write_text('text,score\n"Juicy, bright",92\nmuted,85\n', encoding="utf-8")
        code, out, _ = _run(capsys, "stats", "--input", path)
        assert code == EXIT_OK
        assert json.loads(out)["summary"]["count"] == 2

    def test_malformed_input(self, capsys, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n", encoding="utf-8")
        code, _, err = _run(capsys, "stats", "--input", path)
        assert code == EXIT_DATA
        assert "[error]" in err

    def test_stopwords_from_environment(self, capsys, monkeypatch, tmp_path, corpus_file):
        stop = tmp_path / "stop.txt"
        stop.write_text("syrupy\nand\nwith\na\n", encoding="utf-8")
        monkeypatch.setenv("GRIND_STOPWORDS", str(stop))
        _, out, _ = _run(capsys, "stats", "--input", corpus_file, "--top-k", "100")
        assert "syrupy" not in [t for t, _ in json.loads(out)["top_unigrams"]]

    def test_flag_overrides_environment(self, capsys, monkeypatch, tmp_path, corpus_file):
        env_stop = tmp_path / "env.txt"
        env_stop.write_text("syrupy\n", encoding="utf-8")
        flag_stop = tmp_path / "flag.txt"
        flag_stop.write_text("ashy\n", encoding="utf-8")
        monkeypatch.setenv("GRIND_STOPWORDS", str(env_stop))
        _, out, _ = _run(capsys, "stats", "--input", corpus_file, "--top-k", "100", "--stopwords", flag_stop)
        terms = [t for t, _ in json.loads(out)["top_unigrams"]]
        assert "ashy" not in terms
        assert "syrupy" in terms


# ── train ─────────────────────────────────────────────────────────────


class TestTrain:
    def test_ridge_writes_model_file(self, capsys, tmp_path, corpus_file):
        out_path = tmp_path / "ridge.json"
        code, out, err = _run(capsys, "train", "--input", corpus_file, "--model", "ridge-tfidf",
                              "--orders", "1", "--C", "1", "--out", out_path)
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["model"] == "ridge-tfidf"
        assert report["params"] == {"C": 1.0, "orders": [1]}
        assert report["seed"] == 42
        assert (report["n_train"], report["n_test"]) == (64, 16)
        assert "[ok]" in err

        doc = json.loads(out_path.read_text(encoding="utf-8"))
        assert doc["kind"] == "ridge"
        assert doc["C"] == 1.0
        assert doc["metadata"]["seed"] == 42
        assert doc["metadata"]["timestamp"] is not None

    def test_knn_requires_k(self, capsys, corpus_file):
        code, out, err = _run(capsys, "train", "--input", corpus_file, "--model", "knn-tfidf")
        assert code == EXIT_USAGE
        assert out == ""
        assert "--k" in err

    def test_ridge_requires_C(self, capsys, corpus_file):
        code, _, _ = _run(capsys, "train", "--input", corpus_file, "--model", "ridge-tfidf")
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("orders", ["3", "x", "1,3"])
    def test_invalid_orders(self, capsys, corpus_file, orders):
        code, _, _ = _run(capsys, "train", "--input", corpus_file, "--model", "ols-bow", "--orders", orders)
        assert code == EXIT_USAGE

    def test_naive_mse_is_deviation_about_train_mean(self, capsys, corpus_file):
        code, out, _ = _run(capsys, "train", "--input", corpus_file, "--model", "naive", "--seed", "11")
        assert code == EXIT_OK
        report = json.loads(out)

        reviews = {r.id: r for r in make_planted_corpus(80, seed=3)}
        plan = split(list(reviews), 0.2, 11)
        train_mean = sum(reviews[i].score for i in plan.train_ids) / len(plan.train_ids)
        expected = sum((reviews[i].score - train_mean) ** 2 for i in plan.test_ids) / len(plan.test_ids)
        assert report["mse"] == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert report["params"] == {}

    def test_byte_identical_without_timestamp(self, capsys, tmp_path, corpus_file):
        outputs = []
        files = []
        for name in ("a.json", "b.json"):
            code, out, _ = _run(capsys, "train", "--input", corpus_file, "--model", "knn-tfidf", "--k", "5",
                                "--orders", "1,2", "--no-timestamp", "--out", tmp_path / name)
            assert code == EXIT_OK
            outputs.append(out)
            files.append((tmp_path / name).read_bytes())
        assert outputs[0] == outputs[1]
        assert files[0] == files[1]


# ── tune ──────────────────────────────────────────────────────────────


class TestTune:
    def test_default_ridge_grid(self, capsys, corpus_file):
        code, out, _ = _run(capsys, "tune", "--input", corpus_file, "--model", "ridge-tfidf")
        assert code == EXIT_OK
        cv = json.loads(out)
        assert cv["grid"] == [0.0001, 0.001, 0.01, 0.1, 1.0, 10.0, 20.0]
        assert cv["grid"] == list(DEFAULT_RIDGE_GRID)
        assert cv["kf"] == 5
        assert len(cv["fold_mse"]) == 7 and all(len(row) == 5 for row in cv["fold_mse"])
        assert cv["selected"] in cv["grid"]
        assert cv["n_train"] == 64

    def test_singleton_grid(self, capsys, corpus_file):
        code, out, _ = _run(capsys, "tune", "--input", corpus_file, "--model", "knn-tfidf", "--grid", "7")
        assert code == EXIT_OK
        assert json.loads(out)["selected"] == 7

    def test_default_knn_grid_trimmed_to_fold_size(self, capsys, corpus_file):
        code, out, err = _run(capsys, "tune", "--input", corpus_file, "--model", "knn-tfidf")
        assert code == EXIT_OK
        # 64 筆訓練資料、5 個 fold：每個 fold 的訓練部分 51 筆
        assert json.loads(out)["grid"] == [1, 11, 21, 51]
        assert "[warn]" in err

    def test_invalid_grid(self, capsys, corpus_file):
        code, _, _ = _run(capsys, "tune", "--input", corpus_file, "--model", "ridge-tfidf", "--grid", "1,abc")
        assert code == EXIT_USAGE
        code, _, _ = _run(capsys, "tune", "--input", corpus_file, "--model", "ridge-tfidf", "--grid", "0,1")
        assert code == EXIT_USAGE

    def test_refit_writes_selected_model(self, capsys, tmp_path, corpus_file):
        out_path = tmp_path / "best.json"
        code, out, _ = _run(capsys, "tune", "--input", corpus_file, "--model", "ridge-tfidf",
                            "--grid", "0.1,1,10", "--refit-out", out_path, "--no-timestamp")
        assert code == EXIT_OK
        cv = json.loads(out)
        assert cv["refit"]["params"]["C"] == cv["selected"]
        model, metadata = load_model(out_path)
        assert model.C == cv["selected"]
        assert metadata["timestamp"] is None

    def test_deterministic(self, capsys, corpus_file):
        argv = ("tune", "--input", corpus_file, "--model", "knn-tfidf", "--grid", "1,3,9", "--no-timestamp")
        first = _run(capsys, *argv)
        second = _run(capsys, *argv, "--workers", "2")
        assert first[0] == second[0] == EXIT_OK
        assert first[1] == second[1]


# ── predict ───────────────────────────────────────────────────────────


class TestPredict:
    def test_empty_line_predicts_intercept(self, capsys, tmp_path, corpus_file):
        model_path = tmp_path / "ols.json"
        _run(capsys, "train", "--input", corpus_file, "--model", "ols-tfidf", "--out", model_path)
        model, _ = load_model(model_path)

        texts = tmp_path / "texts.txt"
        texts.write_text("\nSyrupy and juicy\n", encoding="utf-8")
        code, out, _ = _run(capsys, "predict", "--model-file", model_path, "--input", texts)
        assert code == EXIT_OK
        rows = [json.loads(line) for line in out.splitlines()]
        assert [r["id"] for r in rows] == ["1", "2"]
        assert rows[0]["pred"] == model.intercept
        assert "true" not in rows[0]

    def test_round_trip_matches_in_memory(self, capsys, tmp_path, corpus_file):
        model_path = tmp_path / "ridge.json"
        _run(capsys, "train", "--input", corpus_file, "--model", "ridge-tfidf", "--C", "10",
             "--orders", "1,2", "--out", model_path)
        model, _ = load_model(model_path)

        code, out, _ = _run(capsys, "predict", "--model-file", model_path, "--input", corpus_file,
                            "--input-format", "jsonl")
        assert code == EXIT_OK
        rows = [json.loads(line) for line in out.splitlines()]
        reviews = make_planted_corpus(80, seed=3)
        expected = predict_texts(model, [r.text for r in reviews])
        assert [r["pred"] for r in rows] == expected.tolist()
        assert [r["true"] for r in rows] == [r.score for r in reviews]

    def test_hand_built_model(self, capsys, tmp_path):
        model_path = _hand_model(tmp_path)
        texts = tmp_path / "texts.txt"
        texts.write_text("sweet and sour and sweet\nsour\n", encoding="utf-8")
        code, out, _ = _run(capsys, "predict", "--model-file", model_path, "--input", texts)
        assert code == EXIT_OK
        rows = [json.loads(line) for line in out.splitlines()]
        # 90 + 2·2 − 1.5 = 92.5；90 − 1.5 = 88.5
        assert [r["pred"] for r in rows] == [92.5, 88.5]
        assert [r["pred_rounded"] for r in rows] == [93, 89]

    def test_reads_stdin(self, capsys, monkeypatch, tmp_path):
        model_path = _hand_model(tmp_path)
        monkeypatch.setattr("sys.stdin", io.StringIO("sweet\n"))
        code, out, _ = _run(capsys, "predict", "--model-file", model_path)
        assert code == EXIT_OK
        assert json.loads(out) == {"id": "1", "pred": 92.0, "pred_rounded": 92}

    def test_clip_only_affects_rounded_value(self, capsys, tmp_path):
        model_path = _hand_model(tmp_path, intercept=99.0)
        texts = tmp_path / "texts.txt"
        texts.write_text("sweet sweet\n", encoding="utf-8")
        _, plain, _ = _run(capsys, "predict", "--model-file", model_path, "--input", texts)
        _, clipped, _ = _run(capsys, "predict", "--model-file", model_path, "--input", texts, "--clip")
        assert json.loads(plain)["pred_rounded"] == 103
        assert json.loads(clipped) == {"id": "1", "pred": 103.0, "pred_rounded": 100}

    def test_text_table(self, capsys, tmp_path):
        model_path = _hand_model(tmp_path)
        texts = tmp_path / "texts.txt"
        texts.write_text("sweet\n", encoding="utf-8")
        code, out, _ = _run(capsys, "predict", "--model-file", model_path, "--input", texts, "--format", "text")
        assert code == EXIT_OK
        assert out.splitlines()[1].split()[-1] == "92"

    def test_unknown_format_version(self, capsys, tmp_path):
        model_path = _hand_model(tmp_path)
        doc = json.loads(model_path.read_text(encoding="utf-8"))
        doc["format_version"] = 2
        model_path.write_text(json.dumps(doc), encoding="utf-8")
        code, out, err = _run(capsys, "predict", "--model-file", model_path, "--input", model_path)
        assert code == EXIT_DATA
        assert out == ""
        assert "unknown format_version" in err

    def test_corrupt_model_file(self, capsys, tmp_path):
        path = tmp_path / "corrupt.json"
        path.write_text("{", encoding="utf-8")
        code, _, _ = _run(capsys, "predict", "--model-file", path)
        assert code == EXIT_DATA


# ── explain ───────────────────────────────────────────────────────────


class TestExplain:
    def test_knn_model_has_no_coefficients(self, capsys, tmp_path, corpus_file):
        model_path = tmp_path / "knn.json"
        _run(capsys, "train", "--input", corpus_file, "--model", "knn-tfidf", "--k", "3", "--out", model_path)
        code, out, err = _run(capsys, "explain", "--model-file", model_path)
        assert code == EXIT_USAGE
        assert out == ""
        assert "model has no coefficients" in err

    def test_k_one(self, capsys, tmp_path):
        model_path = _hand_model(tmp_path)
        code, out, _ = _run(capsys, "explain", "--model-file", model_path, "-k", "1")
        assert code == EXIT_OK
        ranking = json.loads(out)
        assert ranking["positive"] == [{"term": "sweet", "weight": 2.0}]
        assert ranking["negative"] == [{"term": "sour", "weight": -1.5}]

    def test_matches_top_terms(self, capsys, tmp_path, corpus_file):
        model_path = tmp_path / "ridge.json"
        _run(capsys, "train", "--input", corpus_file, "--model", "ridge-tfidf", "--C", "10", "--out", model_path)
        code, out, _ = _run(capsys, "explain", "--model-file", model_path, "-k", "5")
        assert code == EXIT_OK
        model, _ = load_model(model_path)
        assert json.loads(out) == top_terms(model, 5).to_dict()

    def test_impact_ranking(self, capsys, tmp_path, write_reviews):
        model_path = _hand_model(tmp_path)
        corpus = write_reviews([Review("1", "sweet sweet sour", 90.0), Review("2", "sour", 88.0)], "impact.jsonl")
        code, out, _ = _run(capsys, "explain", "--model-file", model_path, "--impact-input", corpus)
        assert code == EXIT_OK
        ranking = json.loads(out)
        assert ranking["weighting"] == "impact"
        # 平均計數 sweet 1、sour 1
        assert ranking["positive"] == [{"term": "sweet", "weight": 2.0}]
        assert ranking["negative"] == [{"term": "sour", "weight": -1.5}]

    def test_k_must_be_positive(self, capsys, tmp_path):
        code, _, _ = _run(capsys, "explain", "--model-file", _hand_model(tmp_path), "-k", "0")
        assert code == EXIT_USAGE


# ── compare ───────────────────────────────────────────────────────────


def test_compare_table(capsys, corpus_file):
    code, out, _ = _run(capsys, "compare", "--input", corpus_file, "--orders-list", "1;1,2", "--k", "5")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["seed"] == 42
    assert report["tuned"] is False
    assert len(report["rows"]) == 9
    assert report["rows"][0]["model"] == "naive"


def test_compare_text(capsys, corpus_file):
    code, out, _ = _run(capsys, "compare", "--input", corpus_file, "--orders-list", "1", "--format", "text")
    assert code == EXIT_OK
    assert "模型比較" in out
    assert "ridge-tfidf (unigram) [C=1]" in out


def test_missing_subcommand(capsys):
    code, _, _ = _run(capsys)
    assert code == EXIT_USAGE
