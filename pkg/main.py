# main.py: 咖啡評論分數預測：stats / train / tune / predict / explain / compare
#
# 報表一律輸出到 stdout（預設 JSON，--format text 為對齊的純文字），
# 狀態訊息 [ok] / [warn] / [error] 輸出到 stderr。
#
# 結束碼：0 成功、2 用法錯誤、3 資料錯誤、4 數值求解失敗。

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv

from corpus import (
    DEFAULT_STOPWORDS_FILE,
    CorpusDataError,
    Review,
    build_summary_text,
    build_term_report_text,
    clean,
    load_reviews,
    load_stopwords,
    term_frequency_report,
    tokenize_reviews,
    vocabulary_sizes,
)
from evaluate import (
    DEFAULT_KF,
    DEFAULT_SEED,
    DEFAULT_TEST_FRACTION,
    SEARCH_FAMILIES,
    EvaluationError,
    build_comparison_text,
    build_cv_text,
    build_eval_text,
    compare_models,
    default_grid,
    evaluate_model,
    feasible_knn_grid,
    grid_search,
    kfold,
    split,
)
from featurize import FeaturizeError
from interpret import (
    build_example_table_text,
    build_ranking_text,
    impact_terms,
    round_half_away,
    top_terms,
)
from model_file import ModelFileError, load_model, save_model
from regress import MODEL_KINDS, ConvergenceError, LinearModel, RegressionError, fit_model, predict_texts

load_dotenv()

# 環境變數：覆寫預設 stopword 檔
STOPWORDS_ENV = "GRIND_STOPWORDS"

TOP_TERMS_IN_STATS = 50

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------
# 工具
# ---------------------------------------------------------
def _status(args, tag: str, message: str) -> None:
    if tag == "ok" and getattr(args, "quiet", False):
        return
    print(f"[{tag}] {message}", file=sys.stderr)


def _emit(args, payload, text: str) -> None:
    if args.format == "text":
        print(text)
    else:
        print(json.dumps(payload, ensure_ascii=False, indent=2))


def _resolve_stopwords(flag: Optional[str]) -> frozenset:
    path = flag or os.getenv(STOPWORDS_ENV) or DEFAULT_STOPWORDS_FILE
    return load_stopwords(path)


def _input_format(args) -> str:
    if args.input_format:
        return args.input_format
    return "csv" if str(args.input).lower().endswith(".csv") else "jsonl"


def _load_clean(args):
    raw = load_reviews(args.input, _input_format(args))
    reviews, summary = clean(raw)
    if summary.count == 0:
        raise CorpusDataError(f"no valid reviews（{args.input} 清理後沒有任何有效評論）")
    return reviews, summary


def _parse_orders(value: str) -> tuple:
    try:
        orders = tuple(sorted({int(v) for v in value.split(",") if v.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"無法解析 n-gram 階數: {value!r}") from None
    if not orders or any(o not in (1, 2) for o in orders):
        raise argparse.ArgumentTypeError(f"n-gram 階數只能是 1、2 或 1,2：{value!r}")
    return orders


def _parse_orders_list(value: str) -> List[tuple]:
    return [_parse_orders(part) for part in value.split(";") if part.strip()]


def _parse_grid(value: str) -> List[float]:
    try:
        grid = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"網格必須是以逗號分隔的數字：{value!r}") from None
    if not grid:
        raise argparse.ArgumentTypeError("網格不可為空")
    return grid


def _timestamp(args) -> Optional[str]:
    if args.no_timestamp:
        return None
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _hyperparameters(kind: str, C: Optional[float], k: Optional[int]) -> Dict:
    if kind == "ridge-tfidf":
        if C is None:
            raise UsageError("ridge-tfidf 需要 --C")
        return {"C": C}
    if kind == "knn-tfidf":
        if k is None:
            raise UsageError("knn-tfidf 需要 --k")
        return {"k": k}
    return {}


def _train_and_report(args, kind: str, orders: tuple, hyper: Dict, reviews: List[Review],
                      stopwords: frozenset, out: Optional[str]) -> Dict:
    by_id = {r.id: r for r in reviews}
    plan = split([r.id for r in reviews], args.test_fraction, args.seed)
    train = [by_id[i] for i in plan.train_ids]
    test = [by_id[i] for i in plan.test_ids]

    model = fit_model(kind, train, stopwords, orders, **hyper)
    report = evaluate_model(model, test)

    params = dict(hyper)
    if kind != "naive":
        params["orders"] = list(orders)
    result = {
        "model": kind,
        "params": params,
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "n_train": len(train),
        "n_test": len(test),
        "mse": report.mse,
        "mae": report.mae,
    }
    if out:
        metadata = {
            "model": kind,
            "seed": args.seed,
            "test_fraction": args.test_fraction,
            "n_train": len(train),
            "n_test": len(test),
            "hyperparameters": hyper,
            "timestamp": _timestamp(args),
        }
        save_model(out, model, metadata)
        _status(args, "ok", f"模型已寫入 {out}")
    return result


# ---------------------------------------------------------
# 子命令
# ---------------------------------------------------------
def cmd_stats(args) -> int:
    stopwords = _resolve_stopwords(args.stopwords)
    reviews, summary = _load_clean(args)
    tokenized = tokenize_reviews(reviews, stopwords, (1, 2))
    unigram_docs = tokenize_reviews(reviews, stopwords, (1,))
    bigram_docs = tokenize_reviews(reviews, stopwords, (2,))
    top_uni = term_frequency_report(unigram_docs, args.top_k)
    top_bi = term_frequency_report(bigram_docs, args.top_k)
    sizes = vocabulary_sizes(tokenized)

    payload = {
        "summary": summary.to_dict(),
        "quantile_rule": "linear interpolation between closest ranks",
        "vocabulary_sizes": sizes,
        "top_unigrams": [[t, c] for t, c in top_uni],
        "top_bigrams": [[t, c] for t, c in top_bi],
    }
    lines = [build_summary_text(summary), ""]
    lines.append(
        f"🔤 特徵數：unigram {sizes['unigram']}、bigram {sizes['bigram']}、合計 {sizes['total']}"
    )
    lines.append("")
    lines.append(build_term_report_text(f"最常見 unigram（前 {args.top_k}）", top_uni))
    lines.append("")
    lines.append(build_term_report_text(f"最常見 bigram（前 {args.top_k}）", top_bi))
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_train(args) -> int:
    hyper = _hyperparameters(args.model, args.C, args.k)
    stopwords = _resolve_stopwords(args.stopwords)
    reviews, summary = _load_clean(args)
    _status(args, "ok", f"有效評論 {summary.count} 筆（剔除缺分 {summary.dropped_missing_score}、空白 {summary.dropped_empty_text}）")
    result = _train_and_report(args, args.model, args.orders, hyper, reviews, stopwords, args.out)
    _emit(args, result, build_eval_text(result))
    return EXIT_OK


def cmd_tune(args) -> int:
    stopwords = _resolve_stopwords(args.stopwords)
    reviews, _ = _load_clean(args)
    plan = split([r.id for r in reviews], args.test_fraction, args.seed)
    folds = kfold(plan.train_ids, args.kf, args.seed)

    if args.grid is not None:
        grid = args.grid
    else:
        grid = list(default_grid(args.model))
        if args.model == "knn-tfidf":
            feasible = list(feasible_knn_grid(grid, folds))
            if len(feasible) < len(grid):
                _status(args, "warn", f"訓練 fold 太小，略過 k = {[k for k in grid if k not in feasible]}")
            grid = feasible
    by_id = {r.id: r for r in reviews}
    train = [by_id[i] for i in plan.train_ids]

    # 只把訓練集交給網格搜尋，測試集完全不參與
    cv = grid_search(args.model, grid, folds, train, stopwords, args.orders, workers=args.workers)
    payload = cv.to_dict()
    payload["test_fraction"] = args.test_fraction
    payload["n_train"] = len(plan.train_ids)
    text = build_cv_text(cv)

    if args.refit_out:
        hyper = {"C": cv.selected} if args.model == "ridge-tfidf" else {"k": cv.selected}
        refit = _train_and_report(args, args.model, cv.orders, hyper, reviews, stopwords, args.refit_out)
        payload["refit"] = refit
        text += "\n\n" + build_eval_text(refit)

    _emit(args, payload, text)
    return EXIT_OK


def _read_prediction_inputs(args) -> List[Review]:
    fmt = args.input_format or "lines"
    if fmt != "lines":
        return load_reviews(args.input, fmt)
    try:
        if args.input == "-":
            content = sys.stdin.read()
        else:
            content = Path(args.input).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusDataError(f"無法讀取 {args.input}: {e}") from None
    return [Review(id=str(i), text=line, score=None) for i, line in enumerate(content.splitlines(), start=1)]


def cmd_predict(args) -> int:
    model, _ = load_model(args.model_file)
    inputs = _read_prediction_inputs(args)
    preds = predict_texts(model, [r.text for r in inputs])

    rows = []
    for r, pred in zip(inputs, preds):
        pred = float(pred)
        shown = min(100.0, max(0.0, pred)) if args.clip else pred
        row = {"id": r.id, "pred": pred, "pred_rounded": round_half_away(shown)}
        if r.score is not None:
            row["true"] = r.score
        rows.append(row)

    if args.format == "text":
        print(build_example_table_text([(r.text, r.score, row["pred_rounded"]) for r, row in zip(inputs, rows)]))
    else:
        for row in rows:
            print(json.dumps(row, ensure_ascii=False))
    return EXIT_OK


def cmd_explain(args) -> int:
    if args.k < 1:
        raise UsageError("-k 必須 >= 1")
    model, _ = load_model(args.model_file)
    if not isinstance(model, LinearModel):
        raise RegressionError("model has no coefficients（只有線性模型可以解讀係數）")
    if args.impact_input:
        raw = load_reviews(args.impact_input, args.impact_format or (
            "csv" if args.impact_input.lower().endswith(".csv") else "jsonl"))
        reviews, _ = clean(raw)
        if not reviews:
            raise CorpusDataError(f"no valid reviews（{args.impact_input}）")
        ranking = impact_terms(model, model.recipe.transform(reviews), args.k)
    else:
        ranking = top_terms(model, args.k)
    _emit(args, ranking.to_dict(), build_ranking_text(ranking))
    return EXIT_OK


def cmd_compare(args) -> int:
    stopwords = _resolve_stopwords(args.stopwords)
    reviews, _ = _load_clean(args)
    plan = split([r.id for r in reviews], args.test_fraction, args.seed)
    rows = compare_models(
        reviews, plan, stopwords, args.orders_list, C=args.C, k=args.k,
        tune=args.tune, kf=args.kf, workers=args.workers,
    )
    payload = {
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "tuned": args.tune,
        "rows": rows,
    }
    _emit(args, payload, build_comparison_text(rows))
    return EXIT_OK


# ---------------------------------------------------------
# 參數解析
# ---------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "text"), default="json", help="報表格式（預設 json）")
    common.add_argument("--quiet", action="store_true", help="不輸出 [ok] 狀態訊息")

    corpus_opts = argparse.ArgumentParser(add_help=False)
    corpus_opts.add_argument("--input", required=True, help="評論檔（JSONL 或 CSV）")
    corpus_opts.add_argument("--input-format", choices=("jsonl", "csv"), default=None,
                             help="輸入格式；預設依副檔名判斷")
    corpus_opts.add_argument("--stopwords", default=None,
                             help=f"stopword 檔；預設讀環境變數 {STOPWORDS_ENV}，再退回內建英文清單")

    split_opts = argparse.ArgumentParser(add_help=False)
    split_opts.add_argument("--seed", type=int, default=DEFAULT_SEED)
    split_opts.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION)
    split_opts.add_argument("--no-timestamp", action="store_true", help="模型檔不寫入時間戳（可重現輸出）")

    parser = argparse.ArgumentParser(
        prog="grind",
        description="從專業咖啡評論文字預測 0–100 分數。",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "stats", parents=[common, corpus_opts],
        help="語料摘要與最常見的詞",
        description="清理報告、分數分布（四分位數用最近兩個排名之間的線性內插）與最常見的 unigram / bigram。",
    )
    p.add_argument("--top-k", type=int, default=TOP_TERMS_IN_STATS)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("train", parents=[common, corpus_opts, split_opts], help="訓練模型並回報測試集 MSE / MAE")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--orders", type=_parse_orders, default=(1,), help="1 或 1,2")
    p.add_argument("--C", type=float, default=None, help="ridge 的 C（越小懲罰越強）")
    p.add_argument("--k", type=int, default=None, help="K-NN 的鄰居數")
    p.add_argument("--out", default=None, help="模型檔輸出路徑")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("tune", parents=[common, corpus_opts, split_opts], help="k-fold 交叉驗證選超參數")
    p.add_argument("--model", choices=SEARCH_FAMILIES, required=True)
    p.add_argument("--orders", type=_parse_orders, default=(1,))
    p.add_argument("--grid", type=_parse_grid, default=None, help="以逗號分隔；預設為內建網格")
    p.add_argument("--kf", type=int, default=DEFAULT_KF)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--refit-out", default=None, help="用選出的值在整個訓練集重訓並寫入模型檔")
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("predict", parents=[common], help="用模型檔預測分數")
    p.add_argument("--model-file", required=True)
    p.add_argument("--input", default="-", help="輸入檔；預設讀 stdin")
    p.add_argument("--input-format", choices=("lines", "jsonl", "csv"), default=None,
                   help="lines：一行一篇（預設）")
    p.add_argument("--clip", action="store_true", help="四捨五入前先截到 [0, 100]")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("explain", parents=[common], help="列出情緒最正 / 最負的詞")
    p.add_argument("--model-file", required=True)
    p.add_argument("-k", type=int, default=20)
    p.add_argument("--impact-input", default=None,
                   help="延伸：提供語料時改用 β_j × 平均特徵值排序")
    p.add_argument("--impact-format", choices=("jsonl", "csv"), default=None)
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("compare", parents=[common, corpus_opts, split_opts], help="所有模型的測試集比較表")
    p.add_argument("--orders-list", type=_parse_orders_list, default=[(1,), (1, 2)],
                   help="以分號分隔，例如 '1;1,2'")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--k", type=int, default=11)
    p.add_argument("--tune", action="store_true", help="先用 k-fold 選 C 與 k")
    p.add_argument("--kf", type=int, default=DEFAULT_KF)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_compare)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        return args.handler(args)
    except (UsageError, RegressionError, EvaluationError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusDataError, FeaturizeError, ModelFileError, OSError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as e:
        print(f"[error] {e}（梯度範數 {e.gradient_norm:.3e}）", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
