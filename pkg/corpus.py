# corpus.py
#
# 評論資料的讀取、清理、斷詞與摘要統計。
# 輸入是已經抽取好的結構化檔案（JSONL / CSV），不負責爬網頁。

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_STOPWORDS_FILE = Path(__file__).resolve().parent / "data" / "stopwords_english.txt"

SCORE_MIN = 0.0
SCORE_MAX = 100.0

SUPPORTED_FORMATS = ("csv", "jsonl")
SUPPORTED_ORDERS = frozenset({1, 2})

# 連續的字母（Unicode）才算一個 token；數字、底線、標點、撇號都是分隔符
_WORD_RE = re.compile(r"[^\W\d_]+")


class CorpusDataError(Exception):
    pass


@dataclass(frozen=True)
class Review:
    id: str
    text: str
    score: Optional[float]


@dataclass(frozen=True)
class TokenizedReview:
    id: str
    terms: Tuple[str, ...]


@dataclass(frozen=True)
class CorpusSummary:
    count: int
    mean: Optional[float]
    min: Optional[float]
    q1: Optional[float]
    median: Optional[float]
    q3: Optional[float]
    max: Optional[float]
    dropped_missing_score: int
    dropped_empty_text: int

    def to_dict(self) -> Dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "min": self.min,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.max,
            "dropped_missing_score": self.dropped_missing_score,
            "dropped_empty_text": self.dropped_empty_text,
        }


# ---------------------------------------------------------
# 讀檔
# ---------------------------------------------------------
def _parse_score(raw, where: str) -> Optional[float]:
    if raw is None:
        return None
    if isinstance(raw, bool):
        raise CorpusDataError(f"{where}: score 不是數字: {raw!r}")
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == "":
            return None
        try:
            return float(raw)
        except ValueError:
            raise CorpusDataError(f"{where}: score 無法解析: {raw!r}") from None
    raise CorpusDataError(f"{where}: score 型別錯誤: {type(raw).__name__}")


def _record_id(raw_id, ordinal: int) -> str:
    if raw_id is None or raw_id == "":
        return str(ordinal)
    return str(raw_id)


def _load_jsonl(path: Path) -> List[Review]:
    reviews = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{path}:{line_no}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusDataError(f"{where}: JSON 格式錯誤 ({e.msg})") from None
            if not isinstance(record, dict):
                raise CorpusDataError(f"{where}: 每一行必須是 JSON object")
            if "text" not in record:
                raise CorpusDataError(f"{where}: 缺少欄位 text")
            text = record["text"]
            if text is None:
                text = ""
            if not isinstance(text, str):
                raise CorpusDataError(f"{where}: text 必須是字串")
            score = _parse_score(record.get("score"), where)
            reviews.append(
                Review(id=_record_id(record.get("id"), len(reviews) + 1), text=text, score=score)
            )
    return reviews


def _load_csv(path: Path) -> List[Review]:
    reviews = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        if "text" not in fields or "score" not in fields:
            raise CorpusDataError(f"{path}: CSV 標頭必須包含 text 與 score 欄位")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if None in row:
                raise CorpusDataError(f"{where}: 欄位數量多於標頭")
            text = row.get("text")
            if text is None:
                raise CorpusDataError(f"{where}: 欄位數量少於標頭")
            score = _parse_score(row.get("score"), where)
            reviews.append(
                Review(id=_record_id(row.get("id"), len(reviews) + 1), text=text, score=score)
            )
    return reviews


def load_reviews(path, fmt: str = "jsonl") -> List[Review]:
    """
    依檔案順序讀入評論，不做任何清理。
    JSONL：每行一個 object，欄位 text / score（score 可缺或為 null）。
    CSV：標頭需含 text, score（RFC-4180 引號規則）。
    """
    if fmt not in SUPPORTED_FORMATS:
        raise CorpusDataError(f"未知的輸入格式: {fmt}（支援 {', '.join(SUPPORTED_FORMATS)}）")
    path = Path(path)
    try:
        if fmt == "jsonl":
            reviews = _load_jsonl(path)
        else:
            reviews = _load_csv(path)
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusDataError(f"無法讀取 {path}: {e}") from None
    except csv.Error as e:
        raise CorpusDataError(f"{path}: CSV 格式錯誤 ({e})") from None

    seen = set()
    for r in reviews:
        if r.id in seen:
            raise CorpusDataError(f"{path}: 重複的 id {r.id!r}")
        seen.add(r.id)
    return reviews


def load_stopwords(path=DEFAULT_STOPWORDS_FILE) -> frozenset:
    """一行一個字，# 開頭為註解。"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusDataError(f"無法讀取 stopword 檔案 {path}: {e}") from None
    words = set()
    for line in lines:
        word = line.split("#", 1)[0].strip().lower()
        if word:
            words.add(word)
    return frozenset(words)


# ---------------------------------------------------------
# 清理 + 摘要
# ---------------------------------------------------------
def _valid_score(score: Optional[float]) -> bool:
    if score is None or not math.isfinite(score):
        return False
    # 超出 0–100 視同缺分
    return SCORE_MIN <= score <= SCORE_MAX


def summarize_scores(
    scores: Sequence[float], dropped_missing_score: int = 0, dropped_empty_text: int = 0
) -> CorpusSummary:
    """四分位數用最近兩個排名之間的線性內插（numpy 'linear'）。"""
    if len(scores) == 0:
        return CorpusSummary(0, None, None, None, None, None, None,
                             dropped_missing_score, dropped_empty_text)
    arr = np.asarray(scores, dtype=float)
    q1, median, q3 = np.percentile(arr, [25, 50, 75], method="linear")
    return CorpusSummary(
        count=len(arr),
        mean=float(arr.mean()),
        min=float(arr.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        max=float(arr.max()),
        dropped_missing_score=dropped_missing_score,
        dropped_empty_text=dropped_empty_text,
    )


def clean(reviews: Iterable[Review]) -> Tuple[List[Review], CorpusSummary]:
    """
    去掉沒有分數（或非有限值、超出 0–100）的評論，再去掉空白文字的評論。
    兩者都有問題時算在缺分那一類。保留原本順序。
    """
    kept = []
    dropped_missing = 0
    dropped_empty = 0
    for r in reviews:
        if not _valid_score(r.score):
            dropped_missing += 1
        elif not r.text.strip():
            dropped_empty += 1
        else:
            kept.append(r)
    summary = summarize_scores([r.score for r in kept], dropped_missing, dropped_empty)
    return kept, summary


# ---------------------------------------------------------
# 斷詞 + n-gram
# ---------------------------------------------------------
def tokenize(text: str, stopwords: Iterable[str] = frozenset()) -> List[str]:
    tokens = _WORD_RE.findall(text.casefold())
    return [t for t in tokens if t not in stopwords]


def extract_ngrams(tokens: Sequence[str], orders: Iterable[int]) -> List[str]:
    orders = sorted(set(orders))
    if not orders:
        raise CorpusDataError("orders 不可為空")
    bad = [n for n in orders if n not in SUPPORTED_ORDERS]
    if bad:
        raise CorpusDataError(f"不支援的 n-gram 階數: {bad}（只支援 1, 2）")

    terms = []
    for n in orders:
        for i in range(len(tokens) - n + 1):
            terms.append(" ".join(tokens[i:i + n]))
    return terms


def tokenize_reviews(
    reviews: Iterable[Review], stopwords: Iterable[str], orders: Iterable[int] = (1,)
) -> List[TokenizedReview]:
    orders = tuple(sorted(set(orders)))
    out = []
    for r in reviews:
        tokens = tokenize(r.text, stopwords)
        out.append(TokenizedReview(id=r.id, terms=tuple(extract_ngrams(tokens, orders))))
    return out


# ---------------------------------------------------------
# 詞頻報表（文字雲背後的資料）
# ---------------------------------------------------------
def term_frequency_report(tokenized: Iterable[TokenizedReview], top_k: int) -> List[Tuple[str, int]]:
    if top_k < 1:
        raise CorpusDataError("top_k 必須 >= 1")
    counts = Counter()
    for doc in tokenized:
        counts.update(doc.terms)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_k]


def vocabulary_sizes(tokenized: Iterable[TokenizedReview]) -> Dict[str, int]:
    unigrams = set()
    bigrams = set()
    for doc in tokenized:
        for term in doc.terms:
            if " " in term:
                bigrams.add(term)
            else:
                unigrams.add(term)
    return {
        "unigram": len(unigrams),
        "bigram": len(bigrams),
        "total": len(unigrams) + len(bigrams),
    }


def build_summary_text(summary: CorpusSummary) -> str:
    lines = []
    lines.append("📊 語料摘要（分數分布）")
    lines.append(f"有效評論數：{summary.count}")
    lines.append(f"剔除（缺分 / 超出範圍）：{summary.dropped_missing_score}")
    lines.append(f"剔除（空白文字）：{summary.dropped_empty_text}")
    if summary.count:
        lines.append(
            f"min / Q1 / median / Q3 / max：{summary.min:.2f} / {summary.q1:.2f} / "
            f"{summary.median:.2f} / {summary.q3:.2f} / {summary.max:.2f}"
        )
        lines.append(f"平均：{summary.mean:.3f}")
    return "\n".join(lines)


def build_term_report_text(title: str, ranking: Sequence[Tuple[str, int]]) -> str:
    lines = [title]
    if not ranking:
        lines.append("（無）")
        return "\n".join(lines)
    width = max(len(term) for term, _ in ranking)
    for rank, (term, count) in enumerate(ranking, start=1):
        lines.append(f"{rank:>3}. {term:<{width}}  {count:>6}")
    return "\n".join(lines)
