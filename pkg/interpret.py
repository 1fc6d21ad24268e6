# interpret.py
#
# 依係數 β_j 排出情緒最正 / 最負的詞，以及「文字 / 實際分數 / 四捨五入預測」範例表。

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from corpus import Review
from featurize import FeatureMatrix
from regress import LinearModel, RegressionError, predict_texts


@dataclass(frozen=True)
class SentimentRanking:
    positive: Tuple[Tuple[str, float], ...]
    negative: Tuple[Tuple[str, float], ...]
    k: int
    weighting: str = "coefficient"

    def to_dict(self) -> Dict:
        return {
            "k": self.k,
            "weighting": self.weighting,
            "positive": [{"term": t, "weight": w} for t, w in self.positive],
            "negative": [{"term": t, "weight": w} for t, w in self.negative],
        }


def _rank(terms: Sequence[str], scores: np.ndarray, k: int, weighting: str) -> SentimentRanking:
    if k < 1:
        raise RegressionError("k 必須 >= 1")
    pairs = [(t, float(w)) for t, w in zip(terms, scores) if w != 0]
    positive = sorted((p for p in pairs if p[1] > 0), key=lambda p: (-p[1], p[0]))[:k]
    negative = sorted((p for p in pairs if p[1] < 0), key=lambda p: (p[1], p[0]))[:k]
    return SentimentRanking(tuple(positive), tuple(negative), k, weighting)


def _require_linear(model) -> LinearModel:
    if not isinstance(model, LinearModel) or model.recipe is None:
        raise RegressionError("model has no coefficients（只有線性模型可以解讀係數）")
    return model


def top_terms(model: LinearModel, k: int = 20) -> SentimentRanking:
    """直接用 β_j 排序；0 權重不列入，同分依字典序。"""
    model = _require_linear(model)
    return _rank(model.recipe.vocabulary.terms, model.weights, k, "coefficient")


def impact_terms(model: LinearModel, matrix: FeatureMatrix, k: int = 20) -> SentimentRanking:
    """
    延伸功能：β_j 乘上該詞在 matrix 中的平均特徵值，
    反映「常出現又有分量」的詞。matrix 必須用同一個配方產生。
    """
    model = _require_linear(model)
    if matrix.dim != len(model.weights):
        raise RegressionError(f"矩陣欄數 {matrix.dim} 與權重長度 {len(model.weights)} 不一致")
    mean_z = np.asarray(matrix.matrix.mean(axis=0)).ravel()
    return _rank(model.recipe.vocabulary.terms, model.weights * mean_z, k, "impact")


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def example_table(model, reviews: Sequence[Review]) -> List[Tuple[str, float, int]]:
    preds = predict_texts(model, [r.text for r in reviews])
    return [(r.text, r.score, round_half_away(p)) for r, p in zip(reviews, preds)]


# ---------------------------------------------------------
# 文字報表
# ---------------------------------------------------------
def build_ranking_text(ranking: SentimentRanking) -> str:
    title = "係數" if ranking.weighting == "coefficient" else "係數 × 平均特徵值（延伸）"
    terms = [t for t, _ in ranking.positive + ranking.negative]
    width = max([len(t) for t in terms] + [4])

    lines = []
    lines.append(f"💬 情緒最強的詞（依{title}，每側前 {ranking.k} 名）")
    lines.append("")
    lines.append("▲ 正向")
    if not ranking.positive:
        lines.append("（無）")
    for term, weight in ranking.positive:
        lines.append(f"  {term:<{width}}  {weight:>+12.6f}")
    lines.append("")
    lines.append("▼ 負向")
    if not ranking.negative:
        lines.append("（無）")
    for term, weight in ranking.negative:
        lines.append(f"  {term:<{width}}  {weight:>+12.6f}")
    return "\n".join(lines)


def build_example_table_text(rows: Sequence[Tuple[str, float, int]], max_text: int = 60) -> str:
    lines = []
    lines.append(f"{'review':<{max_text}}  {'true':>6}  {'pred':>5}")
    for text, true, pred in rows:
        text = " ".join(text.split())
        if len(text) > max_text:
            text = text[: max_text - 1] + "…"
        true_str = "-" if true is None else f"{true:.1f}"
        lines.append(f"{text:<{max_text}}  {true_str:>6}  {pred:>5d}")
    return "\n".join(lines)
