# featurize.py
#
# 詞彙表 + 詞袋計數向量 + TF-IDF 向量。
# TF 用「文件內佔比」x_ij / Σ_k x_ik，IDF = ln(N / (1 + df_j))，自然對數。

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from corpus import Review, TokenizedReview, extract_ngrams, tokenize, tokenize_reviews

FEATURE_SPACES = ("counts", "tfidf")
LOG_BASE = "e"


class FeaturizeError(Exception):
    pass


# ---------------------------------------------------------
# 型別
# ---------------------------------------------------------
@dataclass(frozen=True)
class Vocabulary:
    terms: Tuple[str, ...]
    doc_freq: Tuple[int, ...]
    n_docs: int
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {t: j for j, t in enumerate(self.terms)}
        if len(index) != len(self.terms):
            raise FeaturizeError("詞彙表有重複的 term")
        if len(self.doc_freq) != len(self.terms):
            raise FeaturizeError("doc_freq 長度與 terms 不一致")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True, eq=False)
class SparseVector:
    dim: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def entries(self) -> List[Tuple[int, float]]:
        return [(int(j), float(v)) for j, v in zip(self.indices, self.values)]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    matrix: sp.csr_matrix
    row_ids: Tuple[str, ...]

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.row_ids):
            raise FeaturizeError(
                f"列數 {self.matrix.shape[0]} 與 id 數 {len(self.row_ids)} 不一致"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def row(self, i: int) -> SparseVector:
        start, end = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return SparseVector(
            dim=self.dim,
            indices=self.matrix.indices[start:end].astype(np.int64),
            values=self.matrix.data[start:end].astype(float),
        )

    @property
    def rows(self) -> List[SparseVector]:
        return [self.row(i) for i in range(self.n_rows)]

    def take(self, positions: Sequence[int]) -> "FeatureMatrix":
        positions = list(positions)
        return FeatureMatrix(
            matrix=_canonical(self.matrix[positions]),
            row_ids=tuple(self.row_ids[i] for i in positions),
        )

    @classmethod
    def from_rows(cls, rows: Sequence[SparseVector], row_ids: Sequence[str], dim: int = None) -> "FeatureMatrix":
        if dim is None:
            if not rows:
                raise FeaturizeError("空的列集合需要指定 dim")
            dim = rows[0].dim
        if any(r.dim != dim for r in rows):
            raise FeaturizeError("所有列的 dim 必須一致")
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r.indices) for r in rows])
        indices = np.concatenate([r.indices for r in rows]) if rows else np.zeros(0, dtype=np.int64)
        data = np.concatenate([r.values for r in rows]) if rows else np.zeros(0)
        matrix = sp.csr_matrix((data.astype(float), indices, indptr), shape=(len(rows), dim))
        return cls(matrix=_canonical(matrix), row_ids=tuple(row_ids))

    @classmethod
    def from_dense(cls, array, row_ids: Optional[Sequence[str]] = None) -> "FeatureMatrix":
        array = np.atleast_2d(np.asarray(array, dtype=float))
        if row_ids is None:
            row_ids = [str(i) for i in range(array.shape[0])]
        return cls(matrix=_canonical(sp.csr_matrix(array)), row_ids=tuple(row_ids))


@dataclass(frozen=True, eq=False)
class IdfModel:
    idf: np.ndarray
    vocabulary: Vocabulary
    log_base: str = LOG_BASE


def _canonical(matrix) -> sp.csr_matrix:
    matrix = sp.csr_matrix(matrix, dtype=float)
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return matrix


# ---------------------------------------------------------
# 詞彙表
# ---------------------------------------------------------
def build_vocabulary(tokenized: Sequence[TokenizedReview]) -> Vocabulary:
    """依第一次出現的順序編號；doc_freq 算的是「出現在幾篇」，不是次數。"""
    if not tokenized:
        raise FeaturizeError("無法從空語料建立詞彙表")
    order: Dict[str, int] = {}
    doc_freq: List[int] = []
    for doc in tokenized:
        for term in dict.fromkeys(doc.terms):
            j = order.get(term)
            if j is None:
                order[term] = len(doc_freq)
                doc_freq.append(1)
            else:
                doc_freq[j] += 1
    return Vocabulary(terms=tuple(order), doc_freq=tuple(doc_freq), n_docs=len(tokenized))


# ---------------------------------------------------------
# 計數向量 / TF-IDF
# ---------------------------------------------------------
def count_vector(terms: Iterable[str], vocab: Vocabulary) -> SparseVector:
    counts = Counter(vocab.index[t] for t in terms if t in vocab.index)
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[j] for j in indices], dtype=float)
    return SparseVector(dim=len(vocab), indices=indices, values=values)


def count_matrix(tokenized: Sequence[TokenizedReview], vocab: Vocabulary) -> FeatureMatrix:
    rows = [count_vector(doc.terms, vocab) for doc in tokenized]
    return FeatureMatrix.from_rows(rows, [doc.id for doc in tokenized], dim=len(vocab))


def fit_idf(train_matrix: FeatureMatrix, vocab: Vocabulary) -> IdfModel:
    if vocab.n_docs != train_matrix.n_rows:
        raise FeaturizeError(
            f"詞彙表文件數 {vocab.n_docs} 與訓練矩陣列數 {train_matrix.n_rows} 不一致"
        )
    if train_matrix.dim != len(vocab):
        raise FeaturizeError("訓練矩陣欄數與詞彙表大小不一致")
    # 矩陣已去掉顯式 0，所以 indices 的出現次數就是 df
    df = np.bincount(train_matrix.matrix.indices, minlength=len(vocab))
    # df = N 時 idf 為負，照公式保留
    idf = np.log(vocab.n_docs / (1.0 + df))
    return IdfModel(idf=idf, vocabulary=vocab)


def term_frequency(counts: SparseVector) -> SparseVector:
    total = counts.values.sum()
    if total == 0:
        return SparseVector(counts.dim, counts.indices[:0], counts.values[:0])
    return SparseVector(counts.dim, counts.indices, counts.values / total)


def tfidf_transform(counts: SparseVector, idf: IdfModel) -> SparseVector:
    if counts.dim != len(idf.idf):
        raise FeaturizeError(f"向量維度 {counts.dim} 與 idf 長度 {len(idf.idf)} 不一致")
    tf = term_frequency(counts)
    values = tf.values * idf.idf[tf.indices]
    keep = values != 0
    return SparseVector(counts.dim, tf.indices[keep], values[keep])


def tfidf_matrix(counts: FeatureMatrix, idf: IdfModel) -> FeatureMatrix:
    """與逐列呼叫 tfidf_transform 的結果逐位元相同。"""
    if counts.dim != len(idf.idf):
        raise FeaturizeError(f"矩陣欄數 {counts.dim} 與 idf 長度 {len(idf.idf)} 不一致")
    m = counts.matrix
    totals = np.asarray(m.sum(axis=1)).ravel()
    per_entry = np.repeat(totals, np.diff(m.indptr))
    data = (m.data / per_entry) * idf.idf[m.indices]
    z = sp.csr_matrix((data, m.indices.copy(), m.indptr.copy()), shape=m.shape)
    return FeatureMatrix(matrix=_canonical(z), row_ids=counts.row_ids)


# ---------------------------------------------------------
# 特徵配方：從原始文字到預測變數
# ---------------------------------------------------------
@dataclass(frozen=True)
class FeatureConfig:
    feature_space: str = "tfidf"
    orders: Tuple[int, ...] = (1,)
    stopwords: frozenset = frozenset()

    def __post_init__(self):
        if self.feature_space not in FEATURE_SPACES:
            raise FeaturizeError(f"未知的特徵空間: {self.feature_space}")
        object.__setattr__(self, "orders", tuple(sorted(set(self.orders))))
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))

    @property
    def stopwords_sha256(self) -> str:
        payload = "\n".join(sorted(self.stopwords)).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def fit(self, reviews: Sequence[Review]) -> Tuple["Recipe", FeatureMatrix]:
        """詞彙表與 IDF 只用傳進來的（訓練）評論建立。"""
        tokenized = tokenize_reviews(reviews, self.stopwords, self.orders)
        vocab = build_vocabulary(tokenized)
        counts = count_matrix(tokenized, vocab)
        if self.feature_space == "counts":
            return Recipe(self, vocab, None), counts
        idf = fit_idf(counts, vocab)
        return Recipe(self, vocab, idf), tfidf_matrix(counts, idf)


@dataclass(frozen=True)
class Recipe:
    config: FeatureConfig
    vocabulary: Vocabulary
    idf: Optional[IdfModel]

    def __post_init__(self):
        if self.config.feature_space == "tfidf" and self.idf is None:
            raise FeaturizeError("tfidf 配方缺少 IdfModel")

    @property
    def dim(self) -> int:
        return len(self.vocabulary)

    def terms(self, text: str) -> List[str]:
        return extract_ngrams(tokenize(text, self.config.stopwords), self.config.orders)

    def vectorize(self, text: str) -> SparseVector:
        counts = count_vector(self.terms(text), self.vocabulary)
        if self.idf is None:
            return counts
        return tfidf_transform(counts, self.idf)

    def transform(self, reviews: Sequence[Review]) -> FeatureMatrix:
        tokenized = tokenize_reviews(reviews, self.config.stopwords, self.config.orders)
        counts = count_matrix(tokenized, self.vocabulary)
        if self.idf is None:
            return counts
        return tfidf_matrix(counts, self.idf)
