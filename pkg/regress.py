# regress.py
#
# 五種預測器：平均值、詞袋最小平方法、TF-IDF 最小平方法、TF-IDF Ridge、TF-IDF K-NN。
#
# 截距 α 一律不懲罰，做法是先把 X、y 置中再解 β，最後 α = ȳ − x̄·β。
# 解出來的 (α, β) 都要通過梯度檢查：‖∇objective‖ ≤ 1e-8·(1 + ‖y‖)。

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse import linalg as splinalg

from corpus import Review
from featurize import FeatureConfig, FeatureMatrix, Recipe, SparseVector

MODEL_KINDS = ("naive", "ols-bow", "ols-tfidf", "ridge-tfidf", "knn-tfidf")

FEATURE_SPACE_OF = {
    "ols-bow": "counts",
    "ols-tfidf": "tfidf",
    "ridge-tfidf": "tfidf",
    "knn-tfidf": "tfidf",
}

# p·m 在這個範圍內直接展開成稠密的置中矩陣（精度較好）
DENSE_LIMIT = 4_000_000

CERTIFICATE_RTOL = 1e-8


class RegressionError(Exception):
    pass


class ConvergenceError(Exception):
    """求解器沒有達到梯度門檻；gradient_norm 是實際達到的值。"""

    def __init__(self, message: str, gradient_norm: float = float("nan")):
        super().__init__(message)
        self.gradient_norm = gradient_norm


# ---------------------------------------------------------
# 模型型別
# ---------------------------------------------------------
@dataclass(frozen=True)
class NaiveModel:
    mean_score: float


@dataclass(frozen=True, eq=False)
class LinearModel:
    intercept: float
    weights: np.ndarray
    recipe: Optional[Recipe] = None
    kind: str = "ols"
    C: Optional[float] = None

    def __post_init__(self):
        if self.recipe is not None and len(self.weights) != self.recipe.dim:
            raise RegressionError(
                f"權重長度 {len(self.weights)} 與詞彙表大小 {self.recipe.dim} 不一致"
            )


@dataclass(frozen=True, eq=False)
class KnnModel:
    train_matrix: FeatureMatrix
    train_scores: np.ndarray
    k: int
    recipe: Optional[Recipe] = None

    def __post_init__(self):
        if self.train_matrix.n_rows != len(self.train_scores):
            raise RegressionError("訓練列數與分數數量不一致")
        if not 1 <= self.k <= self.train_matrix.n_rows:
            raise RegressionError(
                f"k 必須介於 1 與訓練列數 {self.train_matrix.n_rows} 之間，收到 {self.k}"
            )


def _as_scores(y, n_rows: Optional[int] = None) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise RegressionError("分數向量不可為空")
    if n_rows is not None and y.size != n_rows:
        raise RegressionError(f"維度不一致：{n_rows} 列特徵 vs {y.size} 個分數")
    return y


# ---------------------------------------------------------
# 置中設計矩陣
# ---------------------------------------------------------
class _CenteredDesign:
    """X − 1·x̄ᵀ。夠小就展開成稠密矩陣，否則只用稀疏 X 隱式運算。"""

    def __init__(self, X: sp.csr_matrix):
        self.X = X
        self.p, self.m = X.shape
        self.mean = np.asarray(X.mean(axis=0)).ravel()
        self.dense = None
        if self.p * self.m <= DENSE_LIMIT:
            self.dense = X.toarray() - self.mean

    def matvec(self, b: np.ndarray) -> np.ndarray:
        if self.dense is not None:
            return self.dense @ b
        return self.X @ b - self.mean @ b

    def rmatvec(self, r: np.ndarray) -> np.ndarray:
        if self.dense is not None:
            return self.dense.T @ r
        return self.X.T @ r - self.mean * r.sum()

    def gram_primal(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense.T @ self.dense
        G = (self.X.T @ self.X).toarray()
        return G - self.p * np.outer(self.mean, self.mean)

    def gram_dual(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense @ self.dense.T
        u = self.X @ self.mean
        K = (self.X @ self.X.T).toarray()
        return K - u[:, None] - u[None, :] + self.mean @ self.mean

    def operator(self) -> splinalg.LinearOperator:
        return splinalg.LinearOperator(
            (self.p, self.m), matvec=self.matvec, rmatvec=self.rmatvec, dtype=float
        )


def _solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(A, check_finite=False)
    except linalg.LinAlgError as e:
        raise ConvergenceError(f"Cholesky 分解失敗: {e}") from None
    x = linalg.cho_solve(factor, b, check_finite=False)
    # 一次迭代修正
    x += linalg.cho_solve(factor, b - A @ x, check_finite=False)
    return x


def objective_gradient(alpha: float, beta: np.ndarray, X: FeatureMatrix, y, C: Optional[float] = None) -> np.ndarray:
    """
    (1/p)Σ(α + β·x_i − y_i)² [+ (1/2C)Σβ_j²] 對 (α, β) 的梯度。
    C 為 None 時是純最小平方法。
    """
    y = _as_scores(y, X.n_rows)
    p = len(y)
    r = alpha + X.matrix @ beta - y
    g_alpha = 2.0 * r.sum() / p
    g_beta = 2.0 * (X.matrix.T @ r) / p
    if C is not None:
        g_beta = g_beta + beta / C
    return np.concatenate([[g_alpha], g_beta])


def _certify(alpha: float, beta: np.ndarray, X: FeatureMatrix, y: np.ndarray, C: Optional[float], solver: str) -> None:
    grad = np.linalg.norm(objective_gradient(alpha, beta, X, y, C))
    limit = CERTIFICATE_RTOL * (1.0 + np.linalg.norm(y))
    if not grad <= limit:
        raise ConvergenceError(
            f"{solver} 未收斂：梯度範數 {grad:.3e} > 門檻 {limit:.3e}", gradient_norm=float(grad)
        )


# ---------------------------------------------------------
# 平均值預測器
# ---------------------------------------------------------
def fit_naive(y) -> NaiveModel:
    y = _as_scores(y)
    return NaiveModel(mean_score=float(y.sum() / y.size))


# ---------------------------------------------------------
# 最小平方法（詞袋 / TF-IDF 共用）
# ---------------------------------------------------------
def _lsqr_min_norm(design: _CenteredDesign, yc: np.ndarray) -> np.ndarray:
    # 從 0 出發的 LSQR 收斂到最小範數解；conlim=0 關掉條件數停止條件
    result = splinalg.lsqr(
        design.operator(),
        yc,
        atol=1e-15,
        btol=1e-15,
        conlim=0,
        iter_lim=max(1000, 10 * min(design.p, design.m)),
    )
    return result[0]


def fit_least_squares(X: FeatureMatrix, y, recipe: Optional[Recipe] = None) -> LinearModel:
    """
    最小化 (1/p)Σ(α + β·x_i − y_i)²。
    m ≥ p（例如 bigram）時解不唯一，回傳 β 範數最小的那一個。
    """
    y = _as_scores(y, X.n_rows)
    design = _CenteredDesign(X.matrix)
    y_mean = float(y.mean())
    yc = y - y_mean

    if design.m == 0:
        beta = np.zeros(0)
        solver = "none"
    elif design.dense is not None:
        # 置中後至少有一個奇異值只剩捨入誤差，門檻要蓋過它才拿得到最小範數解
        cond = max(design.p, design.m) * np.finfo(float).eps
        beta, *_ = linalg.lstsq(design.dense, yc, cond=cond, lapack_driver="gelsd", check_finite=False)
        solver = "gelsd"
    else:
        beta = _lsqr_min_norm(design, yc)
        solver = "lsqr"

    alpha = y_mean - float(design.mean @ beta)
    _certify(alpha, beta, X, y, None, solver)
    return LinearModel(intercept=alpha, weights=beta, recipe=recipe, kind="ols")


# ---------------------------------------------------------
# Ridge
# ---------------------------------------------------------
def fit_ridge(Z: FeatureMatrix, y, C: float, recipe: Optional[Recipe] = None) -> LinearModel:
    """
    最小化 (1/p)Σ(α + β·z_i − y_i)² + (1/2C)Σβ_j²，α 不懲罰。
    置中後 β = (ZᵀZ + (p/2C)·I)⁻¹ Zᵀy；m > p 時改解 p×p 的對偶系統。
    """
    if C is None or not C > 0:
        raise RegressionError(f"C 必須 > 0，收到 {C}")
    y = _as_scores(y, Z.n_rows)
    design = _CenteredDesign(Z.matrix)
    y_mean = float(y.mean())
    yc = y - y_mean
    lam = design.p / (2.0 * C)

    if design.m == 0:
        beta = np.zeros(0)
    elif design.m <= design.p:
        G = design.gram_primal()
        G[np.diag_indices_from(G)] += lam
        beta = _solve_spd(G, design.rmatvec(yc))
    else:
        K = design.gram_dual()
        K[np.diag_indices_from(K)] += lam
        beta = design.rmatvec(_solve_spd(K, yc))

    alpha = y_mean - float(design.mean @ beta)
    _certify(alpha, beta, Z, y, C, "cholesky")
    return LinearModel(intercept=alpha, weights=beta, recipe=recipe, kind="ridge", C=float(C))


# ---------------------------------------------------------
# K-NN（TF-IDF 空間，歐氏距離）
# ---------------------------------------------------------
def fit_knn(Z: FeatureMatrix, y, k: int, recipe: Optional[Recipe] = None) -> KnnModel:
    y = _as_scores(y, Z.n_rows)
    if isinstance(k, bool) or int(k) != k:
        raise RegressionError(f"k 必須是整數，收到 {k!r}")
    return KnnModel(train_matrix=Z, train_scores=y.copy(), k=int(k), recipe=recipe)


def _distances(train: sp.csr_matrix, z: SparseVector) -> np.ndarray:
    z_row = sp.csr_matrix(
        (z.values, z.indices, np.array([0, len(z.indices)])), shape=(1, z.dim)
    )
    ones = sp.csr_matrix(np.ones((train.shape[0], 1)))
    diff = train - ones @ z_row
    return np.sqrt(np.asarray(diff.multiply(diff).sum(axis=1)).ravel())


def knn_neighbors(model: KnnModel, z: SparseVector) -> np.ndarray:
    """距離最小的 k 列；同距離時訓練列索引小的優先。"""
    if z.dim != model.train_matrix.dim:
        raise RegressionError(f"向量維度 {z.dim} 與訓練維度 {model.train_matrix.dim} 不一致")
    dist = _distances(model.train_matrix.matrix, z)
    return np.argsort(dist, kind="stable")[: model.k]


def predict_knn(model: KnnModel, z: SparseVector) -> float:
    nearest = knn_neighbors(model, z)
    return float(model.train_scores[nearest].sum() / model.k)


# ---------------------------------------------------------
# 預測
# ---------------------------------------------------------
def predict_vector(model: LinearModel, v: SparseVector) -> float:
    return float(model.intercept + v.values @ model.weights[v.indices])


def predict_linear(model: LinearModel, text: str) -> float:
    if model.recipe is None:
        raise RegressionError("模型沒有特徵配方，無法直接從文字預測")
    return predict_vector(model, model.recipe.vectorize(text))


def predict_texts(model, texts: Iterable[str]) -> np.ndarray:
    texts = list(texts)
    if isinstance(model, NaiveModel):
        return np.full(len(texts), model.mean_score)
    if isinstance(model, LinearModel):
        return np.array([predict_linear(model, t) for t in texts], dtype=float)
    if isinstance(model, KnnModel):
        if model.recipe is None:
            raise RegressionError("模型沒有特徵配方，無法直接從文字預測")
        return np.array([predict_knn(model, model.recipe.vectorize(t)) for t in texts], dtype=float)
    raise RegressionError(f"未知的模型型別: {type(model).__name__}")


def predict_matrix(model, X: FeatureMatrix) -> np.ndarray:
    if isinstance(model, NaiveModel):
        return np.full(X.n_rows, model.mean_score)
    if isinstance(model, LinearModel):
        return model.intercept + X.matrix @ model.weights
    if isinstance(model, KnnModel):
        return np.array([predict_knn(model, X.row(i)) for i in range(X.n_rows)], dtype=float)
    raise RegressionError(f"未知的模型型別: {type(model).__name__}")


# ---------------------------------------------------------
# 從評論直接訓練
# ---------------------------------------------------------
def fit_design(kind: str, X: FeatureMatrix, y, recipe: Optional[Recipe] = None,
               C: Optional[float] = None, k: Optional[int] = None):
    """在已經特徵化好的矩陣上訓練指定種類的模型。"""
    if kind == "naive":
        return fit_naive(y)
    if kind in ("ols-bow", "ols-tfidf"):
        return fit_least_squares(X, y, recipe=recipe)
    if kind == "ridge-tfidf":
        if C is None:
            raise RegressionError("ridge-tfidf 需要超參數 C")
        return fit_ridge(X, y, C, recipe=recipe)
    if kind == "knn-tfidf":
        if k is None:
            raise RegressionError("knn-tfidf 需要超參數 k")
        return fit_knn(X, y, k, recipe=recipe)
    raise RegressionError(f"未知的模型種類: {kind}（可用 {', '.join(MODEL_KINDS)}）")


def feature_config_for(kind: str, stopwords: Iterable[str], orders: Sequence[int]) -> FeatureConfig:
    if kind not in FEATURE_SPACE_OF:
        raise RegressionError(f"{kind} 不需要特徵配方")
    return FeatureConfig(feature_space=FEATURE_SPACE_OF[kind], orders=tuple(orders), stopwords=frozenset(stopwords))


def fit_model(kind: str, reviews: Sequence[Review], stopwords: Iterable[str] = frozenset(),
              orders: Sequence[int] = (1,), C: Optional[float] = None, k: Optional[int] = None):
    if kind not in MODEL_KINDS:
        raise RegressionError(f"未知的模型種類: {kind}（可用 {', '.join(MODEL_KINDS)}）")
    if kind == "ridge-tfidf" and C is None:
        raise RegressionError("ridge-tfidf 需要超參數 C")
    if kind == "knn-tfidf" and k is None:
        raise RegressionError("knn-tfidf 需要超參數 k")
    y = [r.score for r in reviews]
    if kind == "naive":
        return fit_naive(y)
    recipe, X = feature_config_for(kind, stopwords, orders).fit(reviews)
    return fit_design(kind, X, y, recipe=recipe, C=C, k=k)
