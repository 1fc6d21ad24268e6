# evaluate.py
#
# 訓練 / 測試切分、k-fold 交叉驗證、MSE / MAE、超參數網格搜尋、模型總表。
#
# 亂數一律用 numpy.random.Generator(PCG64(seed))：演算法固定、跨平台結果一致。
# 切分：依 seed 打亂後，前 ⌈fraction·n⌉ 個當測試集。
# 分 fold：依 seed 打亂後輪流發牌（第 i 個給 fold i mod kf）。

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from corpus import Review
from regress import (
    ConvergenceError,
    RegressionError,
    feature_config_for,
    fit_design,
    fit_model,
    predict_matrix,
    predict_texts,
)

DEFAULT_SEED = 42
DEFAULT_TEST_FRACTION = 0.2
DEFAULT_KF = 5

DEFAULT_RIDGE_GRID = (0.0001, 0.001, 0.01, 0.1, 1, 10, 20)
DEFAULT_KNN_GRID = (1, 11, 21, 51, 101, 201)

SEARCH_FAMILIES = ("ridge-tfidf", "knn-tfidf")

# 總表的列順序：平均值基準，接著每一族各跑 unigram 與 unigram+bigram
COMPARISON_FAMILIES = ("ols-bow", "ols-tfidf", "ridge-tfidf", "knn-tfidf")


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class SplitPlan:
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]
    seed: int
    test_fraction: float


@dataclass(frozen=True)
class FoldPlan:
    kf: int
    folds: Tuple[Tuple[str, ...], ...]
    seed: int

    def training_ids(self, held_out: int) -> List[str]:
        return [i for f, fold in enumerate(self.folds) if f != held_out for i in fold]


@dataclass(frozen=True)
class EvalReport:
    mse: float
    mae: float
    n: int

    def to_dict(self) -> Dict:
        return {"mse": self.mse, "mae": self.mae, "n": self.n}


@dataclass(frozen=True)
class CvResult:
    family: str
    orders: Tuple[int, ...]
    grid: Tuple[float, ...]
    fold_mse: Tuple[Tuple[float, ...], ...]
    fold_mae: Tuple[Tuple[float, ...], ...]
    mean_mse: Tuple[float, ...]
    std_mse: Tuple[float, ...]
    selected: float
    kf: int
    seed: int

    def to_dict(self) -> Dict:
        return {
            "family": self.family,
            "orders": list(self.orders),
            "kf": self.kf,
            "seed": self.seed,
            "grid": list(self.grid),
            "fold_mse": [list(row) for row in self.fold_mse],
            "fold_mae": [list(row) for row in self.fold_mae],
            "mean_mse": list(self.mean_mse),
            "std_mse": list(self.std_mse),
            "selected": self.selected,
        }


def _rng(seed: int) -> np.random.Generator:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise EvaluationError(f"seed 必須是非負整數，收到 {seed!r}")
    return np.random.Generator(np.random.PCG64(int(seed)))


# ---------------------------------------------------------
# 切分
# ---------------------------------------------------------
def split(ids: Sequence, test_fraction: float = DEFAULT_TEST_FRACTION, seed: int = DEFAULT_SEED) -> SplitPlan:
    ids = list(ids)
    n = len(ids)
    if not 0 < test_fraction < 1:
        raise EvaluationError(f"test_fraction 必須介於 0 與 1 之間，收到 {test_fraction}")
    if n < 2:
        raise EvaluationError(f"至少需要 2 筆資料才能切分，只有 {n} 筆")
    # round 避免 0.7·10 = 7.000000000000001 這種浮點誤差多進一位
    n_test = math.ceil(round(test_fraction * n, 9))
    if n_test >= n:
        raise EvaluationError(f"test_fraction={test_fraction} 會讓訓練集為空（n={n}）")
    perm = _rng(seed).permutation(n)
    return SplitPlan(
        train_ids=tuple(ids[i] for i in perm[n_test:]),
        test_ids=tuple(ids[i] for i in perm[:n_test]),
        seed=seed,
        test_fraction=test_fraction,
    )


def kfold(train_ids: Sequence, kf: int = DEFAULT_KF, seed: int = DEFAULT_SEED) -> FoldPlan:
    train_ids = list(train_ids)
    n = len(train_ids)
    if isinstance(kf, bool) or not isinstance(kf, (int, np.integer)) or not 2 <= kf <= n:
        raise EvaluationError(f"kf 必須介於 2 與訓練筆數 {n} 之間，收到 {kf}")
    perm = _rng(seed).permutation(n)
    folds = tuple(tuple(train_ids[i] for i in perm[f::kf]) for f in range(kf))
    return FoldPlan(kf=int(kf), folds=folds, seed=seed)


# ---------------------------------------------------------
# 誤差指標（取平均，不是總和）
# ---------------------------------------------------------
def _residuals(y_true, y_pred) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.size != y_pred.size:
        raise EvaluationError(f"長度不一致：{y_true.size} vs {y_pred.size}")
    if y_true.size == 0:
        raise EvaluationError("不能對空向量計算誤差")
    return y_true - y_pred


def mse(y_true, y_pred) -> float:
    r = _residuals(y_true, y_pred)
    return float(np.mean(r * r))


def mae(y_true, y_pred) -> float:
    r = _residuals(y_true, y_pred)
    return float(np.mean(np.abs(r)))


def evaluate_predictions(y_true, y_pred) -> EvalReport:
    return EvalReport(mse=mse(y_true, y_pred), mae=mae(y_true, y_pred), n=len(y_true))


def predict_reviews(model, reviews: Sequence[Review]) -> np.ndarray:
    recipe = getattr(model, "recipe", None)
    if recipe is None:
        return predict_texts(model, [r.text for r in reviews])
    return predict_matrix(model, recipe.transform(reviews))


def evaluate_model(model, reviews: Sequence[Review]) -> EvalReport:
    y = [r.score for r in reviews]
    return evaluate_predictions(y, predict_reviews(model, reviews))


# ---------------------------------------------------------
# 網格搜尋
# ---------------------------------------------------------
def _check_grid(family: str, grid: Iterable) -> Tuple:
    grid = tuple(grid)
    if not grid:
        raise EvaluationError("超參數網格不可為空")
    if family == "ridge-tfidf":
        if any(not v > 0 for v in grid):
            raise EvaluationError(f"C 必須全部 > 0：{list(grid)}")
        return tuple(float(v) for v in grid)
    if any(int(v) != v or v < 1 for v in grid):
        raise EvaluationError(f"k 必須全部是正整數：{list(grid)}")
    return tuple(int(v) for v in grid)


def _run_fold(family, grid, folds, f, by_id, stopwords, orders):
    train_reviews = [by_id[i] for i in folds.training_ids(f)]
    held_reviews = [by_id[i] for i in folds.folds[f]]
    # 每個 fold 只用自己的訓練部分重建詞彙表與 IDF
    recipe, X = feature_config_for(family, stopwords, orders).fit(train_reviews)
    X_held = recipe.transform(held_reviews)
    y_train = [r.score for r in train_reviews]
    y_held = [r.score for r in held_reviews]

    out = []
    for value in grid:
        hyper = {"C": value} if family == "ridge-tfidf" else {"k": value}
        try:
            model = fit_design(family, X, y_train, recipe=recipe, **hyper)
        except ConvergenceError as e:
            raise ConvergenceError(f"{family} {hyper}（fold {f + 1}）: {e}", e.gradient_norm) from e
        except RegressionError as e:
            raise RegressionError(f"{family} {hyper}（fold {f + 1}）: {e}") from e
        pred = predict_matrix(model, X_held)
        out.append((mse(y_held, pred), mae(y_held, pred)))
    return out


def grid_search(family: str, grid: Iterable, folds: FoldPlan, reviews: Sequence[Review],
                stopwords: Iterable[str] = frozenset(), orders: Sequence[int] = (1,),
                workers: int = 1) -> CvResult:
    """
    每個 (網格值, fold)：用其餘 kf−1 個 fold 訓練、在留下的 fold 上算 MSE。
    選平均 MSE 最小者；平手時 ridge 取較小的 C（較強正則化），K-NN 取較大的 k。
    workers > 1 時各 fold 平行計算，結果與循序執行相同。
    """
    if family not in SEARCH_FAMILIES:
        raise EvaluationError(f"不支援網格搜尋的模型: {family}（可用 {', '.join(SEARCH_FAMILIES)}）")
    grid = _check_grid(family, grid)
    orders = tuple(sorted(set(orders)))
    stopwords = frozenset(stopwords)
    by_id = {r.id: r for r in reviews}
    missing = [i for fold in folds.folds for i in fold if i not in by_id]
    if missing:
        raise EvaluationError(f"fold 中有 {len(missing)} 個 id 不在語料裡（例如 {missing[0]!r}）")

    args = [(family, grid, folds, f, by_id, stopwords, orders) for f in range(folds.kf)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_fold = list(pool.map(lambda a: _run_fold(*a), args))
    else:
        per_fold = [_run_fold(*a) for a in args]

    fold_mse = tuple(tuple(per_fold[f][g][0] for f in range(folds.kf)) for g in range(len(grid)))
    fold_mae = tuple(tuple(per_fold[f][g][1] for f in range(folds.kf)) for g in range(len(grid)))
    mean_mse = tuple(float(np.mean(row)) for row in fold_mse)
    std_mse = tuple(float(np.std(row, ddof=1)) for row in fold_mse)

    best = min(mean_mse)
    tied = [grid[g] for g, m in enumerate(mean_mse) if m == best]
    selected = min(tied) if family == "ridge-tfidf" else max(tied)

    return CvResult(
        family=family,
        orders=orders,
        grid=grid,
        fold_mse=fold_mse,
        fold_mae=fold_mae,
        mean_mse=mean_mse,
        std_mse=std_mse,
        selected=selected,
        kf=folds.kf,
        seed=folds.seed,
    )


def default_grid(family: str) -> Tuple:
    if family == "ridge-tfidf":
        return DEFAULT_RIDGE_GRID
    if family == "knn-tfidf":
        return DEFAULT_KNN_GRID
    raise EvaluationError(f"{family} 沒有超參數網格")


def feasible_knn_grid(grid: Iterable[int], folds: FoldPlan) -> Tuple[int, ...]:
    """只留下每個 fold 的訓練部分都放得下的 k。"""
    smallest = min(len(folds.training_ids(f)) for f in range(folds.kf))
    return tuple(k for k in grid if k <= smallest)


# ---------------------------------------------------------
# 全部模型的總表
# ---------------------------------------------------------
def compare_models(reviews: Sequence[Review], plan: SplitPlan, stopwords: Iterable[str] = frozenset(),
                   orders_list: Sequence[Sequence[int]] = ((1,), (1, 2)), C: float = 1.0, k: int = 11,
                   tune: bool = False, kf: int = DEFAULT_KF, workers: int = 1) -> List[Dict]:
    """
    依 plan 切分後，逐一訓練平均值基準與每一族模型（每種 n-gram 設定各一次），
    回傳測試集 MSE / MAE。tune=True 時 C 與 k 先在訓練集上做 k-fold 選出。
    """
    by_id = {r.id: r for r in reviews}
    train = [by_id[i] for i in plan.train_ids]
    test = [by_id[i] for i in plan.test_ids]
    stopwords = frozenset(stopwords)
    folds = kfold(plan.train_ids, kf, plan.seed) if tune else None

    rows = []
    naive = fit_model("naive", train)
    rows.append(_comparison_row("naive", (), {}, evaluate_model(naive, test), len(train)))

    for family in COMPARISON_FAMILIES:
        for orders in orders_list:
            orders = tuple(sorted(set(orders)))
            params = {}
            if family == "ridge-tfidf":
                params["C"] = C
            elif family == "knn-tfidf":
                params["k"] = k
            if tune and family in SEARCH_FAMILIES:
                grid = default_grid(family)
                if family == "knn-tfidf":
                    grid = feasible_knn_grid(grid, folds)
                cv = grid_search(family, grid, folds, train, stopwords, orders, workers=workers)
                params = {"C": cv.selected} if family == "ridge-tfidf" else {"k": cv.selected}
            model = fit_model(family, train, stopwords, orders, **params)
            rows.append(_comparison_row(family, orders, params, evaluate_model(model, test), len(train)))
    return rows


def _comparison_row(family: str, orders: Tuple[int, ...], params: Dict, report: EvalReport, n_train: int) -> Dict:
    return {
        "model": family,
        "orders": list(orders),
        "params": params,
        "n_train": n_train,
        "n_test": report.n,
        "mse": report.mse,
        "mae": report.mae,
    }


# ---------------------------------------------------------
# 文字報表
# ---------------------------------------------------------
def _orders_label(orders: Sequence[int]) -> str:
    orders = tuple(orders)
    if not orders:
        return "-"
    if orders == (1,):
        return "unigram"
    if orders == (2,):
        return "bigram"
    return "unigram+bigram"


def build_eval_text(info: Dict) -> str:
    lines = []
    lines.append(f"🧪 測試集表現：{info['model']}")
    params = ", ".join(f"{k}={v}" for k, v in info.get("params", {}).items()) or "無"
    lines.append(f"超參數：{params}")
    lines.append(f"seed：{info['seed']}　訓練 / 測試筆數：{info['n_train']} / {info['n_test']}")
    lines.append(f"MSE：{info['mse']:.3f}")
    lines.append(f"MAE：{info['mae']:.3f}")
    return "\n".join(lines)


def build_cv_text(cv: CvResult) -> str:
    name = "C" if cv.family == "ridge-tfidf" else "k"
    lines = []
    lines.append(f"🔍 {cv.kf}-fold 交叉驗證：{cv.family}（{_orders_label(cv.orders)}，seed {cv.seed}）")
    header = f"{name:>10}  {'mean MSE':>10}  {'std MSE':>10}  " + "  ".join(
        f"{'fold ' + str(f + 1):>8}" for f in range(cv.kf)
    )
    lines.append(header)
    for g, value in enumerate(cv.grid):
        marker = " *" if value == cv.selected else ""
        folds = "  ".join(f"{m:>8.3f}" for m in cv.fold_mse[g])
        lines.append(f"{value:>10g}  {cv.mean_mse[g]:>10.4f}  {cv.std_mse[g]:>10.4f}  {folds}{marker}")
    lines.append(f"選出：{name} = {cv.selected:g}")
    return "\n".join(lines)


def build_comparison_text(rows: Sequence[Dict]) -> str:
    labels = []
    for row in rows:
        label = row["model"]
        if row["orders"]:
            label += f" ({_orders_label(row['orders'])})"
        if row["params"]:
            label += " [" + ", ".join(f"{k}={v:g}" for k, v in row["params"].items()) + "]"
        labels.append(label)
    width = max(len(label) for label in labels) if labels else 5
    lines = ["📋 模型比較（測試集）"]
    lines.append(f"{'model':<{width}}  {'MSE':>8}  {'MAE':>8}")
    for label, row in zip(labels, rows):
        lines.append(f"{label:<{width}}  {row['mse']:>8.3f}  {row['mae']:>8.3f}")
    return "\n".join(lines)
