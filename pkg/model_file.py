# model_file.py
#
# 模型檔：單一 JSON 文件，自帶詞彙表、IDF、stopword 清單與權重，
# 預測時不需要其他任何檔案。K-NN 的訓練矩陣用座標格式（row / col / data）保存。

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from featurize import FeatureConfig, FeatureMatrix, FeaturizeError, IdfModel, Recipe, Vocabulary
from regress import KnnModel, LinearModel, NaiveModel, RegressionError

FORMAT_VERSION = 1
MODEL_FILE_KINDS = ("naive", "ols", "ridge", "knn")


class ModelFileError(Exception):
    pass


# ---------------------------------------------------------
# 序列化
# ---------------------------------------------------------
def _recipe_to_dict(recipe: Recipe) -> Dict[str, Any]:
    config = recipe.config
    vocab = recipe.vocabulary
    return {
        "feature_space": config.feature_space,
        "orders": list(config.orders),
        "log_base": recipe.idf.log_base if recipe.idf is not None else None,
        "standardized": False,
        "stopwords": sorted(config.stopwords),
        "stopwords_sha256": config.stopwords_sha256,
        "vocabulary": {
            "terms": list(vocab.terms),
            "doc_freq": list(vocab.doc_freq),
            "n_docs": vocab.n_docs,
        },
        "idf": recipe.idf.idf.tolist() if recipe.idf is not None else None,
    }


def model_kind(model) -> str:
    if isinstance(model, NaiveModel):
        return "naive"
    if isinstance(model, LinearModel):
        return model.kind
    if isinstance(model, KnnModel):
        return "knn"
    raise ModelFileError(f"無法序列化的模型型別: {type(model).__name__}")


def to_document(model, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "kind": model_kind(model),
        "metadata": dict(metadata or {}),
    }
    if isinstance(model, NaiveModel):
        doc["mean_score"] = model.mean_score
        return doc

    if model.recipe is None:
        raise ModelFileError("模型缺少特徵配方，無法保存成自給自足的模型檔")
    doc["recipe"] = _recipe_to_dict(model.recipe)

    if isinstance(model, LinearModel):
        doc["intercept"] = model.intercept
        doc["weights"] = model.weights.tolist()
        doc["C"] = model.C
    else:
        coo = model.train_matrix.matrix.tocoo()
        doc["k"] = model.k
        doc["train_scores"] = model.train_scores.tolist()
        doc["train_matrix"] = {
            "shape": list(coo.shape),
            "row": coo.row.tolist(),
            "col": coo.col.tolist(),
            "data": coo.data.tolist(),
            "row_ids": list(model.train_matrix.row_ids),
        }
    return doc


# ---------------------------------------------------------
# 反序列化
# ---------------------------------------------------------
def _recipe_from_dict(d: Dict[str, Any]) -> Recipe:
    config = FeatureConfig(
        feature_space=d["feature_space"],
        orders=tuple(d["orders"]),
        stopwords=frozenset(d["stopwords"]),
    )
    if config.stopwords_sha256 != d.get("stopwords_sha256"):
        raise ModelFileError("stopword 清單的 SHA-256 與檔案記錄不符（檔案可能損毀）")
    v = d["vocabulary"]
    vocab = Vocabulary(terms=tuple(v["terms"]), doc_freq=tuple(v["doc_freq"]), n_docs=v["n_docs"])
    idf = None
    if d.get("idf") is not None:
        values = np.asarray(d["idf"], dtype=float)
        if len(values) != len(vocab):
            raise ModelFileError("idf 長度與詞彙表大小不一致")
        idf = IdfModel(idf=values, vocabulary=vocab, log_base=d.get("log_base") or "e")
    return Recipe(config=config, vocabulary=vocab, idf=idf)


def from_document(doc: Dict[str, Any]) -> Tuple[Any, Dict[str, Any]]:
    if not isinstance(doc, dict):
        raise ModelFileError("模型檔內容必須是 JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unknown format_version {version!r}（此版本只支援 {FORMAT_VERSION}）")

    kind = doc.get("kind")
    if kind not in MODEL_FILE_KINDS:
        raise ModelFileError(f"未知的模型種類: {kind!r}")
    metadata = doc.get("metadata", {})
    try:
        if kind == "naive":
            return NaiveModel(mean_score=float(doc["mean_score"])), metadata

        recipe = _recipe_from_dict(doc["recipe"])
        if kind in ("ols", "ridge"):
            model = LinearModel(
                intercept=float(doc["intercept"]),
                weights=np.asarray(doc["weights"], dtype=float),
                recipe=recipe,
                kind=kind,
                C=doc.get("C"),
            )
            return model, metadata

        if kind == "knn":
            t = doc["train_matrix"]
            coo = sp.coo_matrix(
                (np.asarray(t["data"], dtype=float), (np.asarray(t["row"], dtype=np.int64), np.asarray(t["col"], dtype=np.int64))),
                shape=tuple(t["shape"]),
            )
            csr = coo.tocsr()
            csr.sort_indices()
            matrix = FeatureMatrix(matrix=csr, row_ids=tuple(t["row_ids"]))
            if matrix.dim != recipe.dim:
                raise ModelFileError("K-NN 訓練矩陣欄數與詞彙表大小不一致")
            model = KnnModel(
                train_matrix=matrix,
                train_scores=np.asarray(doc["train_scores"], dtype=float),
                k=int(doc["k"]),
                recipe=recipe,
            )
            return model, metadata
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"模型檔欄位錯誤或缺漏: {e}") from None
    except (FeaturizeError, RegressionError) as e:
        # 配方 / 模型自身的驗證錯誤（例如長度不一致）也算檔案損毀
        raise ModelFileError(f"模型檔內容不一致: {e}") from None

    raise ModelFileError(f"未知的模型種類: {kind!r}")  # pragma: no cover


def save_model(path, model, metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    doc = to_document(model, metadata)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False)
    return path


def load_model(path) -> Tuple[Any, Dict[str, Any]]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ModelFileError(f"無法讀取模型檔 {path}: {e}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFileError(f"模型檔不是合法的 JSON（{path}）: {e}") from None
    return from_document(doc)
