import json

import numpy as np
import pytest

from corpus import Review

# 人為植入的情緒詞與其分數效果
PLANTED_EFFECTS = {
    "syrupy": 4.0,
    "buoyant": 3.5,
    "juicy": 3.0,
    "plush": 2.5,
    "currant": 2.0,
    "velvety": 1.5,
    "floral": 1.0,
    "crisp": 0.5,
    "papery": -0.5,
    "woody": -1.0,
    "astringent": -1.5,
    "leanish": -2.0,
    "muted": -2.5,
    "meaty": -3.0,
    "salty": -3.5,
    "ashy": -4.0,
}
FILLERS = ("aroma", "cup", "roast")
BASE_SCORE = 88.0


def make_planted_corpus(n: int, seed: int = 7, noise: float = 1.0):
    """每篇兩個植入詞 + 一個中性詞，分數 = 88 + 效果總和 + N(0, noise²)。"""
    rng = np.random.Generator(np.random.PCG64(seed))
    planted = list(PLANTED_EFFECTS)
    reviews = []
    for i in range(n):
        a, b = rng.choice(len(planted), size=2, replace=False)
        filler = FILLERS[rng.integers(len(FILLERS))]
        w1, w2 = planted[a], planted[b]
        text = f"{w1.capitalize()} and {w2} with a {filler}."
        score = BASE_SCORE + PLANTED_EFFECTS[w1] + PLANTED_EFFECTS[w2]
        if noise:
            score += rng.normal(0.0, noise)
        reviews.append(Review(id=str(i + 1), text=text, score=float(score)))
    return reviews


@pytest.fixture
def planted_corpus():
    return make_planted_corpus


@pytest.fixture
def stopwords():
    return frozenset({"a", "and", "of", "the", "with"})


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(records, name="reviews.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return path

    return _write


@pytest.fixture
def write_reviews(write_jsonl):
    def _write(reviews, name="reviews.jsonl"):
        return write_jsonl([{"id": r.id, "text": r.text, "score": r.score} for r in reviews], name)

    return _write
