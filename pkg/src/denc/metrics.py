"""Rating error and top-K ranking metrics.

Averages use correctly rounded sums (``math.fsum``) so results do not depend
on summation order.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

DEFAULT_KS = (10, 15, 20, 25, 30, 35, 40)
RELEVANCE_THRESHOLD = 3.5


def _aligned(preds, truths):
    p = np.asarray(preds, dtype=float).ravel()
    t = np.asarray(truths, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} truths")
    if p.size == 0:
        raise ValueError("empty input")
    return p, t


def mae(preds, truths) -> float:
    p, t = _aligned(preds, truths)
    return math.fsum(np.abs(p - t).tolist()) / p.size


def rmse(preds, truths) -> float:
    p, t = _aligned(preds, truths)
    return math.sqrt(math.fsum(((p - t) ** 2).tolist()) / p.size)


def precision_recall_at_k(ranked: Mapping[int, Sequence[int]],
                          relevant: Mapping[int, Set[int]], k: int) -> Tuple[float, float]:
    """Macro-averaged P@K and R@K.

    Precision averages over every user in ``ranked``; recall skips users whose
    relevant set is empty. Returns 0.0 for an empty average.
    """
    if k <= 0:
        raise ValueError("K must be positive")
    precisions, recalls = [], []
    for u, items in ranked.items():
        rel = relevant.get(u, set())
        hits = len(set(items[:k]) & rel)
        precisions.append(hits / k)
        if rel:
            recalls.append(hits / len(rel))
    p = math.fsum(precisions) / len(precisions) if precisions else 0.0
    r = math.fsum(recalls) / len(recalls) if recalls else 0.0
    return p, r


def top_k_items(scores: np.ndarray, exclude: Optional[np.ndarray], k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, ties broken by ascending item index.

    ``exclude`` is a boolean mask of the same shape as ``scores``.
    """
    s = np.array(scores, dtype=float, copy=True)
    if exclude is not None:
        s[exclude] = -np.inf
    order = np.argsort(-s, kind="stable")
    return order[s[order] > -np.inf][:k]


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    ks: Tuple[int, ...] = DEFAULT_KS
    precision_at_k: Dict[int, float] = field(default_factory=dict)
    recall_at_k: Dict[int, float] = field(default_factory=dict)
    relevance_threshold: float = RELEVANCE_THRESHOLD
    n_pairs: int = 0
    n_ranked_users: int = 0

    def to_dict(self):
        d = asdict(self)
        d["ks"] = list(self.ks)
        d["precision_at_k"] = {str(k): v for k, v in self.precision_at_k.items()}
        d["recall_at_k"] = {str(k): v for k, v in self.recall_at_k.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def ranking_metrics(scores: np.ndarray, seen_keys: Iterable[int], test_users, test_items,
                    test_ratings, ks=DEFAULT_KS, threshold=RELEVANCE_THRESHOLD):
    """P@K / R@K from a dense score table.

    Candidates for user ``u`` are all items not in ``seen_keys`` (flat
    ``u * n + i`` ids of cells used for fitting). Only users with at least one
    test cell are ranked; a test cell is relevant when its rating is at least
    ``threshold``.
    """
    m, n = scores.shape
    seen = np.zeros(m * n, dtype=bool)
    seen[np.asarray(list(seen_keys) if not isinstance(seen_keys, np.ndarray) else seen_keys,
                    dtype=np.int64)] = True
    seen = seen.reshape(m, n)
    test_users = np.asarray(test_users, dtype=np.int64)
    test_items = np.asarray(test_items, dtype=np.int64)
    test_ratings = np.asarray(test_ratings, dtype=float)
    relevant: Dict[int, Set[int]] = {}
    for u in np.unique(test_users).tolist():
        relevant[u] = set()
    for u, i, r in zip(test_users.tolist(), test_items.tolist(), test_ratings.tolist()):
        if r >= threshold:
            relevant[u].add(i)
    kmax = max(ks)
    ranked = {u: top_k_items(scores[u], seen[u], kmax).tolist() for u in relevant}
    prec, rec = {}, {}
    for k in ks:
        prec[k], rec[k] = precision_recall_at_k(ranked, relevant, k)
    return prec, rec, len(ranked)
