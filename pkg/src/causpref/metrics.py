"""Top-K ranking metrics under the one-relevant-item-per-query protocol, and
structure-recovery scores against a known graph."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class EvalConfig:
    ks: list[int] = field(default_factory=lambda: [10, 20])
    pool_mode: str = "all_test_items"      # or "sampled"
    pool_size: int | None = None           # sampled mode only
    region_aware: bool = False
    seed: int = 0

    def __post_init__(self):
        self.ks = sorted({int(k) for k in self.ks})
        if not self.ks or self.ks[0] < 1:
            raise ValueError("ks must be positive integers")
        if self.pool_mode not in ("all_test_items", "sampled"):
            raise ValueError(f"unknown pool mode {self.pool_mode!r}")
        if self.pool_mode == "sampled" and not self.pool_size:
            raise ValueError("sampled pool mode needs pool_size")

    def to_dict(self) -> dict:
        return asdict(self)


def rank_items(scores, items) -> np.ndarray:
    """Items by descending score, ties broken by ascending item index."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(items)
    return items[np.lexsort((items, -scores))]


def truth_ranks(score_rows: np.ndarray, pool: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """1-based rank of each truth item within ``pool`` under the tie rule.

    ``score_rows[i]`` scores every pool item for query ``i``; ``truth[i]`` must
    be in ``pool``.
    """
    pos = np.searchsorted(pool, truth)
    s_true = score_rows[np.arange(len(truth)), pos]
    higher = (score_rows > s_true[:, None]).sum(axis=1)
    tied_before = ((score_rows == s_true[:, None]) & (pool[None, :] < truth[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def ndcg_at_k(ranks, k: int) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    return float(np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0).mean())


def recall_at_k(ranks, k: int) -> float:
    return float((np.asarray(ranks) <= k).mean())


@dataclass
class EvalResult:
    ranks: np.ndarray
    values: dict[tuple[str, int], float]
    rejected: int = 0

    def rows(self, setting: str, variant: str, seed: int) -> list[list]:
        return [[setting, variant, m, k, repr(v), seed] for (m, k), v in sorted(self.values.items())]


def evaluate(score_fn, interactions, pool_items, config: EvalConfig,
             regions=None) -> EvalResult:
    """Rank each (user, item) query's truth item among the pool.

    ``score_fn(users, items)`` returns a ``len(users) x len(items)`` score
    matrix.  Queries whose truth item is not in the pool are rejected and
    counted.
    """
    inter = np.asarray(interactions, dtype=np.int64).reshape(-1, 2)
    pool = np.unique(np.asarray(pool_items, dtype=np.int64))
    if len(inter) == 0:
        raise ValueError("evaluate needs at least one query")
    if config.pool_mode == "sampled" and config.pool_size < len(pool):
        rng = np.random.default_rng(config.seed)
        keep = np.union1d(rng.choice(pool, size=config.pool_size, replace=False), inter[:, 1])
        pool = keep
    if config.ks[-1] > len(pool):
        raise ValueError(f"K = {config.ks[-1]} exceeds the pool size {len(pool)}")
    groups = [np.arange(len(inter))]
    pools = [pool]
    if config.region_aware and regions is not None:
        reg = np.asarray(regions)
        groups, pools = [], []
        for r in np.unique(reg):
            q = np.flatnonzero(reg == r)
            groups.append(q)
            pools.append(np.intersect1d(pool, inter[q, 1]))
    ranks, rejected = [], 0
    for q, pl in zip(groups, pools):
        present = np.isin(inter[q, 1], pl)
        rejected += int((~present).sum())
        q = q[present]
        if len(q) == 0:
            continue
        users, inv = np.unique(inter[q, 0], return_inverse=True)
        block = np.asarray(score_fn(users, pl), dtype=np.float64)
        ranks.append(truth_ranks(block[inv], pl, inter[q, 1]))
    ranks = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    if len(ranks) == 0:
        raise ValueError("every query was rejected: no truth item is in the pool")
    values = {}
    for k in config.ks:
        values[("ndcg", k)] = ndcg_at_k(ranks, k)
        values[("recall", k)] = recall_at_k(ranks, k)
    return EvalResult(ranks, values, rejected)


METRIC_HEADER = ["setting", "variant", "metric", "K", "value", "seed"]


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_HEADER)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- structure

@dataclass
class StructureScore:
    precision: float
    recall: float
    f1: float
    shd: int


def structure_score(a, threshold: float, truth) -> StructureScore:
    a = np.asarray(a, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if a.shape != truth.shape:
        raise ValueError(f"adjacency {a.shape} and truth {truth.shape} differ in shape")
    pred = a > threshold
    np.fill_diagonal(pred, False)
    tp = int((pred & truth).sum())
    n_pred, n_true = int(pred.sum()), int(truth.sum())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    # each unordered pair whose edge pattern differs costs one edit
    iu = np.triu_indices(len(a), k=1)
    differ = (pred[iu] != truth[iu]) | (pred.T[iu] != truth.T[iu])
    return StructureScore(precision, recall, f1, int(differ.sum()))
