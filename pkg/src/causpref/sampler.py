"""Negative sampling: anti-preference sampling driven by the inferred preference
expectation, and a uniform baseline.

Candidate sets exclude the current positive and every known training positive
of the user.  Batched draws use one random key per (row, pool item) so that a
uniform K-subset without replacement is the K smallest keys.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError

DISTANCES = ("euclidean", "inner_product")


@dataclass
class ApsConfig:
    k: int = 20
    distance: str = "euclidean"
    delta: float = 1e-6
    hardest: bool = False       # take argmax weight instead of sampling
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def sampling_weights(preference, candidates, distance: str = "euclidean",
                     delta: float = 1e-6) -> np.ndarray:
    """Unnormalized anti-preference weight of each candidate row."""
    c = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if c.shape[0] == 0 or c.size == 0:
        raise ValueError("need at least one candidate")
    p = np.asarray(preference, dtype=np.float64)
    return _weights(p[None, :], c[None, :, :], distance, delta)[0]


def _weights(pref: np.ndarray, cand: np.ndarray, distance: str, delta: float,
             valid: np.ndarray | None = None) -> np.ndarray:
    """pref (B, q), cand (B, K, q) -> weights (B, K); invalid slots get weight 0."""
    if valid is None:
        valid = np.ones(cand.shape[:2], dtype=bool)
    if distance == "euclidean":
        w = np.sqrt(((cand - pref[:, None, :]) ** 2).sum(axis=2))
        w = np.where(valid, w, 0.0)
        flat = w.sum(axis=1) == 0.0
        if flat.any():
            # every candidate sits on the preference: fall back to uniform
            w[flat] = valid[flat].astype(np.float64)
        return w
    s = np.einsum("bkq,bq->bk", cand, pref)
    hi = np.where(valid, s, -np.inf).max(axis=1, keepdims=True)
    lo = np.where(valid, s, np.inf).min(axis=1, keepdims=True)
    w = hi - s + delta * (hi - lo + 1.0)
    return np.where(valid, w, 0.0)


def probabilities(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    return w / w.sum()


def draw(weights, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to ``weights``."""
    return int(_draw_rows(np.atleast_2d(np.asarray(weights, dtype=np.float64)), rng)[0])


def _draw_rows(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(w, axis=1)
    r = rng.random(len(w)) * cdf[:, -1]
    idx = (cdf <= r[:, None]).sum(axis=1)
    # guard against r landing on the final edge through rounding
    return np.minimum(idx, (w > 0).cumsum(axis=1).argmax(axis=1))


class NegativePool:
    """Item pool plus each user's known positives, as pool positions."""

    def __init__(self, pool_items, positives: dict[int, np.ndarray] | None = None):
        self.items = np.asarray(pool_items, dtype=np.int64)
        if len(self.items) == 0:
            raise DataError("negative pool is empty")
        self.position = {int(v): i for i, v in enumerate(self.items.tolist())}
        self.known: dict[int, np.ndarray] = {}
        for u, vs in (positives or {}).items():
            pos = [self.position[v] for v in np.asarray(vs).tolist() if v in self.position]
            self.known[int(u)] = np.asarray(sorted(set(pos)), dtype=np.int64)
        self._warned = False

    @classmethod
    def from_interactions(cls, pool_items, interactions) -> "NegativePool":
        inter = np.asarray(interactions, dtype=np.int64).reshape(-1, 2)
        order = np.argsort(inter[:, 0], kind="stable")
        users, starts = np.unique(inter[order, 0], return_index=True)
        groups = np.split(inter[order, 1], starts[1:])
        return cls(pool_items, dict(zip(users.tolist(), groups)))

    def _keys(self, users, positives, rng) -> tuple[np.ndarray, np.ndarray]:
        users = np.asarray(users, dtype=np.int64)
        positives = np.asarray(positives, dtype=np.int64)
        keys = rng.random((len(users), len(self.items)))
        for row, (u, v) in enumerate(zip(users.tolist(), positives.tolist())):
            known = self.known.get(u)
            if known is not None and len(known):
                keys[row, known] = np.inf
            p = self.position.get(v)
            if p is not None:
                keys[row, p] = np.inf
        allowed = np.isfinite(keys).sum(axis=1)
        if (allowed == 0).any():
            u = int(users[np.argmin(allowed)])
            raise DataError(f"no negative candidates left for user {u}: "
                            "every pool item is a known positive")
        return keys, allowed

    def candidates(self, users, positives, k: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """(pool positions (B, k), valid mask) of a uniform k-subset per row."""
        keys, allowed = self._keys(users, positives, rng)
        if k > allowed.min() and not self._warned:
            warnings.warn(f"K = {k} exceeds the {int(allowed.min())} available candidates; clamping")
            self._warned = True
        k = min(k, keys.shape[1])
        part = np.argpartition(keys, k - 1, axis=1)[:, :k] if k < keys.shape[1] else \
            np.tile(np.arange(keys.shape[1]), (len(keys), 1))
        # sort by key so the candidate order is itself uniform and deterministic
        part = np.take_along_axis(part, np.argsort(np.take_along_axis(keys, part, 1), axis=1), 1)
        valid = np.isfinite(np.take_along_axis(keys, part, 1))
        return part, valid


def aps_batch(preferences, users, positives, pool: NegativePool, item_features,
              config: ApsConfig, rng: np.random.Generator) -> np.ndarray:
    """One anti-preference negative item index per row."""
    pref = np.atleast_2d(np.asarray(preferences, dtype=np.float64))
    part, valid = pool.candidates(users, positives, config.k, rng)
    cand = np.asarray(item_features)[pool.items[part]]
    w = _weights(pref, cand, config.distance, config.delta, valid)
    if config.hardest:
        pick = np.where(valid, w, -np.inf).argmax(axis=1)
    else:
        pick = _draw_rows(w, rng)
    return pool.items[np.take_along_axis(part, pick[:, None], 1)[:, 0]]


def aps_sample(dag_params, user_features, user: int, positive: int, pool: NegativePool,
               item_features, config: ApsConfig, rng: np.random.Generator) -> int:
    """Anti-preference negative for one (user, positive) pair."""
    from .dag import infer_preference

    pref = infer_preference(dag_params, np.asarray(user_features, dtype=np.float64))
    return int(aps_batch(pref[None, :], [user], [positive], pool, item_features, config, rng)[0])


def random_batch(users, positives, pool: NegativePool, rng: np.random.Generator) -> np.ndarray:
    """Uniform negative per row over the pool minus known positives."""
    keys, _ = pool._keys(users, positives, rng)
    return pool.items[keys.argmin(axis=1)]


def random_sample(user: int, positive: int, pool: NegativePool, rng: np.random.Generator) -> int:
    return int(random_batch([user], [positive], pool, rng)[0])
