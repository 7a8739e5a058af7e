"""Synthetic implicit-feedback data generated from a known preference DAG.

Users are drawn from a linear SEM over the user features.  Each interaction
propagates a user through the item part of the graph (with ``noise_std``
Gaussian noise at every item node) to get a target item-feature vector, and the
positive item is the pool item nearest to that target.  The pool items are
themselves SEM draws for "virtual" users, so item features obey the item->item
edges of the graph.

Shifted users (the ``"test"`` region) have ``user_shift`` added to their
features; the item mechanism is unchanged, so only the user distribution moves.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import EncodedDataset, FeatureSchema
from .errors import DataError

TRAIN_REGION = "train"
TEST_REGION = "test"


@dataclass
class SyntheticSpec:
    q_u: int = 5
    q_v: int = 5
    n_users: int = 2000
    n_items: int = 500
    n_interactions: int = 2000
    edge_density: float = 0.3
    noise_std: float = 0.1
    mechanism: str = "linear"
    user_shift: list[float] | None = None
    shifted_fraction: float = 2.0 / 11.0   # share of interactions from shifted users
    weight_range: tuple[float, float] = (0.5, 2.0)
    seed: int = 0

    def __post_init__(self):
        if self.q_u < 1 or self.q_v < 1:
            raise DataError("q_u and q_v must be >= 1")
        if not 0.0 < self.edge_density < 1.0:
            raise DataError(f"edge_density {self.edge_density} must lie in (0, 1); "
                            "item features need a parent")
        if self.noise_std <= 0:
            raise DataError("noise_std must be positive")
        if self.mechanism != "linear":
            raise DataError(f"unsupported mechanism {self.mechanism!r}")
        if self.user_shift is None:
            self.user_shift = [0.0] * self.q_u
        self.user_shift = [float(s) for s in self.user_shift]
        if len(self.user_shift) != self.q_u:
            raise DataError(f"user_shift has length {len(self.user_shift)}, expected q_u = {self.q_u}")
        self.weight_range = tuple(float(w) for w in self.weight_range)
        if min(self.n_users, self.n_items, self.n_interactions) < 2:
            raise DataError("need at least 2 users, items and interactions")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight_range"] = list(self.weight_range)
        return d


@dataclass
class GroundTruthGraph:
    adjacency: np.ndarray          # bool D x D, entry (k, d) = edge k -> d
    q_u: int
    weights: np.ndarray | None = field(default=None, repr=False)
    order: list[int] | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        return [(int(k), int(d)) for k, d in zip(*np.nonzero(self.adjacency))]


def is_acyclic(adj: np.ndarray) -> bool:
    a = np.asarray(adj, dtype=bool).copy()
    remaining = np.ones(len(a), dtype=bool)
    while remaining.any():
        indeg = a[remaining][:, remaining].sum(axis=0)
        roots = np.flatnonzero(remaining)[indeg == 0]
        if len(roots) == 0:
            return False
        remaining[roots] = False
    return True


def validate_graph(adj: np.ndarray, q_u: int) -> list[str]:
    """Return the violated structure rules (empty when the graph is valid)."""
    adj = np.asarray(adj, dtype=bool)
    problems = []
    if adj[q_u:, :q_u].any():
        problems.append("item -> user edge present")
    if q_u < len(adj) and (adj[:, q_u:].sum(axis=0) == 0).any():
        problems.append("item feature without parent")
    if not is_acyclic(adj):
        problems.append("graph has a cycle")
    return problems


def sample_graph(spec: SyntheticSpec, rng: np.random.Generator) -> GroundTruthGraph:
    q_u, q_v = spec.q_u, spec.q_v
    d = q_u + q_v
    order = list(rng.permutation(q_u)) + list(range(q_u, d))
    adj = np.zeros((d, d), dtype=bool)
    for j in range(1, d):
        for i in range(j):
            if rng.random() < spec.edge_density:
                adj[order[i], order[j]] = True
    for v in range(q_u, d):
        if not adj[:, v].any():
            adj[int(rng.integers(v)), v] = True
    lo, hi = spec.weight_range
    w = rng.uniform(lo, hi, size=(d, d)) * rng.choice([-1.0, 1.0], size=(d, d))
    w = np.where(adj, w, 0.0)
    g = GroundTruthGraph(adj, q_u, w, order)
    assert not validate_graph(adj, q_u)
    return g


def _user_sem(g: GroundTruthGraph, n: int, rng) -> np.ndarray:
    q_u = g.q_u
    x = rng.standard_normal((n, q_u))
    for j in g.order[:q_u]:
        x[:, j] += x @ g.weights[:q_u, j]
    return x


def _item_sem(g: GroundTruthGraph, users: np.ndarray, noise_std: float, rng) -> np.ndarray:
    q_u = g.q_u
    x = np.concatenate([users, np.zeros((len(users), g.d - q_u))], axis=1)
    noise = rng.standard_normal((len(users), g.d - q_u)) * noise_std
    for j in range(q_u, g.d):
        x[:, j] = x @ g.weights[:, j] + noise[:, j - q_u]
    return x[:, q_u:]


def _spread(n_users: int, n: int, rng) -> np.ndarray:
    # every user gets floor(n / n_users) or one more interaction
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    reps = -(-n // n_users)
    return rng.permutation(np.tile(np.arange(n_users), reps)[:n]) if n <= n_users else \
        rng.permutation(np.concatenate([np.tile(np.arange(n_users), n // n_users),
                                        rng.permutation(n_users)[:n % n_users]]))


def _nearest(targets: np.ndarray, pool: np.ndarray) -> np.ndarray:
    out = np.empty(len(targets), dtype=np.int64)
    sq_pool = (pool ** 2).sum(axis=1)
    for s in range(0, len(targets), 1024):
        t = targets[s:s + 1024]
        dist = sq_pool[None, :] - 2.0 * t @ pool.T
        out[s:s + 1024] = np.argmin(dist, axis=1)
    return out


def synth_generate(spec: SyntheticSpec) -> tuple[EncodedDataset, GroundTruthGraph]:
    rng = np.random.default_rng(spec.seed)
    g = sample_graph(spec, rng)
    shift = np.asarray(spec.user_shift)

    n_shift_users = int(round(spec.n_users * spec.shifted_fraction))
    n_base_users = spec.n_users - n_shift_users
    users = _user_sem(g, spec.n_users, rng)
    # shift is expressed in units of each feature's standard deviation
    scale = users[:n_base_users].std(axis=0) if n_base_users > 1 else np.ones(spec.q_u)
    shift = shift * scale
    users[n_base_users:] += shift

    n_shift_items = int(round(spec.n_items * spec.shifted_fraction))
    virtual = _user_sem(g, spec.n_items, rng)
    virtual[spec.n_items - n_shift_items:] += shift
    items = _item_sem(g, virtual, spec.noise_std, rng)

    n_shift = int(round(spec.n_interactions * spec.shifted_fraction))
    if n_shift and not n_shift_users:
        raise DataError("shifted interactions requested but no shifted users")
    who = np.concatenate([
        _spread(n_base_users, spec.n_interactions - n_shift, rng),
        n_base_users + _spread(n_shift_users, n_shift, rng),
    ])
    targets = _item_sem(g, users[who], spec.noise_std, rng)
    pos = _nearest(targets, items)

    pairs: dict[tuple[int, int], str] = {}
    for i, (u, v) in enumerate(zip(who.tolist(), pos.tolist())):
        pairs.setdefault((u, v), TRAIN_REGION if i < spec.n_interactions - n_shift else TEST_REGION)
    inter = np.array(list(pairs), dtype=np.int64)
    regions = tuple(pairs.values())

    # z-score with statistics of entities seen in the unshifted region
    base = inter[np.array([r == TRAIN_REGION for r in regions])]
    fit_u = np.unique(base[:, 0])
    fit_v = np.unique(base[:, 1])
    u_mean, u_std = users[fit_u].mean(axis=0), users[fit_u].std(axis=0)
    v_mean, v_std = items[fit_v].mean(axis=0), items[fit_v].std(axis=0)
    u_std[u_std == 0] = 1.0
    v_std[v_std == 0] = 1.0
    uf = (users - u_mean) / u_std
    vf = (items - v_mean) / v_std

    u_names = [f"u{i}" for i in range(spec.q_u)]
    v_names = [f"v{i}" for i in range(spec.q_v)]
    ds = EncodedDataset(
        user_features=uf, item_features=vf, interactions=inter,
        user_schema=FeatureSchema.numeric(u_names), item_schema=FeatureSchema.numeric(v_names),
        user_ids=tuple(f"user{i:06d}" for i in range(spec.n_users)),
        item_ids=tuple(f"item{i:06d}" for i in range(spec.n_items)),
        regions=regions,
        normalization_stats={
            "user": {n: [float(m), float(s)] for n, m, s in zip(u_names, u_mean, u_std)},
            "item": {n: [float(m), float(s)] for n, m, s in zip(v_names, v_mean, v_std)},
        },
    )
    return ds, g
