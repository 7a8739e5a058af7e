"""Out-of-distribution train/validation/test splits over interaction indices."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import EncodedDataset
from .errors import DataError

KINDS = ("iid", "user_feature_bias", "item_feature_bias", "user_degree_bias",
         "item_degree_bias", "region_bias")
DEFAULT_PROPORTIONS = (8.0 / 11.0, 1.0 / 11.0, 2.0 / 11.0)


@dataclass
class SplitSpec:
    kind: str = "iid"
    train_ratio: tuple[float, float] = (0.8, 0.2)   # cluster A:B share in train/val
    test_ratio: tuple[float, float] = (0.2, 0.8)
    gamma: float = 1.0                              # degree-bias skew
    train_region: str | None = None
    test_region: str | None = None
    proportions: tuple[float, float, float] = DEFAULT_PROPORTIONS
    inductive: bool = True
    n_total: int | None = None                      # feature bias only; None = largest feasible
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown split kind {self.kind!r}; expected one of {KINDS}")
        self.train_ratio = tuple(float(r) for r in self.train_ratio)
        self.test_ratio = tuple(float(r) for r in self.test_ratio)
        self.proportions = tuple(float(p) for p in self.proportions)
        for name in ("train_ratio", "test_ratio"):
            r = getattr(self, name)
            if len(r) != 2 or min(r) < 0 or abs(sum(r) - 1.0) > 1e-9:
                raise DataError(f"{name} {r} must be two nonnegative reals summing to 1")
        p = self.proportions
        if len(p) != 3 or min(p) <= 0 or abs(sum(p) - 1.0) > 1e-9:
            raise DataError(f"proportions {p} must be three positive reals summing to 1")
        if self.gamma < 0:
            raise DataError("gamma must be >= 0")
        if self.kind == "region_bias" and (self.train_region is None or self.test_region is None):
            raise DataError("region_bias needs train_region and test_region")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_ratio"] = list(self.train_ratio)
        d["test_ratio"] = list(self.test_ratio)
        d["proportions"] = list(self.proportions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown split keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    spec: SplitSpec = field(default_factory=SplitSpec)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "train": self.train.tolist(),
                "val": self.val.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        try:
            return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("train", "val", "test")),
                       spec=SplitSpec.from_dict(d["spec"]))
        except KeyError as e:
            raise DataError(f"split manifest missing field {e}") from None


def save_split(split: Split, path) -> None:
    Path(path).write_text(json.dumps(split.to_dict()))


def load_split(path) -> Split:
    try:
        return Split.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt split manifest {path}: {e}") from None


# ---------------------------------------------------------------- clustering

def two_means(x, seed: int = 0, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """2-means labels (0 = A, 1 = B); ties in assignment go to A."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if np.all(x == x[0]):
        warnings.warn("two_means: all rows identical, labelling everything A")
        return np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    probes = x[rng.choice(n, size=min(64, n), replace=False)]
    sq = ((probes[:, None, :] - probes[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(np.argmax(sq), sq.shape)
    ca, cb = probes[i].copy(), probes[j].copy()
    if sq[i, j] == 0.0:
        cb = x[np.argmax(((x - ca) ** 2).sum(axis=1))].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        da = ((x - ca) ** 2).sum(axis=1)
        db = ((x - cb) ** 2).sum(axis=1)
        labels = (db < da).astype(np.int64)
        na = x[labels == 0].mean(axis=0) if (labels == 0).any() else ca
        nb = x[labels == 1].mean(axis=0) if (labels == 1).any() else cb
        shift = max(np.abs(na - ca).max(), np.abs(nb - cb).max())
        ca, cb = na, nb
        if shift < tol:
            break
    return labels


# ---------------------------------------------------------------- split kinds

def _cut_trainval(idx: np.ndarray, spec: SplitSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    idx = rng.permutation(idx)
    p_tr, p_va, _ = spec.proportions
    n_tr = int(round(len(idx) * p_tr / (p_tr + p_va)))
    return np.sort(idx[:n_tr]), np.sort(idx[n_tr:])


def _type_labels(ds: EncodedDataset, spec: SplitSpec) -> np.ndarray:
    if spec.kind == "user_feature_bias":
        return two_means(ds.user_features, seed=spec.seed)[ds.interactions[:, 0]]
    return two_means(ds.item_features, seed=spec.seed)[ds.interactions[:, 1]]


def _feature_max_total(n_a: int, n_b: int, spec: SplitSpec, train_ratio) -> int:
    """Largest interaction total whose A/B demands fit the cluster sizes."""
    _, _, p_te = spec.proportions
    p_tv = 1.0 - p_te
    need_a = p_tv * train_ratio[0] + p_te * spec.test_ratio[0]
    need_b = p_tv * train_ratio[1] + p_te * spec.test_ratio[1]
    caps = []
    if need_a > 0:
        caps.append(n_a / need_a)
    if need_b > 0:
        caps.append(n_b / need_b)
    return int(np.floor(min(caps) + 1e-9))


def _feature_draw(labels, spec: SplitSpec, train_ratio, total: int, rng) -> tuple[np.ndarray, ...]:
    _, _, p_te = spec.proportions
    pool_a = rng.permutation(np.flatnonzero(labels == 0))
    pool_b = rng.permutation(np.flatnonzero(labels == 1))
    n_test = int(round(total * p_te))
    te_a = int(round(n_test * spec.test_ratio[0]))
    te_b = n_test - te_a
    n_tv = total - n_test
    tv_a = int(round(n_tv * train_ratio[0]))
    tv_b = n_tv - tv_a
    if te_a + tv_a > len(pool_a) or te_b + tv_b > len(pool_b):
        raise DataError(f"requested mix needs ({te_a + tv_a}, {te_b + tv_b}) interactions of types "
                        f"(A, B) but only ({len(pool_a)}, {len(pool_b)}) exist")
    # test drawn first so it does not depend on the train ratio
    test = np.concatenate([pool_a[:te_a], pool_b[:te_b]])
    trainval = np.concatenate([pool_a[te_a:te_a + tv_a], pool_b[te_b:te_b + tv_b]])
    return test, trainval


def _feature_total(labels, spec: SplitSpec, ratios) -> int:
    n_a, n_b = int((labels == 0).sum()), int((labels == 1).sum())
    t_max = min(_feature_max_total(n_a, n_b, spec, r) for r in ratios)
    if spec.n_total is not None:
        if spec.n_total > t_max:
            raise DataError(f"n_total {spec.n_total} infeasible for the requested ratios; "
                            f"achievable maximum is {t_max}")
        return spec.n_total
    return t_max


def _degree_split(ds: EncodedDataset, spec: SplitSpec, rng):
    col = 0 if spec.kind == "user_degree_bias" else 1
    ent = ds.interactions[:, col]
    deg = np.bincount(ent)[ent].astype(np.float64)
    w = deg ** (-spec.gamma)
    n = ds.n_interactions
    n_test = int(round(n * spec.proportions[2]))
    test = rng.choice(n, size=n_test, replace=False, p=w / w.sum())
    rest = np.setdiff1d(np.arange(n), test)
    return test, rest


def _region_split(ds: EncodedDataset, spec: SplitSpec, rng):
    if ds.regions is None:
        raise DataError("region_bias split needs region labels on the dataset")
    reg = np.asarray(ds.regions)
    tv = np.flatnonzero(reg == spec.train_region)
    te = np.flatnonzero(reg == spec.test_region)
    if len(tv) == 0 or len(te) == 0:
        raise DataError(f"regions {spec.train_region!r}/{spec.test_region!r} "
                        f"have {len(tv)}/{len(te)} interactions")
    # subsample the larger side so trainval:test follows the proportions
    p_te = spec.proportions[2]
    want_te = int(round(len(tv) * p_te / (1.0 - p_te)))
    if want_te < len(te):
        te = np.sort(rng.choice(te, size=max(want_te, 1), replace=False))
    else:
        want_tv = int(round(len(te) * (1.0 - p_te) / p_te))
        if want_tv < len(tv):
            tv = np.sort(rng.choice(tv, size=want_tv, replace=False))
    return te, tv


def _finish(ds: EncodedDataset, spec: SplitSpec, test, trainval, rng) -> Split:
    train, val = _cut_trainval(np.asarray(trainval, dtype=np.int64), spec, rng)
    test = np.sort(np.asarray(test, dtype=np.int64))
    if not spec.inductive:
        seen_u = set(ds.interactions[train, 0].tolist())
        seen_v = set(ds.interactions[train, 1].tolist())
        keep = [i for i in test.tolist()
                if ds.interactions[i, 0] in seen_u and ds.interactions[i, 1] in seen_v]
        test = np.asarray(keep, dtype=np.int64)
    return Split(train, val, test, spec)


def make_split(ds: EncodedDataset, spec: SplitSpec) -> Split:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "iid":
        perm = rng.permutation(ds.n_interactions)
        n_test = int(round(ds.n_interactions * spec.proportions[2]))
        return _finish(ds, spec, perm[:n_test], perm[n_test:], rng)
    if spec.kind in ("user_feature_bias", "item_feature_bias"):
        labels = _type_labels(ds, spec)
        total = _feature_total(labels, spec, [spec.train_ratio])
        test, tv = _feature_draw(labels, spec, spec.train_ratio, total, rng)
        return _finish(ds, spec, test, tv, rng)
    if spec.kind in ("user_degree_bias", "item_degree_bias"):
        test, tv = _degree_split(ds, spec, rng)
        return _finish(ds, spec, test, tv, rng)
    test, tv = _region_split(ds, spec, rng)
    return _finish(ds, spec, test, tv, rng)


def ratio_sweep(ds: EncodedDataset, base: SplitSpec, train_ratios) -> list[Split]:
    """One feature-bias split per train ratio, all sharing one test set."""
    if base.kind not in ("user_feature_bias", "item_feature_bias"):
        raise DataError("ratio_sweep needs a feature-bias base spec")
    ratios = [tuple(float(r) for r in ratio) for ratio in train_ratios]
    if not ratios:
        return []
    labels = _type_labels(ds, base)
    total = _feature_total(labels, base, ratios)
    out = []
    for r in ratios:
        spec = SplitSpec(**{**base.to_dict(), "train_ratio": r})
        rng = np.random.default_rng(spec.seed)
        test, tv = _feature_draw(labels, spec, r, total, rng)
        out.append(_finish(ds, spec, test, tv, rng))
    return out


def type_mix(labels: np.ndarray, idx: np.ndarray) -> float:
    """Share of cluster A among the given interactions."""
    return float((labels[idx] == 0).mean()) if len(idx) else float("nan")
