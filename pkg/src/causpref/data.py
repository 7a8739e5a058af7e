"""Raw feature-table ingestion and the encoded dataset file format."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

FORMAT_VERSION = "v1"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise DataError(f"categorical column {self.name!r} needs at least one category")

    @property
    def width(self) -> int:
        return 1 if self.kind == "numeric" else len(self.categories)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Column":
        return cls(d["name"], d["kind"], tuple(str(c) for c in d.get("categories", ())))


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate column names in schema: {names}")
        if not self.columns:
            raise DataError("schema needs at least one column")

    @property
    def width(self) -> int:
        return sum(c.width for c in self.columns)

    def feature_names(self) -> list[str]:
        """Names of the encoded columns, ``name=category`` for one-hot slots."""
        out = []
        for c in self.columns:
            if c.kind == "numeric":
                out.append(c.name)
            else:
                out.extend(f"{c.name}={cat}" for cat in c.categories)
        return out

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.columns]

    @classmethod
    def from_list(cls, cols: list[dict]) -> "FeatureSchema":
        return cls(tuple(Column.from_dict(c) for c in cols))

    @classmethod
    def numeric(cls, names: list[str]) -> "FeatureSchema":
        return cls(tuple(Column(n, "numeric") for n in names))


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    """Dense user/item feature tables plus the observed positive pairs.

    ``interactions`` is an ``(n, 2)`` int array of (user index, item index);
    ``regions`` is an optional per-interaction label list.
    """

    user_features: np.ndarray
    item_features: np.ndarray
    interactions: np.ndarray
    user_schema: FeatureSchema
    item_schema: FeatureSchema
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    regions: tuple[str, ...] | None = None
    normalization_stats: dict = field(default_factory=dict)
    unseen_categories: int = 0

    def __post_init__(self):
        nu, qu = self.user_features.shape
        nv, qv = self.item_features.shape
        if qu < 1 or qv < 1:
            raise DataError("feature tables need at least one encoded column")
        if qu != self.user_schema.width or qv != self.item_schema.width:
            raise DataError(f"feature widths ({qu}, {qv}) disagree with schemas "
                            f"({self.user_schema.width}, {self.item_schema.width})")
        inter = self.interactions
        if inter.ndim != 2 or inter.shape[1] != 2:
            raise DataError(f"interactions must be (n, 2), got {inter.shape}")
        if len(inter) and (inter[:, 0].min() < 0 or inter[:, 0].max() >= nu
                           or inter[:, 1].min() < 0 or inter[:, 1].max() >= nv):
            raise DataError("interaction index out of range")
        if self.regions is not None and len(self.regions) != len(inter):
            raise DataError("regions must label every interaction")
        for arr in (self.user_features, self.item_features, self.interactions):
            arr.setflags(write=False)

    @property
    def q_u(self) -> int:
        return self.user_features.shape[1]

    @property
    def q_v(self) -> int:
        return self.item_features.shape[1]

    @property
    def n_interactions(self) -> int:
        return len(self.interactions)

    def feature_names(self) -> list[str]:
        return ([f"user:{n}" for n in self.user_schema.feature_names()]
                + [f"item:{n}" for n in self.item_schema.feature_names()])

    def schema_hash(self) -> str:
        blob = json.dumps({"user": self.user_schema.to_list(), "item": self.item_schema.to_list()},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def rows(self, idx) -> np.ndarray:
        """``[u | v]`` concatenated features for the given interaction indices."""
        pairs = self.interactions[np.asarray(idx, dtype=np.int64)]
        return np.concatenate([self.user_features[pairs[:, 0]], self.item_features[pairs[:, 1]]], axis=1)


# ---------------------------------------------------------------- encoding

def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return [h.strip() for h in header], rows


def _coerce_schema(schema) -> tuple[FeatureSchema, FeatureSchema]:
    if isinstance(schema, (str, Path)):
        schema = json.loads(Path(schema).read_text(encoding="utf-8"))
    if isinstance(schema, dict):
        return FeatureSchema.from_list(schema["user"]), FeatureSchema.from_list(schema["item"])
    return schema


def _encode_table(header, rows, schema: FeatureSchema, fit_mask, path):
    if header[0] != "id":
        raise DataError(f"{path}: first column must be 'id', got {header[0]!r}")
    cols = header[1:]
    known = {c.name for c in schema.columns}
    if set(cols) != known:
        raise DataError(f"{path}: columns {sorted(set(cols) ^ known)} not matched between file and schema")
    pos = {name: i + 1 for i, name in enumerate(cols)}
    order = sorted(range(len(rows)), key=lambda i: rows[i][0])
    ids = [rows[i][0] for i in order]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    n = len(ids)
    out = np.zeros((n, schema.width))
    stats = {}
    unseen = 0
    offset = 0
    for col in schema.columns:
        raw = [rows[i][pos[col.name]] for i in order]
        if col.kind == "numeric":
            try:
                vals = np.array([float(x) for x in raw])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric value in column {col.name!r}: {exc}") from None
            fit = vals[fit_mask(ids)] if fit_mask is not None else vals
            mean = float(fit.mean()) if len(fit) else 0.0
            std = float(fit.std()) if len(fit) else 1.0
            if std == 0.0:
                std = 1.0
            stats[col.name] = [mean, std]
            out[:, offset] = (vals - mean) / std
        else:
            slot = {c: j for j, c in enumerate(col.categories)}
            for r, v in enumerate(raw):
                j = slot.get(v)
                if j is None:
                    unseen += 1
                else:
                    out[r, offset + j] = 1.0
        offset += col.width
    return ids, out, stats, unseen


def load_raw(users_path, items_path, interactions_path, schema, fit_region: str | None = None
             ) -> EncodedDataset:
    """Read ``users.csv``/``items.csv``/``interactions.csv`` and encode them.

    Categorical columns become one-hot blocks; numeric columns are z-scored.
    When ``fit_region`` is given, normalisation statistics come only from
    users/items that appear in interactions of that region.
    """
    user_schema, item_schema = _coerce_schema(schema)
    uh, urows = _read_table(Path(users_path))
    ih, irows = _read_table(Path(items_path))
    xh, xrows = _read_table(Path(interactions_path))
    if xh[:2] != ["user_id", "item_id"]:
        raise DataError(f"{interactions_path}: header must start with user_id,item_id")
    has_region = len(xh) > 2 and xh[2] == "region"

    user_known = {r[0] for r in urows}
    item_known = {r[0] for r in irows}
    for r in xrows:
        if r[0] not in user_known:
            raise DataError(f"unknown user id {r[0]!r} in {interactions_path}")
        if r[1] not in item_known:
            raise DataError(f"unknown item id {r[1]!r} in {interactions_path}")

    user_fit = item_fit = None
    if fit_region is not None:
        if not has_region:
            raise DataError("fit_region requested but interactions carry no region column")
        fu = {r[0] for r in xrows if r[2] == fit_region}
        fi = {r[1] for r in xrows if r[2] == fit_region}
        user_fit = lambda ids: np.array([i in fu for i in ids], dtype=bool)  # noqa: E731
        item_fit = lambda ids: np.array([i in fi for i in ids], dtype=bool)  # noqa: E731

    user_ids, U, ustats, u_unseen = _encode_table(uh, urows, user_schema, user_fit, users_path)
    item_ids, V, istats, i_unseen = _encode_table(ih, irows, item_schema, item_fit, items_path)
    unseen = u_unseen + i_unseen
    if unseen:
        logger.warning("%d categorical values outside the schema were encoded as all-zero", unseen)

    uidx = {u: i for i, u in enumerate(user_ids)}
    iidx = {v: i for i, v in enumerate(item_ids)}
    seen: dict[tuple[int, int], int] = {}
    regions = []
    for r in xrows:
        key = (uidx[r[0]], iidx[r[1]])
        if key in seen:
            continue
        seen[key] = len(seen)
        if has_region:
            regions.append(r[2])
    pairs = np.array(list(seen), dtype=np.int64).reshape(-1, 2)
    return EncodedDataset(
        user_features=U, item_features=V, interactions=pairs,
        user_schema=user_schema, item_schema=item_schema,
        user_ids=tuple(user_ids), item_ids=tuple(item_ids),
        regions=tuple(regions) if has_region else None,
        normalization_stats={"user": ustats, "item": istats},
        unseen_categories=unseen,
    )


# ---------------------------------------------------------------- persistence

def dataset_to_dict(ds: EncodedDataset) -> dict:
    return {
        "version": FORMAT_VERSION,
        "schemas": {"user": ds.user_schema.to_list(), "item": ds.item_schema.to_list()},
        "normalization_stats": ds.normalization_stats,
        "user_ids": list(ds.user_ids),
        "item_ids": list(ds.item_ids),
        "user_features": ds.user_features.tolist(),
        "item_features": ds.item_features.tolist(),
        "interactions": ds.interactions.tolist(),
        "regions": None if ds.regions is None else list(ds.regions),
    }


def dataset_from_dict(d: dict) -> EncodedDataset:
    if d.get("version") != FORMAT_VERSION:
        raise DataError(f"encoded dataset version {d.get('version')!r}, expected {FORMAT_VERSION!r}")
    try:
        us = FeatureSchema.from_list(d["schemas"]["user"])
        its = FeatureSchema.from_list(d["schemas"]["item"])
        return EncodedDataset(
            user_features=np.array(d["user_features"], dtype=np.float64).reshape(-1, us.width),
            item_features=np.array(d["item_features"], dtype=np.float64).reshape(-1, its.width),
            interactions=np.array(d["interactions"], dtype=np.int64).reshape(-1, 2),
            user_schema=us, item_schema=its,
            user_ids=tuple(d["user_ids"]), item_ids=tuple(d["item_ids"]),
            regions=None if d.get("regions") is None else tuple(d["regions"]),
            normalization_stats=d.get("normalization_stats", {}),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed encoded dataset: missing or invalid field {exc}") from None


def save_encoded(ds: EncodedDataset, path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds)), encoding="utf-8")


def load_encoded(path) -> EncodedDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt encoded dataset {path}: {exc}") from None
    return dataset_from_dict(d)


def datasets_equal(a: EncodedDataset, b: EncodedDataset) -> bool:
    return dataset_to_dict(a) == dataset_to_dict(b) and all(
        np.array_equal(x, y) for x, y in ((a.user_features, b.user_features),
                                          (a.item_features, b.item_features),
                                          (a.interactions, b.interactions)))
