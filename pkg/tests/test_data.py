import json

import numpy as np
import pytest

from causpref.data import (FeatureSchema, dataset_from_dict, dataset_to_dict, datasets_equal,
                           load_encoded, load_raw, save_encoded)
from causpref.errors import DataError

SCHEMA = {
    "user": [{"name": "age", "kind": "numeric"},
             {"name": "city", "kind": "categorical", "categories": ["a", "b", "c"]}],
    "item": [{"name": "price", "kind": "numeric"}],
}


def _write(tmp_path, users, items, inter):
    paths = []
    for name, text in (("users.csv", users), ("items.csv", items), ("interactions.csv", inter)):
        p = tmp_path / name
        p.write_text(text)
        paths.append(p)
    return paths


@pytest.fixture
def raw(tmp_path):
    return _write(tmp_path,
                  "id,age,city\nu1,1,a\nu2,3,c\n",
                  "id,price\ni1,10\ni2,20\ni3,30\n",
                  "user_id,item_id,region\nu1,i1,r0\nu2,i3,r1\nu1,i1,r0\nu2,i2,r1\n")


def test_zscore_and_onehot(raw):
    ds = load_raw(*raw, SCHEMA)
    np.testing.assert_allclose(ds.user_features[:, 0], [-1.0, 1.0])
    np.testing.assert_array_equal(ds.user_features[:, 1:], [[1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(ds.item_features[:, 0], np.array([-1, 0, 1]) * np.sqrt(1.5))
    assert ds.q_u == 4 and ds.q_v == 1


def test_duplicate_interactions_collapse(raw):
    ds = load_raw(*raw, SCHEMA)
    assert ds.n_interactions == 3
    assert ds.regions == ("r0", "r1", "r1")


def test_fit_region_statistics(raw):
    ds = load_raw(*raw, SCHEMA, fit_region="r1")
    # only u2 (age 3) is in r1, so its z-score is 0
    assert ds.user_features[1, 0] == 0.0


def test_round_trip(raw, tmp_path):
    ds = load_raw(*raw, SCHEMA)
    save_encoded(ds, tmp_path / "ds.json")
    back = load_encoded(tmp_path / "ds.json")
    assert datasets_equal(ds, back)
    assert back.schema_hash() == ds.schema_hash()


def test_truncated_file(raw, tmp_path):
    ds = load_raw(*raw, SCHEMA)
    path = tmp_path / "ds.json"
    save_encoded(ds, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(DataError):
        load_encoded(path)


def test_short_row_rejected(tmp_path):
    paths = _write(tmp_path, "id,age,city\nu1,1\n", "id,price\ni1,1\n", "user_id,item_id\nu1,i1\n")
    with pytest.raises(DataError, match="fields"):
        load_raw(*paths, SCHEMA)


def test_version_gate(raw):
    d = dataset_to_dict(load_raw(*raw, SCHEMA))
    d["version"] = "v0"
    with pytest.raises(DataError, match="version"):
        dataset_from_dict(d)


def test_unknown_id(tmp_path):
    paths = _write(tmp_path, "id,age,city\nu1,1,a\n", "id,price\ni1,1\n", "user_id,item_id\nu9,i1\n")
    with pytest.raises(DataError, match="u9"):
        load_raw(*paths, SCHEMA)


def test_unseen_category_is_zero_vector(tmp_path, caplog):
    paths = _write(tmp_path, "id,age,city\nu1,1,z\nu2,2,a\n", "id,price\ni1,1\n",
                   "user_id,item_id\nu1,i1\n")
    ds = load_raw(*paths, SCHEMA)
    assert ds.unseen_categories == 1
    np.testing.assert_array_equal(ds.user_features[0, 1:], [0, 0, 0])


def test_schema_file_and_mismatch(raw, tmp_path):
    sp = tmp_path / "schema.json"
    sp.write_text(json.dumps(SCHEMA))
    assert load_raw(*raw, sp).q_u == 4
    bad = {"user": [{"name": "age", "kind": "numeric"}], "item": SCHEMA["item"]}
    with pytest.raises(DataError):
        load_raw(*raw, bad)


def test_schema_validation():
    with pytest.raises(DataError):
        FeatureSchema.from_list([{"name": "a", "kind": "numeric"}, {"name": "a", "kind": "numeric"}])
    with pytest.raises(DataError):
        FeatureSchema.from_list([{"name": "a", "kind": "ordinal"}])
    assert FeatureSchema.numeric(["x", "y"]).width == 2
