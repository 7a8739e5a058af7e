import json

import numpy as np
import pytest

from causpref import autodiff as ad
from causpref.dag import DagHyper
from causpref.errors import DataError, NumericalError
from causpref.splits import SplitSpec, make_split
from causpref.synthetic import SyntheticSpec, synth_generate
from causpref.trainer import (PRESETS, TrainConfig, _grads, batch_objective, init_model, load_model,
                              model_to_dict, preset, save_model, train)
from tests.conftest import max_grad_error


@pytest.fixture(scope="module")
def small():
    ds, _ = synth_generate(SyntheticSpec(n_users=300, n_items=100, n_interactions=1000, seed=0))
    return ds, make_split(ds, SplitSpec(seed=0))


def _quick(**kw):
    return {"max_epochs": 3, "warmup_steps": 20, "batch_size": 128, **kw}


def test_presets_flag_algebra():
    base = preset("neumf")
    assert base.zeta == 0 and not base.uses_dag and not base.use_aps
    assert not preset("causpref-").use_rs_constraints and preset("causpref-").use_dag_regularizer
    assert not preset("causpref--").use_dag_regularizer
    assert preset("causpref", lr=0.5).lr == 0.5
    # a preset's defining flags win over overrides
    assert preset("neumf", use_aps=True).use_aps is False
    with pytest.raises(ValueError):
        preset("bogus")
    assert set(PRESETS) == {"causpref", "causpref-", "causpref--", "neumf"}


def test_joint_objective_gradient(small, rng):
    ds, _ = small
    hyper = DagHyper()
    cfg = TrainConfig(dag_hidden=8, dag_layers=3)
    model = init_model(ds, hyper, cfg)
    # shrink the item -> user block as warm-up would; at init the xi term makes the
    # objective ~4e4 and central differences lose the small head gradients to round-off
    m = model.dag.hidden
    model.dag.w1[ds.q_u:, :ds.q_u * m] *= 1e-4
    idx = rng.choice(ds.n_interactions, 32, replace=False)
    pairs = ds.interactions[idx]
    u, v = ds.user_features[pairs[:, 0]], ds.item_features[pairs[:, 1]]
    neg = ds.item_features[rng.integers(0, len(ds.item_features), 32)]   # frozen negatives
    root, _, leaves = batch_objective(model.dag, model.phi, hyper, cfg, u, v, neg)
    ad.backward(root)
    grads = _grads(leaves, model.dag)
    arrays = {**model.phi.arrays(), **model.dag.arrays()}
    # masked entries are fixed; entries within a few steps of zero sit on the L1 kink
    mask = model.dag.self_loop_mask()

    def value():
        return float(batch_objective(model.dag, model.phi, hyper, cfg, u, v, neg)[0].value[0, 0])

    per_key = max(1, 50 // len(arrays) + 1)
    err = max_grad_error(value, grads, arrays, rng, per_key=per_key,
                         skip=lambda k, i: k == "dag.w1" and (mask[i] or abs(arrays[k][i]) < 1e-4))
    assert err < 1e-4


def test_smoothed_loss_non_increasing(small):
    ds, split = small
    _, hist = train(ds, split, config=preset("causpref", seed=0, max_epochs=20, patience=100,
                                                batch_size=128))
    loss = np.array([r.loss for r in hist.records])
    assert len(loss) == 20
    smooth = np.convolve(loss, np.ones(5) / 5, "valid")
    assert np.all(np.diff(smooth) <= 0)


def test_neumf_has_no_dag(small):
    ds, split = small
    model, hist = train(ds, split, config=preset("neumf", **_quick()))
    assert model.dag is None and all(r.dag == 0.0 for r in hist.records)


def test_training_is_deterministic(small, tmp_path):
    ds, split = small
    cfg = preset("causpref", **_quick(seed=3))
    a, ha = train(ds, split, config=cfg)
    b, hb = train(ds, split, config=cfg)
    assert json.dumps(model_to_dict(a)) == json.dumps(model_to_dict(b))
    assert [r.loss for r in ha.records] == [r.loss for r in hb.records]


def test_save_load_round_trip(small, tmp_path):
    ds, split = small
    model, _ = train(ds, split, config=preset("causpref", **_quick()))
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path, ds)
    users, items = np.arange(10), np.arange(20)
    np.testing.assert_array_equal(model.scorer(ds)(users, items), back.scorer(ds)(users, items))


def test_tampered_version_rejected(small, tmp_path):
    ds, split = small
    model, _ = train(ds, split, config=preset("neumf", **_quick()))
    d = model_to_dict(model)
    d["version"] = "v0"
    path = tmp_path / "m.json"
    path.write_text(json.dumps(d))
    with pytest.raises(DataError, match="version"):
        load_model(path)


def test_width_mismatch_names_both(small, tmp_path):
    ds, split = small
    model, _ = train(ds, split, config=preset("neumf", **_quick()))
    save_model(model, tmp_path / "m.json")
    other, _ = synth_generate(SyntheticSpec(q_v=4, n_users=50, n_items=30, n_interactions=100))
    with pytest.raises(DataError, match="q_v = 5.*q_v = 4"):
        load_model(tmp_path / "m.json", other)


def test_nan_loss_aborts(small):
    ds, split = small
    cfg = preset("neumf", **_quick())
    model = init_model(ds, DagHyper(), cfg)
    model.phi.w["phi.combine"][0, 0] = np.nan
    with pytest.raises(NumericalError, match="epoch 0, batch 0"):
        train(ds, split, config=cfg, model=model)


def test_empty_train_split_rejected(small):
    ds, split = small
    split = type(split)(np.zeros(0, np.int64), split.val, split.test, split.spec)
    with pytest.raises(DataError):
        train(ds, split, config=preset("neumf", **_quick()))
