import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causpref import autodiff as ad
from causpref.predictor import (PredictorParams, PredictorTape, bpr_loss, bpr_node, score,
                                score_node)
from tests.conftest import max_grad_error

LN2 = 0.6931471805599453
SOFTPLUS_NEG2 = 0.1269280110429725     # log(1 + e^-2), mpmath at 30 digits


def test_zero_params_score_zero():
    p = PredictorParams.init("neumf", 3, 2, embed=4, seed=0)
    for v in p.w.values():
        v[...] = 0.0
    rng = np.random.default_rng(0)
    assert np.all(score(p, rng.normal(size=(5, 3)), rng.normal(size=(5, 2))) == 0.0)


def test_linear_affine_identity():
    p = PredictorParams.init("linear", 2, 2, embed=3, seed=0)
    p.w["phi.combine"][...] = 0.0
    p.w["phi.lin_w"][...] = 1.0
    p.w["phi.lin_b"][...] = 0.0
    assert score(p, [[1.0, 0.5]], [[1.5, 0.5]])[0] == 3.5


def test_width_mismatch_rejected():
    p = PredictorParams.init("neumf", 3, 2)
    with pytest.raises(ad.ShapeError, match=r"\(2, 2\).*\(3, 2\)"):
        score(p, np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        PredictorParams.init("deep", 3, 2)


@pytest.mark.parametrize("variant", ["neumf", "linear"])
def test_score_gradients(variant, rng):
    p = PredictorParams.init(variant, 4, 3, embed=5, seed=1)
    u = rng.normal(size=(32, 4))
    v = rng.normal(size=(32, 3))
    weights = rng.normal(size=(32, 1))
    arrays = dict(p.w)
    arrays["users"] = u

    def build():
        tape = PredictorTape(p)
        un = ad.var(u)
        root = ad.scalar_sum(ad.hadamard(score_node(tape, un, ad.constant(v)), ad.constant(weights)))
        return tape, un, root

    tape, un, root = build()
    ad.backward(root)
    grads = {**tape.grads(), "users": un.grad}
    err = max_grad_error(lambda: float(ad.forward(build()[2])[0, 0]), grads, arrays, rng)
    assert err < 1e-4


def test_bpr_examples():
    assert abs(bpr_loss([1.0], [1.0])[0] - LN2) < 1e-12
    assert abs(bpr_loss([2.0], [0.0])[0] - SOFTPLUS_NEG2) < 1e-12
    val, dpos, dneg = bpr_loss([0.0, 0.0], [0.0, 0.0])
    np.testing.assert_allclose(dpos, [-0.25, -0.25])
    np.testing.assert_allclose(dneg, [0.25, 0.25])
    with pytest.raises(ValueError):
        bpr_loss([], [])


def test_bpr_gradient_finite_difference(rng):
    pos, neg = rng.normal(size=8), rng.normal(size=8)
    _, dpos, dneg = bpr_loss(pos, neg)
    arrays = {"pos": pos, "neg": neg}
    err = max_grad_error(lambda: bpr_loss(arrays["pos"], arrays["neg"])[0],
                         {"pos": dpos, "neg": dneg}, arrays, rng)
    assert err < 1e-4


@given(st.floats(-500, 500))
@settings(max_examples=200, deadline=None)
def test_bpr_stable_and_positive(x):
    val, dpos, _ = bpr_loss([x], [0.0])
    assert np.isfinite(val) and np.isfinite(dpos).all()
    assert val >= 0.0
    if x < 30:
        assert val > 0.0


def test_bpr_monotone_in_margin():
    margins = np.linspace(-20, 20, 401)
    vals = [bpr_loss([m], [0.0])[0] for m in margins]
    assert np.all(np.diff(vals) < 0)
    assert bpr_loss([60.0], [0.0])[0] < 1e-25


def test_score_deterministic_and_round_trip():
    p = PredictorParams.init("neumf", 3, 2, seed=4)
    q = PredictorParams.from_dict(p.to_dict())
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))
    np.testing.assert_array_equal(score(p, u, v), score(q, u, v))
    np.testing.assert_array_equal(np.argsort(score(p, u, v)), np.argsort(score(p, u, v)))


def test_bpr_node_is_batch_mean():
    p, n = ad.constant([[1.0], [3.0]]), ad.constant([[1.0], [1.0]])
    expected = (LN2 + SOFTPLUS_NEG2) / 2
    assert abs(bpr_node(p, n).value[0, 0] - expected) < 1e-12
