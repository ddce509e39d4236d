import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mner.core import ParameterStore, Tape, finite_difference_check
from mner.encoders import ModalityVector
from mner.fusion import (
    FusionParams,
    alpha_bounds,
    attend_modalities,
    attention_header,
    concat_fuse,
    emit_attention_report,
    tape_fuse,
)

E = math.e


def params(mods, p, W=None, b=None):
    K = len(mods)
    W = np.zeros((K, K * p)) if W is None else W
    b = np.zeros(K) if b is None else np.asarray(b, dtype=float)
    return FusionParams({mods: (W, b)})


def vecs(mods, values):
    return [ModalityVector(m, np.asarray(v, dtype=float)) for m, v in zip(mods, values)]


def test_zero_params_uniform_mean():
    xs = [[1.0, 2.0], [3.0, -4.0], [0.5, 0.5]]
    ctx, att = attend_modalities(params("wcv", 2), vecs("wcv", xs), 3)
    assert att.alpha.tolist() == [1 / 3, 1 / 3, 1 / 3]
    np.testing.assert_allclose(ctx.value, np.mean(xs, axis=0), atol=1e-15)
    assert ctx.mode == "attention" and att.modalities == "wcv"


def test_saturated_bias_three():
    _, att = attend_modalities(params("wcv", 2, b=[100, -100, -100]), vecs("wcv", np.ones((3, 2))))
    np.testing.assert_allclose(att.alpha, [E / (E + 2), 1 / (E + 2), 1 / (E + 2)], atol=1e-12)
    np.testing.assert_allclose(att.alpha, [0.5761, 0.2119, 0.2119], atol=1e-4)


def test_saturated_bias_two():
    _, att = attend_modalities(params("wc", 2, b=[100, -100]), vecs("wc", np.ones((2, 2))), 2)
    np.testing.assert_allclose(att.alpha, [E / (E + 1), 1 / (E + 1)], atol=1e-12)


def test_attention_errors():
    with pytest.raises(ValueError):
        attend_modalities(params("wc", 2), vecs("wc", [[1, 2], [1, 2, 3]]))
    with pytest.raises(ValueError):
        attend_modalities(params("wc", 2), vecs("wc", [[1, 2], [1, 2]]), K=3)
    with pytest.raises(ValueError):
        attend_modalities(params("w", 2), vecs("w", [[1, 2]]), K=1)


def test_inputs_sorted_by_tag():
    xs = {"w": [1.0, 0.0], "c": [0.0, 1.0], "v": [2.0, 2.0]}
    shuffled = [ModalityVector(m, np.array(xs[m])) for m in "vwc"]
    W = np.random.default_rng(0).normal(size=(3, 6))
    a = attend_modalities(params("wcv", 2, W=W), shuffled)
    b = attend_modalities(params("wcv", 2, W=W), vecs("wcv", [xs[m] for m in "wcv"]))
    assert a[1].alpha.tobytes() == b[1].alpha.tobytes()


def test_concat_examples():
    assert concat_fuse(vecs("wc", [[1, 2], [3, 4]])).value.tolist() == [1, 2, 3, 4]
    assert concat_fuse(vecs("wcv", np.ones((3, 2)))).value.shape == (6,)
    shuffled = [ModalityVector("v", np.array([5.0])), ModalityVector("w", np.array([1.0])),
                ModalityVector("c", np.array([3.0]))]
    assert concat_fuse(shuffled).value.tolist() == [1.0, 3.0, 5.0]
    with pytest.raises(ValueError):
        concat_fuse([])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_concat_slices_recover_inputs(seed, p):
    xs = np.random.default_rng(seed).normal(size=(3, p))
    out = concat_fuse(vecs("wcv", xs)).value
    for k in range(3):
        assert out[k * p:(k + 1) * p].tobytes() == xs[k].tobytes()


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["wc", "wcv"]), st.floats(0.01, 100))
def test_alpha_on_simplex_within_bounds(seed, mods, scale):
    K = len(mods)
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 6))
    fp = params(mods, p, W=rng.normal(0, scale, size=(K, K * p)), b=rng.normal(0, scale, size=K))
    xs = rng.normal(0, scale, size=(K, p))
    ctx, att = attend_modalities(fp, vecs(mods, xs))
    lo, hi = alpha_bounds(K)
    assert abs(att.alpha.sum() - 1.0) <= 1e-12
    assert np.all(att.alpha >= lo) and np.all(att.alpha <= hi)
    # convex hull, componentwise
    assert np.all(ctx.value >= xs.min(axis=0) - 1e-12) and np.all(ctx.value <= xs.max(axis=0) + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_zero_weight_mean_is_order_free(seed):
    xs = np.random.default_rng(seed).normal(size=(3, 4))
    a, _ = attend_modalities(params("wcv", 4), vecs("wcv", xs))
    b, _ = attend_modalities(params("wcv", 4), vecs("wcv", xs[[2, 0, 1]]))
    np.testing.assert_allclose(a.value, b.value, atol=1e-15)


@pytest.mark.parametrize("mods", ["wc", "wcv"])
def test_tape_fuse_matches_direct_and_fd(mods):
    K, p, T = len(mods), 3, 4
    rng = np.random.default_rng(K)
    store = ParameterStore({"W": rng.normal(size=(K, K * p)), "b": rng.normal(size=K),
                            "x": rng.normal(size=(K, T, p))})
    u = rng.normal(size=(T, p))

    def loss_fn(st):
        t = Tape()
        xin = t.param("x", st["x"])
        xs = [t.reshape(t.gather(xin, [k]), (T, p)) for k in range(K)]
        xbar, alpha = tape_fuse(t, xs, "attention", t.param("W", st["W"]), t.param("b", st["b"]))
        for j in range(T):
            ctx, att = attend_modalities(FusionParams({mods: (st["W"], st["b"])}),
                                         vecs(mods, st["x"][:, j]))
            assert np.allclose(t.value(xbar)[j], ctx.value, atol=1e-14)
            assert np.allclose(t.value(alpha)[j], att.alpha, atol=1e-14)
        loss = t.sum(t.mul(xbar, t.const(u)))
        return float(t.value(loss)), t.backward(loss)

    assert finite_difference_check(loss_fn, store, tol=1e-6, atol=1e-10).passed


def test_report_row_format():
    third = np.array([1 / 3, 1 / 3, 1 / 3])
    text = emit_attention_report(["x"], [third], ["O"], ["O"], "wcv")
    assert text.splitlines() == ["token\talpha_w\talpha_c\talpha_v\tpred\tgold",
                                 "x\t0.3333\t0.3333\t0.3333\tO\tO"]


def test_report_empty_and_two_modalities():
    assert emit_attention_report([], [], [], [], "wcv").splitlines() == [attention_header("wcv")]
    assert attention_header("wc") == "token\talpha_w\talpha_c\tpred\tgold"


def test_report_length_mismatch():
    with pytest.raises(ValueError):
        emit_attention_report(["a", "b"], [np.ones(3) / 3], ["O", "O"], ["O", "O"])
