import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dualfuse.engine import Rng, Tape, Tensor, grad_check, ops, precision
from dualfuse.engine.tensor import backward
from dualfuse.errors import ShapeMismatchError, UnknownVariantError
from dualfuse.fusion import (
    FULL_SCALE,
    Dims,
    DualAttentionEncoder,
    DualAttentionLayer,
    FusionModel,
    Variant,
    build_variant,
    dual_attention_layer_forward,
    encoder_forward,
    fusion_predict,
    mean_pool_concat,
)

MICRO = Dims(l_i=5, d_i=12, l_t=3, d_t=8)
VARIANTS = [v.value for v in Variant]


def micro_inputs(seed=0, dims=MICRO, batch=None):
    rng = Rng(seed)
    lead = () if batch is None else (batch,)
    return rng.normal(lead + (dims.l_t, dims.d_t)), rng.normal(lead + (dims.l_i, dims.d_i))


def test_full_scale_layer_shapes():
    layer = DualAttentionLayer(FULL_SCALE.d_t, FULL_SCALE.d_i, Rng(0))
    t, i = micro_inputs(0, FULL_SCALE)
    out_t, out_i = dual_attention_layer_forward(layer, Tensor(t), Tensor(i))
    assert out_t.shape == (77, 512) and out_i.shape == (197, 768)


def test_full_scale_pooled_vector_length():
    pooled = mean_pool_concat(Tensor(np.zeros((77, 512))), Tensor(np.zeros((197, 768))))
    assert pooled.shape == (1280,)


@pytest.mark.parametrize("variant", VARIANTS)
def test_shapes_preserved_through_layers(variant):
    enc = build_variant(variant, MICRO, Rng(1), num_layers=3, num_heads=4)
    t, i = micro_inputs(1, batch=2)
    out_t, out_i = encoder_forward(enc, Tensor(t), Tensor(i))
    assert out_t.shape == t.shape and out_i.shape == i.shape


def test_zero_inputs_with_zero_projections_give_zero_outputs():
    layer = DualAttentionLayer(MICRO.d_t, MICRO.d_i, Rng(0))
    for _, p in layer.named_parameters():
        if not _.endswith("gamma"):
            p.data = np.zeros_like(p.data)
    out_t, out_i = layer(Tensor(np.zeros((3, 8))), Tensor(np.zeros((5, 12))))
    assert np.all(out_t.data == 0) and np.all(out_i.data == 0)


def test_full_layer_matches_scripted_composition():
    layer = DualAttentionLayer(MICRO.d_t, MICRO.d_i, Rng(4), num_heads=1)
    t, i = micro_inputs(5)
    with precision("f64"):
        for _, p in layer.named_parameters():
            p.data = p.data.astype(np.float64)
        got_t, got_i = layer(Tensor(t), Tensor(i))
    want_t, want_i = oracles.full_layer(layer, t, i, heads=1)
    assert np.allclose(got_t.data, want_t, atol=1e-10)
    assert np.allclose(got_i.data, want_i, atol=1e-10)


def test_encoder_composition():
    enc = build_variant("full", MICRO, Rng(2), num_layers=2)
    t, i = map(Tensor, micro_inputs(3))
    assert encoder_forward(DualAttentionEncoder([]), t, i) == (t, i)
    one = build_variant("full", MICRO, Rng(2), num_layers=1)
    a = encoder_forward(one, t, i)
    b = dual_attention_layer_forward(one.layers[0], t, i)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))
    l1 = enc.layers[0](t, i)
    manual = enc.layers[1](*l1)
    auto = encoder_forward(enc, t, i)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(manual, auto))


@pytest.mark.parametrize("variant", VARIANTS)
def test_information_flow_matches_variant_definition(variant):
    enc = build_variant(variant, MICRO, Rng(7), num_layers=2)
    t, i = micro_inputs(8)
    assert oracles.reachability(enc, t, i) == oracles.EXPECTED_FLOW[variant]


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("dims", [MICRO, Dims(4, 16, 6, 12), FULL_SCALE])
def test_parameter_count_closed_form(variant, dims):
    model = FusionModel(dims, num_classes=7, variant=variant, num_layers=2)
    expected = 2 * oracles.layer_params(variant, dims.d_t, dims.d_i) + oracles.head_params(dims.d_t, dims.d_i, 7)
    assert model.num_parameters() == expected


@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))
@settings(max_examples=30, deadline=None)
def test_full_has_strictly_more_parameters(a, b, c):
    # TCAtt's extra image self-attention outgrows Full's MLP once d_i > ~2.2 d_t
    a = min(a, 2 * b)
    dims = Dims(3, 4 * a, 3, 4 * b)
    counts = {v: FusionModel(dims, c, v, num_layers=1).num_parameters() for v in VARIANTS}
    assert all(counts["full"] > counts[v] for v in ("nocatt", "icatt", "tcatt"))


@pytest.mark.parametrize("dims", [FULL_SCALE, Dims(12, 16, 10, 12)])
def test_full_has_more_parameters_at_working_dims(dims):
    counts = {v: FusionModel(dims, 21, v).num_parameters() for v in VARIANTS}
    assert counts["full"] == max(counts.values())
    assert sorted(counts.values()).count(counts["full"]) == 1


def test_predict_examples():
    model = FusionModel(MICRO, num_classes=1, variant="full", hidden=16)
    t, i = micro_inputs(0)
    logits = fusion_predict(model, Tensor(t), Tensor(i))
    assert logits.shape == (1,)
    assert np.allclose(ops.softmax_rows(ops.reshape(logits, (1, 1))).data, 1.0)

    model = FusionModel(MICRO, num_classes=4, variant="full", hidden=16)
    tb = np.repeat(t[None], 3, axis=0)
    ib = np.repeat(i[None], 3, axis=0)
    out = fusion_predict(model, Tensor(tb), Tensor(ib)).data
    assert out.shape == (3, 4) and np.all(out == out[0])


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_batch_permutation_equivariance(seed):
    model = FusionModel(MICRO, num_classes=3, variant="full", hidden=16, seed=1)
    t, i = micro_inputs(seed, batch=4)
    perm = Rng(seed).permutation(4)
    with precision("f64"):
        base = model(Tensor(t), Tensor(i)).data
        shuffled = model(Tensor(t[perm]), Tensor(i[perm])).data
    assert np.allclose(base[perm], shuffled, atol=1e-12)


def test_shape_and_variant_errors():
    model = FusionModel(MICRO, num_classes=3)
    with pytest.raises(ShapeMismatchError):
        model(Tensor(np.zeros((1, 3, 9))), Tensor(np.zeros((1, 5, 12))))
    with pytest.raises(UnknownVariantError):
        Variant.parse("bogus")
    with pytest.raises(UnknownVariantError):
        build_variant("half", MICRO, Rng(0))


def test_config_round_trip_rebuilds_identical_model():
    model = FusionModel(MICRO, 3, "tcatt", num_layers=1, num_heads=2, seed=5)
    clone = FusionModel.from_config(model.config())
    t, i = micro_inputs(0, batch=2)
    assert np.array_equal(model(Tensor(t), Tensor(i)).data, clone(Tensor(t), Tensor(i)).data)


@pytest.mark.parametrize("variant", VARIANTS)
def test_whole_model_gradients_two_heads(variant):
    model = FusionModel(MICRO, num_classes=3, variant=variant, num_heads=2, hidden=16, seed=2)
    t, i = micro_inputs(9, batch=2)
    labels = np.array([0, 2])

    def f():
        return ops.cross_entropy(model(Tensor(t), Tensor(i)), labels)

    with Tape() as tape:
        loss = f()
    grads = backward(loss, tape)
    named = list(model.named_parameters())
    scale = max(np.abs(grads[p]).max() for _, p in named)
    # near-uniform attention at init leaves some query/key weights with ~1e-8
    # gradients, where a relative error only measures rounding noise
    live = [(n, p) for n, p in named if np.abs(grads[p]).max() > 1e-4 * scale]
    assert len(live) >= len(named) - 4
    report = grad_check(f, [p for _, p in live], tol=1e-3, mode="f32", max_entries=6,
                        names=[n for n, _ in live])
    assert report.passed, report.to_dict()


def test_training_mode_dropout_uses_rng():
    model = FusionModel(MICRO, num_classes=3, hidden=16)
    t, i = (Tensor(a) for a in micro_inputs(0, batch=2))
    a = model(t, i, training=True, rng=Rng(1)).data
    b = model(t, i, training=True, rng=Rng(1)).data
    c = model(t, i, training=True, rng=Rng(2)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
