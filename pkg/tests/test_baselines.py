import numpy as np
import pytest

from dualfuse.baselines import (
    DENSE_UNITS,
    CnnImageModel,
    CnnTextModel,
    EarlyFusionModel,
    LateFusionModel,
    early_fusion_forward,
    io_forward,
    late_fusion_forward,
    to_forward,
    trunk_shapes,
)
from dualfuse.data import SyntheticConfig, generate_synthetic
from dualfuse.engine import Rng, Tape, Tensor, grad_check, ops
from dualfuse.errors import KernelTooLargeError, ShapeMismatchError
from dualfuse.fusion import FULL_SCALE, Dims
from dualfuse.nn import Linear
from dualfuse.training import AdamState, adam_step

SMALL = Dims(l_i=10, d_i=10, l_t=10, d_t=12)
BASELINES = [CnnImageModel, CnnTextModel, EarlyFusionModel, LateFusionModel]


def inputs(dims=SMALL, batch=2, seed=0):
    rng = Rng(seed)
    return rng.normal((batch, dims.l_t, dims.d_t)), rng.normal((batch, dims.l_i, dims.d_i))


def by_hand(h, w, filters):
    # valid k3 conv then floor pool 2, per stage
    for _ in filters:
        h, w = (h - 2) // 2, (w - 2) // 2
    return h * w * filters[-1]


def test_shape_law_single_stage_micro_grid():
    stages = trunk_shapes((8, 6), (128,))
    assert stages == [("conv1", (6, 4, 128)), ("pool1", (3, 2, 128)), ("flatten", (768,))]
    with pytest.raises(KernelTooLargeError):
        trunk_shapes((8, 6), (128, 256))


@pytest.mark.parametrize("hw", [(10, 10), (13, 17), (22, 12), (197, 768)])
def test_shape_law_two_stages(hw):
    assert trunk_shapes(hw, (128, 256))[-1][1][0] == by_hand(*hw, (128, 256))


def test_full_scale_trunk_shapes():
    # dense layers at full scale need billions of weights, so only the law is checked
    assert trunk_shapes((197, 768), (128, 256))[-1] == ("flatten", (47 * 190 * 256,))
    assert trunk_shapes((77,), (64, 128))[-1] == ("flatten", (17 * 128,))
    assert trunk_shapes((274, 512), (128, 256))[-1] == ("flatten", (67 * 126 * 256,))


def test_full_scale_early_fusion_input_is_274_by_512():
    proj = Linear(FULL_SCALE.d_i, FULL_SCALE.d_t, Rng(0))
    image = Tensor(np.zeros((1, 197, 768)))
    text = Tensor(np.zeros((1, 77, 512)))
    fused = ops.concat([proj(image), text], axis=1)
    assert fused.shape == (1, 274, 512)


@pytest.mark.parametrize("cls", BASELINES)
def test_logit_and_feature_shapes(cls):
    model = cls(SMALL, num_classes=5)
    t, i = (Tensor(a) for a in inputs(batch=3))
    assert model(t, i).shape == (3, 5)
    assert model.features(t, i).shape == (3, DENSE_UNITS[1])


def test_layer_widths():
    m = CnnImageModel(SMALL, 4)
    assert m.trunk.conv1.W.shape[-1] == 128 and m.trunk.conv2.W.shape[-1] == 256
    assert m.trunk.dense.fc1.W.shape[1] == 1024 and m.trunk.dense.fc2.W.shape[1] == 512
    t = CnnTextModel(SMALL, 4)
    assert t.trunk.conv1.W.shape[-1] == 64 and t.trunk.conv2.W.shape[-1] == 128


def test_forward_helpers_and_shape_errors():
    t, i = (Tensor(a) for a in inputs())
    assert io_forward(CnnImageModel(SMALL, 3), i).shape == (2, 3)
    assert to_forward(CnnTextModel(SMALL, 3), t).shape == (2, 3)
    with pytest.raises(ShapeMismatchError):
        io_forward(CnnImageModel(SMALL, 3), t)
    with pytest.raises(ShapeMismatchError):
        early_fusion_forward(EarlyFusionModel(SMALL, 3), i, i)


def test_single_modality_models_ignore_the_other_input():
    t, i = inputs()
    t2, i2 = inputs(seed=5)
    io, to = CnnImageModel(SMALL, 3), CnnTextModel(SMALL, 3)
    assert np.array_equal(io(Tensor(t), Tensor(i)).data, io(Tensor(t2), Tensor(i)).data)
    assert np.array_equal(to(Tensor(t), Tensor(i)).data, to(Tensor(t), Tensor(i2)).data)


def test_early_fusion_depends_on_both_inputs_and_is_deterministic():
    model = EarlyFusionModel(SMALL, 3)
    t, i = inputs()
    t2, i2 = inputs(seed=5)
    base = model(Tensor(t), Tensor(i)).data
    assert np.array_equal(base, model(Tensor(t), Tensor(i)).data)
    assert not np.allclose(base, model(Tensor(t2), Tensor(i)).data)
    assert not np.allclose(base, model(Tensor(t), Tensor(i2)).data)


def test_late_fusion_weights_start_at_half():
    model = LateFusionModel(SMALL, 3)
    assert model.alpha.data.tolist() == [0.5] and model.beta.data.tolist() == [0.5]
    names = dict(model.named_parameters())
    assert "alpha" in names and "beta" in names


def test_late_fusion_is_the_weighted_sum_of_branches():
    model = LateFusionModel(SMALL, 3)
    t, i = (Tensor(a) for a in inputs())
    f_img, f_txt = (x.data for x in model.branch_features(t, i))
    model.alpha.data = np.array([0.3], dtype=np.float32)
    model.beta.data = np.array([1.7], dtype=np.float32)
    fused = model.features(t, i).data
    assert np.allclose(fused, 0.3 * f_img + 1.7 * f_txt, atol=1e-6)


def test_late_fusion_beta_zero_gates_out_text():
    model = LateFusionModel(SMALL, 3)
    model.beta.data = np.zeros(1, dtype=np.float32)
    t, i = inputs()
    t2, _ = inputs(seed=9)
    a = late_fusion_forward(model, Tensor(t), Tensor(i)).data
    b = late_fusion_forward(model, Tensor(t2), Tensor(i)).data
    assert np.array_equal(a, b)


def test_late_fusion_doubling_alpha_doubles_image_component():
    model = LateFusionModel(SMALL, 3)
    model.beta.data = np.zeros(1, dtype=np.float32)
    t, i = (Tensor(a) for a in inputs())
    once = model.features(t, i).data
    model.alpha.data = model.alpha.data * 2
    assert np.array_equal(model.features(t, i).data, 2 * once)


def test_late_fusion_scalar_gradients():
    model = LateFusionModel(SMALL, 3, seed=1)
    t, i = inputs(batch=2, seed=3)
    labels = np.array([0, 2])

    def f():
        return ops.cross_entropy(model(Tensor(t), Tensor(i)), labels)

    report = grad_check(f, [model.alpha, model.beta], tol=1e-3, mode="f32", names=["alpha", "beta"])
    assert report.passed, report.to_dict()
    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    assert model.alpha in grads and model.beta in grads


@pytest.mark.parametrize("cls", BASELINES)
def test_trunk_gradients_micro(cls):
    model = cls(SMALL, 3, seed=2)
    t, i = inputs(batch=2, seed=4)
    labels = np.array([1, 2])

    def f():
        return ops.cross_entropy(model(Tensor(t), Tensor(i)), labels)

    report = grad_check(f, model.parameters(), tol=1e-3, mode="f32", max_entries=4)
    assert report.passed, report.to_dict()


@pytest.mark.parametrize("cls", BASELINES)
def test_fits_two_separable_classes_within_200_steps(cls):
    cfg = SyntheticConfig(num_classes=2, per_class=16, dims=SMALL, noise=0.1)
    ds = generate_synthetic(cfg, seed=0)
    model = cls(SMALL, 2, seed=0)
    params = model.parameters()
    state = AdamState([p.shape for p in params])
    text, image = Tensor(ds.text), Tensor(ds.image)
    acc = 0.0
    for _ in range(200):
        with Tape() as tape:
            logits = model(text, image, training=True, rng=Rng(0))
            loss = ops.cross_entropy(logits, ds.labels)
        acc = float(np.mean(np.argmax(logits.data, axis=1) == ds.labels))
        if acc == 1.0:
            break
        grads = tape.backward(loss)
        adam_step(state, params, [grads[p] for p in params], 1e-3)
    assert acc == 1.0


@pytest.mark.parametrize("cls", BASELINES)
def test_config_round_trip(cls):
    model = cls(SMALL, 4, seed=3)
    clone = cls.from_config(model.config())
    t, i = (Tensor(a) for a in inputs())
    assert np.array_equal(model(t, i).data, clone(t, i).data)
