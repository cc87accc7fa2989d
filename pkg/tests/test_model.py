import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstaf import tensor as T
from sstaf.model import (ABLATIONS, ClassifierHead, ModelConfig, MultiHeadAttention, SpatialAttention,
                         SpectralAttention, SstafModel, parameter_count)
from sstaf.tensor import ConfigError, DimensionError, Tensor
from sstaf.train import cross_entropy

from conftest import numeric_grad, rel_err

TOY = dict(channels=4, f_bins=9, t_frames=5, d_h=8, heads=2, d_ff=32, n_classes=3)


def toy_model(**kw):
    return SstafModel(ModelConfig(**{**TOY, **kw}))


def _randomize(model, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = p.data + rng.normal(0, scale, p.shape)
    return model


def test_default_forward_shape(rng):
    model = SstafModel()
    out = model(rng.uniform(0, 2, (16, 64, 65, 9)))
    assert out.shape == (16, 3)


def test_parameter_count_closed_form():
    lin = lambda m, n: m * n + n
    spectral = lin(65, 32) + lin(32, 65)
    spatial = lin(64, 32) + lin(32, 64)
    proj = lin(64 * 65, 64)
    layer = 2 * (2 * 64) + 3 * 64 * 64 + 8 * 8 * 64 + lin(64, 256) + lin(256, 64)
    head = lin(64, 32) + lin(32, 3)
    expected = spectral + spatial + proj + 2 * layer + head
    assert expected == 376388
    assert parameter_count(SstafModel()) == expected


def test_zero_init_gives_uniform_weights(rng):
    x = rng.uniform(0, 1000, (3, 64, 65, 9))
    w = SstafModel().attention_weights(x)
    np.testing.assert_allclose(w["spectral"], 1 / 65, atol=1e-15)
    np.testing.assert_allclose(w["spatial"], 1 / 64, atol=1e-15)


def test_zero_parameter_spectral_stage(rng):
    att = SpectralAttention(65, 32, 0.1, rng)
    for p in att.parameters():
        p.data[...] = 0
    x = rng.standard_normal((2, 3, 65, 4))
    np.testing.assert_allclose(att(Tensor(x)).data, x / 65, atol=1e-15)


def test_zero_parameter_spatial_stage(rng):
    att = SpatialAttention(6, 3, 0.1, rng)
    for p in att.parameters():
        p.data[...] = 0
    x = rng.standard_normal((2, 6, 5, 4))
    np.testing.assert_allclose(att(Tensor(x)).data, x / 6, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_ratio_structure(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 3.0, (2, 5, 7, 3))
    spec = SpectralAttention(7, 3, 0.1, rng, zero_init=False)
    ratio = spec(Tensor(x)).data / x
    np.testing.assert_allclose(ratio, ratio[:, :1, :, :1] * np.ones_like(ratio), rtol=1e-12)
    spat = SpatialAttention(5, 2, 0.1, rng, zero_init=False)
    ratio = spat(Tensor(x)).data / x
    np.testing.assert_allclose(ratio, ratio[:, :, :1, :1] * np.ones_like(ratio), rtol=1e-12)
    for w in (spec.weights(Tensor(x)).data, spat.weights(Tensor(x)).data):
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(-1), 1, atol=1e-6)


def test_spatial_relabeling_symmetry(rng):
    att = SpatialAttention(5, 3, 0.1, rng, zero_init=False)
    perm = rng.permutation(5)
    twin = SpatialAttention(5, 3, 0.1, rng, zero_init=False)
    twin.fc1.weight.data = att.fc1.weight.data[perm]
    twin.fc1.bias.data = att.fc1.bias.data.copy()
    twin.fc2.weight.data = att.fc2.weight.data[:, perm]
    twin.fc2.bias.data = att.fc2.bias.data[perm]
    x = rng.uniform(0.1, 2, (2, 5, 4, 3))
    np.testing.assert_allclose(twin(Tensor(x[:, perm])).data, att(Tensor(x)).data[:, perm], atol=1e-14)


def test_projection_examples(rng):
    model = toy_model()
    zero = model.project(Tensor(np.zeros((2, 4, 9, 5)))).data
    np.testing.assert_allclose(zero, np.broadcast_to(model.proj.bias.data, (2, 5, 8)))
    x = rng.standard_normal((1, 4, 9, 5))
    x[..., 3] = x[..., 1]
    h = model.project(Tensor(x)).data
    np.testing.assert_array_equal(h[0, 3], h[0, 1])
    assert SstafModel().proj.weight.shape == (4160, 64)


def naive_mha(mha, x):
    """Per-head loop reference for the summed per-head output maps."""
    b, t, d = x.shape
    dk = mha.d_k
    out = np.zeros((b, t, d))
    for bi in range(b):
        for i in range(mha.heads):
            cols = slice(i * dk, (i + 1) * dk)
            q = x[bi] @ mha.w_q.data[:, cols]
            k = x[bi] @ mha.w_k.data[:, cols]
            v = x[bi] @ mha.w_v.data[:, cols]
            for r in range(t):
                s = np.array([q[r] @ k[c] for c in range(t)]) / np.sqrt(dk)
                a = np.exp(s - s.max())
                a /= a.sum()
                z = sum(a[c] * v[c] for c in range(t))
                out[bi, r] += z @ mha.w_o.data[i]
    return out


def test_mha_matches_naive_loop(rng):
    mha = MultiHeadAttention(4, 2, rng)
    x = rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(mha(Tensor(x)).data, naive_mha(mha, x), atol=1e-12, rtol=0)
    np.testing.assert_allclose(mha.last_attention.sum(-1), 1, atol=1e-12)


def test_mha_single_position(rng):
    mha = MultiHeadAttention(8, 2, rng)
    x = rng.standard_normal((1, 1, 8))
    out = mha(Tensor(x)).data
    np.testing.assert_array_equal(mha.last_attention, 1.0)
    ref = sum((x[0] @ mha.w_v.data[:, i * 4:(i + 1) * 4]) @ mha.w_o.data[i] for i in range(2))
    np.testing.assert_allclose(out[0], ref, atol=1e-14)


def test_mha_rejects_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 3, rng)
    with pytest.raises(ConfigError):
        ModelConfig(d_h=10, heads=3).validate()


@pytest.mark.parametrize("t", [1, 9, 15])
def test_encoder_preserves_shape(rng, t):
    model = SstafModel()
    h = rng.standard_normal((2, t, 64))
    assert model.encode(Tensor(h)).shape == (2, t, 64)


def test_encoder_time_equivariance(rng):
    model = _randomize(toy_model())
    h = rng.standard_normal((2, 5, 8))
    perm = rng.permutation(5)
    a = model.encode(Tensor(h[:, perm])).data
    b = model.encode(Tensor(h)).data[:, perm]
    np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_logits_invariant_to_time_permutation(seed):
    rng = np.random.default_rng(seed)
    model = _randomize(toy_model(zero_init_attention=False), seed)
    x = rng.uniform(0, 2, (2, 4, 9, 5))
    perm = rng.permutation(5)
    np.testing.assert_allclose(model(x[..., perm]).data, model(x).data, atol=1e-9)


def test_eval_mode_deterministic(rng):
    model = _randomize(toy_model())
    x = rng.uniform(0, 2, (3, 4, 9, 5))
    np.testing.assert_array_equal(model(x).data, model(x).data)


def test_classifier_head_examples(rng):
    head = ClassifierHead(8, 3, 0.2, rng)
    h = rng.standard_normal((2, 4, 8))
    dup = np.repeat(h, 2, axis=1)
    np.testing.assert_allclose(head(Tensor(dup)).data, head(Tensor(h)).data, atol=1e-14)
    zero = head(Tensor(np.zeros((1, 3, 8)))).data
    ref = np.maximum(head.fc1.bias.data, 0) @ head.fc2.weight.data + head.fc2.bias.data
    np.testing.assert_allclose(zero[0], ref, atol=1e-14)


def test_all_stages_off_is_project_then_classify(rng):
    model = toy_model(use_spectral=False, use_spatial=False, use_transformer=False)
    x = rng.uniform(0, 2, (2, 4, 9, 5))
    np.testing.assert_array_equal(model(x).data, model.classify(model.project(Tensor(x))).data)


@pytest.mark.parametrize("variant,prefix", [("no-spectral", "spectral."), ("no-spatial", "spatial."),
                                            ("no-transformer", "encoder.")])
def test_ablation_removes_exactly_that_stage(variant, prefix):
    full = dict(SstafModel().named_parameters())
    ablated = dict(SstafModel(ModelConfig(**ABLATIONS[variant])).named_parameters())
    assert set(full) - set(ablated) == {n for n in full if n.startswith(prefix)}
    assert set(ablated) <= set(full)


def test_shape_errors(rng):
    model = toy_model()
    with pytest.raises(DimensionError):
        model(rng.standard_normal((2, 5, 9, 5)))
    with pytest.raises(DimensionError):
        model(rng.standard_normal((4, 9, 5)))


def test_any_t_accepted(rng):
    model = toy_model()
    for t in (1, 3, 12):
        assert model(rng.uniform(0, 1, (2, 4, 9, t))).shape == (2, 3)


def test_save_load_roundtrip(tmp_path, rng):
    model = _randomize(toy_model())
    model.save(tmp_path / "m")
    back = SstafModel.load(tmp_path / "m")
    x = rng.uniform(0, 1, (2, 4, 9, 5))
    np.testing.assert_array_equal(back(x).data, model(x).data)
    assert back.cfg == model.cfg


def test_load_state_mismatch():
    model = toy_model()
    state = model.state_dict()
    state.pop("head.fc2.bias")
    with pytest.raises(ValueError, match="missing"):
        model.load_state_dict(state)


def test_training_mode_dropout_changes_output(rng):
    model = _randomize(toy_model())
    x = rng.uniform(0, 1, (4, 4, 9, 5))
    assert not np.array_equal(model(x, training=True).data, model(x).data)


def test_fusion_product_flag(rng):
    x = rng.uniform(0.1, 1, (2, 4, 9, 5))
    plain = _randomize(toy_model(), 3)
    fused = _randomize(toy_model(explicit_fusion_product=True), 3)
    spec = plain.spectral(Tensor(x)).data
    np.testing.assert_allclose(fused.attend(Tensor(x)).data, plain.attend(Tensor(x)).data * spec, atol=1e-14)


def test_small_gradient_check(rng):
    model = _randomize(toy_model(attn_dropout=0, transformer_dropout=0, head_dropout=0,
                                 zero_init_attention=False), 5, 0.3)
    x = rng.uniform(0, 1, (2, 4, 9, 5))
    y = np.array([0, 2])
    loss = cross_entropy(model(x, training=True), y)
    loss.backward()
    for name in ("spectral.fc2.weight", "encoder.layers.1.attn.w_o", "head.fc1.bias"):
        p = dict(model.named_parameters())[name]

        def f(a, p=p):
            old = p.data
            p.data = a
            with T.no_grad():
                v = cross_entropy(model(x), y).item()
            p.data = old
            return v

        assert rel_err(p.grad, numeric_grad(f, [p.data.copy()], 0)) < 1e-5
