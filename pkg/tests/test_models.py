import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastlink import nn
from contrastlink.data_model import LabeledPair, RecordPair
from contrastlink.embeddings import EmbeddingStore
from contrastlink.gradcheck import toy_gradient_check, toy_model, toy_pair
from contrastlink.models import (VARIANTS, CheckpointError, Model, ModelConfig, StaleCacheError,
                                 backward, closed_form_param_count, forward_score, init_model,
                                 load_checkpoint, omega_concat_mlp, omega_self_attention, parameter_shapes,
                                 phi_attention, phi_sum, psi_attention, psi_sum, save_checkpoint,
                                 twin_sum_baseline_forward)


def small(variant, **kw):
    base = dict(m=2, d=6, sim_dif_dim=5, hidden_dim=7, d1_trainable_q=3, d1_context=4, d2=4, seed=0)
    base.update(kw)
    return init_model(ModelConfig(variant, **base))


class TestParameterCount:
    def test_sum_m10(self):
        model = init_model(ModelConfig("sum", m=10))
        assert model.num_parameters() == 713_730
        assert 20 * (300 * 64 + 64) + (1280 * 256 + 256) + (256 * 2 + 2) == 713_730

    def test_sum_m1(self):
        cfg = ModelConfig("sum", m=1)
        expected = 2 * (300 * 64 + 64) + (128 * 256 + 256) + (256 * 2 + 2)
        assert closed_form_param_count(cfg) == init_model(cfg).num_parameters() == expected == 72_066

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("m,d", [(1, 8), (3, 20), (10, 300)])
    def test_closed_form_equals_registry(self, variant, m, d):
        cfg = ModelConfig(variant, m=m, d=d)
        assert closed_form_param_count(cfg) == sum(math.prod(s) for _, s in parameter_shapes(cfg))

    def test_registry_names_unique(self):
        for variant in VARIANTS:
            names = [n for n, _ in parameter_shapes(ModelConfig(variant, m=3))]
            assert len(names) == len(set(names))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ModelConfig("sum", m=0)
        with pytest.raises(ValueError):
            ModelConfig("lstm", m=1)
        with pytest.raises(ValueError):
            ModelConfig("context-attention", m=1, d1_context=32, d2=64)


class TestInit:
    def test_deterministic(self):
        a, b = small("attention"), small("attention")
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_biases_zero_and_glorot_bound(self):
        model = small("sum")
        assert not model.params["psi.0.bias"].any()
        limit = math.sqrt(6 / (5 + 6))
        assert np.abs(model.params["psi.0.weight"]).max() <= limit


class TestSumBlocks:
    def test_empty_shared_is_relu_bias(self):
        model = small("sum")
        model.params["psi.0.bias"][:] = [-1, 0.5, 2, -3, 0]
        np.testing.assert_array_equal(psi_sum(model, 0, []), [0, 0.5, 2, 0, 0])

    def test_single_vector(self):
        model = small("sum")
        x = np.arange(6.0)
        p = model.params
        np.testing.assert_allclose(psi_sum(model, 1, [x]), np.maximum(p["psi.1.weight"] @ x + p["psi.1.bias"], 0))

    def test_permutation_invariant(self):
        model = small("sum")
        rng = np.random.default_rng(0)
        vecs = list(rng.normal(size=(4, 6)))
        np.testing.assert_allclose(psi_sum(model, 0, vecs), psi_sum(model, 0, vecs[::-1]), atol=1e-12)

    def test_phi_symmetric_and_linear_in_sum(self):
        model = small("sum")
        e1, e2 = np.random.default_rng(1).normal(size=(2, 6))
        np.testing.assert_allclose(phi_sum(model, 0, [e1], [e2]), phi_sum(model, 0, [e2], [e1]))
        np.testing.assert_allclose(phi_sum(model, 0, [e1], [e2]), phi_sum(model, 0, [e1 + e2], []), atol=1e-12)

    def test_identical_records_dif_is_relu_bias(self):
        model = small("sum")
        for j in range(2):
            model.params[f"phi.{j}.bias"][:] = np.linspace(-1, 1, 5)
        pair = RecordPair(("ink tank", "canon"), ("ink tank", "canon"))
        for info in model.inspect(model.embed_pair(pair, EmbeddingStore(6)).groups()):
            np.testing.assert_array_equal(info["dif"], np.maximum(np.linspace(-1, 1, 5), 0))


class TestAttentionBlocks:
    def test_single_vector_psi(self):
        model = small("attention")
        x = np.random.default_rng(2).normal(size=6)
        np.testing.assert_allclose(psi_attention(model, 0, [x]), model.params["psi.0.w_value"] @ x)

    def test_empty_groups(self):
        model = small("attention")
        np.testing.assert_array_equal(psi_attention(model, 0, []), np.zeros(4))
        np.testing.assert_array_equal(phi_attention(model, 0, [], []), np.zeros(4))

    def test_one_side_empty(self):
        model = small("attention")
        vecs = list(np.random.default_rng(3).normal(size=(3, 6)))
        np.testing.assert_allclose(phi_attention(model, 0, vecs, []), phi_attention(model, 0, [], vecs))
        np.testing.assert_allclose(phi_attention(model, 0, vecs, []), psi_like(model, "phi.0", vecs))

    def test_zero_context_averages(self):
        model = small("context-attention")
        vecs = np.random.default_rng(4).normal(size=(3, 6))
        out = phi_attention(model, 0, list(vecs), [], context=np.zeros(4))
        np.testing.assert_allclose(out, (model.params["phi.0.w_value"] @ vecs.T).mean(axis=1))

    def test_context_mode_enforced(self):
        with pytest.raises(ValueError):
            phi_attention(small("context-attention"), 0, [], [])
        with pytest.raises(ValueError):
            phi_attention(small("attention"), 0, [], [], context=np.zeros(4))


def psi_like(model, prefix, vecs):
    """Attention of one group computed step by step."""
    p = model.params
    X = np.stack(vecs).T
    q = p[f"{prefix}.query"]
    s = (p[f"{prefix}.w_key"] @ X).T @ q / math.sqrt(len(q))
    w = np.exp(s - s.max())
    return p[f"{prefix}.w_value"] @ X @ (w / w.sum())


class TestOmega:
    def test_zero_input(self):
        model = small("sum", m=1)
        p = model.params
        p["mlp.0.bias"][:] = np.linspace(-1, 1, 7)
        expected = p["mlp.1.weight"] @ np.maximum(p["mlp.0.bias"], 0) + p["mlp.1.bias"]
        np.testing.assert_allclose(omega_concat_mlp(model, [np.zeros(10)]), expected)

    def test_hand_instance(self):
        model = init_model(ModelConfig("sum", m=1, d=1, sim_dif_dim=1, hidden_dim=2))
        p = model.params
        p["mlp.0.weight"][:] = [[1, -1], [2, 0]]
        p["mlp.0.bias"][:] = [0, -1]
        p["mlp.1.weight"][:] = [[1, 1], [0, 3]]
        p["mlp.1.bias"][:] = [0.5, 0]
        # hidden = relu([1-2, 2-1]) = (0, 1); logits = (0+1+0.5, 3)
        np.testing.assert_allclose(omega_concat_mlp(model, [np.array([1.0, 2.0])]), [1.5, 3.0])

    def test_wrong_count(self):
        with pytest.raises(ValueError):
            omega_concat_mlp(small("sum"), [np.zeros(10)])

    def test_self_attention_m1(self):
        model = small("attention", m=1)
        r = np.random.default_rng(5).normal(size=8)
        _, O = omega_self_attention(model, [r], return_outputs=True)
        np.testing.assert_allclose(O[0], model.params["omega.w_value"] @ r)

    def test_self_attention_permutation(self):
        model = small("attention", m=3)
        rows = list(np.random.default_rng(6).normal(size=(3, 8)))
        _, O = omega_self_attention(model, rows, return_outputs=True)
        _, O2 = omega_self_attention(model, rows[::-1], return_outputs=True)
        np.testing.assert_allclose(O2, O[::-1], atol=1e-12)

    def test_self_attention_oracle(self):
        model = small("attention", m=2)
        p = model.params
        rows = np.random.default_rng(7).normal(size=(2, 8))
        _, O = omega_self_attention(model, list(rows), return_outputs=True)
        for j in range(2):
            q = p["omega.w_query"] @ rows[j]
            scores = np.array([p["omega.w_key"] @ rows[i] @ q for i in range(2)]) / 2.0
            w = np.exp(scores) / np.exp(scores).sum()
            np.testing.assert_allclose(O[j], sum(w[i] * p["omega.w_value"] @ rows[i] for i in range(2)))

    def test_self_attention_wrong_variant(self):
        with pytest.raises(ValueError):
            omega_self_attention(small("sum"), [np.zeros(10)] * 2)


PAIR = LabeledPair(("canon black ink tank 8 pack", "canon"), ("canon ink tank cyan 6 pack", "canon"), 0)


class TestForwardBackward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_parameters_score_half(self, variant):
        model = small(variant)
        for p in model.params.values():
            p[...] = 0.0
        score, _ = forward_score(model, model.embed_pair(PAIR, EmbeddingStore(6)))
        assert score == 0.5

    @pytest.mark.parametrize("variant", ["sum", "attention"])
    def test_record_swap_invariance(self, variant):
        model = small(variant)
        store = EmbeddingStore(6)
        a = forward_score(model, model.embed_pair(PAIR, store))[0]
        b = forward_score(model, model.embed_pair(PAIR.swapped(), store))[0]
        assert abs(a - b) < 1e-12

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_check(self, variant, seed):
        assert toy_gradient_check(variant, seed) < 1e-4

    def test_sum_gradient_check_small_eps(self):
        assert toy_gradient_check("sum", 0, eps=1e-5) < 1e-4

    def test_fault_injection_detected(self):
        assert toy_gradient_check("sum", 0, fault=0.1) == pytest.approx(0.1 / 1.1, rel=1e-3)

    def test_stale_cache(self):
        model = small("sum")
        _, cache = forward_score(model, model.embed_pair(PAIR, EmbeddingStore(6)))
        model.apply_gradients({k: np.ones_like(v) for k, v in model.params.items()}, nn.AdamState())
        with pytest.raises(StaleCacheError):
            backward(model, cache, 1)

    def test_saturated_gradient_vanishes(self):
        model = small("sum")
        model.params["mlp.1.bias"][:] = [0.0, 60.0]
        _, cache = forward_score(model, model.embed_pair(PAIR, EmbeddingStore(6)))
        grads = backward(model, cache, 1)
        assert max(np.abs(g).max() for g in grads.values()) < 1e-20

    def test_phi_gradient_accumulates_both_sides(self):
        model = small("attention", m=1)
        rng = np.random.default_rng(8)
        left, right, G = rng.normal(size=(6, 2)), rng.normal(size=(6, 3)), rng.normal(size=4)
        unit = nn.AttentionUnit(model.params["phi.0.w_key"], model.params["phi.0.w_value"],
                                model.params["phi.0.query"])
        gl = unit.backward(unit.forward(left)[1], G)
        gr = unit.backward(unit.forward(right)[1], G)
        summed = {k: gl[k] + gr[k] for k in ("w_key", "w_value", "query")}

        def f():
            return float(G @ phi_attention(model, 0, list(left.T), list(right.T)))

        for k, p in (("w_key", unit.w_key), ("w_value", unit.w_value), ("query", unit.query)):
            num = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + 1e-6
                up = f()
                p[i] = old - 1e-6
                num[i] = (up - f()) / 2e-6
                p[i] = old
            np.testing.assert_allclose(summed[k], num, rtol=1e-5, atol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(VARIANTS))
    def test_score_in_unit_interval(self, seed, variant):
        model = toy_model(variant, seed)
        pair = toy_pair(np.random.default_rng(seed), 2)
        s = forward_score(model, model.embed_pair(pair, EmbeddingStore(8)))[0]
        assert 0.0 <= s <= 1.0

    def test_batch_matches_single(self):
        model = small("context-attention")
        store = EmbeddingStore(6)
        pairs = [PAIR, PAIR.swapped(), LabeledPair(("a", "b"), ("a", "b"), 1)]
        batch = model.scores(model.encode_pairs(pairs, store).batch())
        single = [forward_score(model, model.embed_pair(p, store))[0] for p in pairs]
        np.testing.assert_allclose(batch, single, atol=1e-12)


class TestTwin:
    def test_identical_records_zero_features(self):
        model = small("twin-sum")
        pair = RecordPair(("ink tank black", "canon"), ("ink tank black", "canon"))
        for info in model.inspect(model.embed_pair(pair, EmbeddingStore(6)).groups()):
            assert not info["dif"].any()

    def test_score_range(self):
        model = small("twin-sum")
        assert 0 <= twin_sum_baseline_forward(model, model.embed_pair(PAIR, EmbeddingStore(6))) <= 1

    def test_wrong_variant(self):
        with pytest.raises(ValueError):
            twin_sum_baseline_forward(small("sum"), None)


class TestCheckpoint:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_round_trip(self, tmp_path, variant):
        model = toy_model(variant, 3)
        model.metadata.update({"epoch": 4, "valid_f1": 81.5, "seed": 3})
        save_checkpoint(model, tmp_path / "a.ckpt")
        loaded = load_checkpoint(tmp_path / "a.ckpt")
        store = EmbeddingStore(8)
        ep = loaded.embed_pair(PAIR, store)
        assert forward_score(loaded, ep)[0] == forward_score(model, model.embed_pair(PAIR, store))[0]
        assert loaded.metadata == model.metadata
        save_checkpoint(loaded, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_variant_mismatch(self, tmp_path):
        save_checkpoint(small("sum"), tmp_path / "s.ckpt")
        with pytest.raises(CheckpointError, match="variant"):
            load_checkpoint(tmp_path / "s.ckpt", variant="attention")

    def test_truncated(self, tmp_path):
        save_checkpoint(small("sum"), tmp_path / "s.ckpt")
        data = (tmp_path / "s.ckpt").read_bytes()
        (tmp_path / "s.ckpt").write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match="corrupt"):
            load_checkpoint(tmp_path / "s.ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x").write_bytes(b"hello")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x")

    def test_params_are_copies(self):
        model = small("sum")
        clone = Model(model.config, model.params)
        clone.params["psi.0.weight"][0, 0] += 1
        assert clone.params["psi.0.weight"][0, 0] != model.params["psi.0.weight"][0, 0]
